"""Streaming occupancy simulation with coupled fixed-n / poissonized reads.

One i.i.d. cell stream is read at the deterministic checkpoints n_i and at
K_i = P(n_i) (a unit-rate Poisson process evaluated on the grid).  Reading
the same monotone occupancy profile at both positions realizes the joint
law of the fixed-n and poissonized counts while keeping their difference
pathwise bounded by |K_i - n_i|.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .distributions import CellDistribution

# Cells below this index live in a dense count array; rarer, larger indices
# go to a hash map.  16 MB of int32 per live occupancy state.
_DENSE_LIMIT = 1 << 22
_BLOCK = 1 << 19


@dataclass(frozen=True)
class SnapshotRow:
    """Occupancy profile at one stream position."""

    ball_count: int
    rstar: tuple[int, ...]  # index k-1 -> cells with >= k balls, k = 1..k_max
    r: tuple[int, ...]      # index k-1 -> cells with exactly k balls


class OccupancyState:
    """Sparse per-cell counts plus the at-least-k profile, k <= k_max.

    Internally tracks k_max + 1 thresholds so rows of exactly-k counts are
    available up to k_max.
    """

    def __init__(self, k_max: int = 5, dense_limit: int = _DENSE_LIMIT):
        if k_max < 1:
            raise ValueError("k_max must be >= 1")
        self.k_max = k_max
        self.dense_limit = dense_limit
        self._dense = np.zeros(dense_limit, dtype=np.int32)
        self._sparse: dict[int, int] = {}
        # rstar[k] for k = 1..k_max+1 at indices 1..k_max+1
        self._rstar = np.zeros(k_max + 2, dtype=np.int64)
        self.ball_count = 0

    def count_of(self, cell: int) -> int:
        if cell < self.dense_limit:
            return int(self._dense[cell])
        return self._sparse.get(cell, 0)

    def add_ball(self, cell: int) -> None:
        """Throw one ball into the given cell."""
        if cell < 1:
            raise ValueError("cell index must be >= 1")
        if cell < self.dense_limit:
            new = int(self._dense[cell]) + 1
            self._dense[cell] = new
        else:
            new = self._sparse.get(cell, 0) + 1
            self._sparse[cell] = new
        if new <= self.k_max + 1:
            self._rstar[new] += 1
        self.ball_count += 1

    def add_cells(self, cells: np.ndarray) -> None:
        """Vectorized ball block; equivalent to add_ball per entry."""
        kmax1 = self.k_max + 1
        dense_mask = cells < self.dense_limit
        dense = cells[dense_mask]
        if dense.size:
            uniq, mult = np.unique(dense, return_counts=True)
            old = self._dense[uniq].astype(np.int64)
            new = old + mult
            for k in range(1, kmax1 + 1):
                self._rstar[k] += int(np.count_nonzero((old < k) & (new >= k)))
            self._dense[uniq] = new.astype(np.int32)
        rare = cells[~dense_mask]
        if rare.size:
            sparse = self._sparse
            rstar = self._rstar
            for c in rare.tolist():
                new = sparse.get(c, 0) + 1
                sparse[c] = new
                if new <= kmax1:
                    rstar[new] += 1
        self.ball_count += int(cells.size)

    def rstar(self, k: int) -> int:
        """Number of cells holding at least k balls (k <= k_max + 1)."""
        if not (1 <= k <= self.k_max + 1):
            raise ValueError(f"k must be in 1..{self.k_max + 1}")
        return int(self._rstar[k])

    def snapshot(self) -> SnapshotRow:
        rs = tuple(int(v) for v in self._rstar[1:self.k_max + 1])
        r = tuple(int(self._rstar[k] - self._rstar[k + 1]) for k in range(1, self.k_max + 1))
        return SnapshotRow(ball_count=self.ball_count, rstar=rs, r=r)

    def _profile_row(self) -> np.ndarray:
        return self._rstar[1:self.k_max + 2].copy()


@dataclass(frozen=True)
class CheckpointGrid:
    """Strictly increasing ball-count checkpoints and the profile depth."""

    positions: tuple[int, ...]
    k_max: int = 5

    def __post_init__(self):
        if len(self.positions) < 1:
            raise ValueError("grid needs at least one checkpoint")
        if self.positions[0] < 1:
            raise ValueError("checkpoints start at n >= 1")
        if any(b <= a for a, b in zip(self.positions, self.positions[1:])):
            raise ValueError("checkpoints must be strictly increasing")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")

    @staticmethod
    def logspaced(n_min: int, n_max: int, points: int, k_max: int = 5) -> "CheckpointGrid":
        raw = np.unique(np.round(np.exp(np.linspace(
            np.log(n_min), np.log(n_max), points))).astype(np.int64))
        return CheckpointGrid(positions=tuple(int(v) for v in raw), k_max=k_max)


def poisson_increments(grid: CheckpointGrid,
                       rng: np.random.Generator) -> np.ndarray:
    """K_i = P(n_i): cumulative Poisson draws over the grid increments."""
    pos = np.asarray(grid.positions, dtype=np.float64)
    inc = np.diff(np.concatenate([[0.0], pos]))
    return np.cumsum(rng.poisson(inc)).astype(np.int64)


@dataclass(frozen=True)
class CoupledTrajectory:
    """Joint fixed-n / poissonized profile readings from one ball stream."""

    seed: int
    positions: np.ndarray       # n_i
    K: np.ndarray               # P(n_i)
    k_max: int
    rstar_fixed: np.ndarray     # shape (m, k_max), column k-1 = at-least-k
    rstar_poisson: np.ndarray
    r_fixed: np.ndarray         # exactly-k rows
    r_poisson: np.ndarray

    def gap(self) -> np.ndarray:
        """|K_i - n_i| per checkpoint."""
        return np.abs(self.K - self.positions)

    def coupling_violations(self) -> int:
        """Number of (i, k) entries breaking |Delta R*| <= |K - n|."""
        gap = self.gap()[:, None]
        return int((np.abs(self.rstar_fixed - self.rstar_poisson) > gap).sum())


def _trajectory_rng(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    # Child streams: one for the Poisson clock, one for cell draws, split
    # from a SeedSequence so trajectories are reproducible and independent.
    root = np.random.SeedSequence(entropy=seed)
    clock, cells = root.spawn(2)
    return np.random.default_rng(clock), np.random.default_rng(cells)


def run_coupled(d: CellDistribution, grid: CheckpointGrid, seed: int,
                block: int = _BLOCK,
                dense_limit: int = _DENSE_LIMIT,
                increments_fn: Callable[[CheckpointGrid, np.random.Generator], np.ndarray] | None = None,
                ) -> CoupledTrajectory:
    """Stream one trajectory, snapshotting the profile at {n_i} and {K_i}.

    The total number of draws is max(n_m, K_m).  ``increments_fn`` replaces
    the Poisson clock (a testing hook; e.g. forcing K_i = n_i makes both
    columns identical).
    """
    clock_rng, cell_rng = _trajectory_rng(seed)
    inc_fn = increments_fn if increments_fn is not None else poisson_increments
    K = np.asarray(inc_fn(grid, clock_rng), dtype=np.int64)
    positions = np.asarray(grid.positions, dtype=np.int64)
    schedule = np.unique(np.concatenate([positions, K]))
    state = OccupancyState(k_max=grid.k_max, dense_limit=dense_limit)
    snaps: dict[int, np.ndarray] = {}
    done = 0
    for stop in schedule.tolist():
        while done < stop:
            take = min(block, stop - done)
            state.add_cells(d.draw_cells(cell_rng, take))
            done += take
        snaps[stop] = state._profile_row()
    kmax = grid.k_max
    rsf = np.stack([snaps[int(n)] for n in positions])
    rsp = np.stack([snaps[int(k)] for k in K])
    return CoupledTrajectory(
        seed=seed,
        positions=positions,
        K=K,
        k_max=kmax,
        rstar_fixed=rsf[:, :kmax],
        rstar_poisson=rsp[:, :kmax],
        r_fixed=rsf[:, :kmax] - rsf[:, 1:kmax + 1],
        r_poisson=rsp[:, :kmax] - rsp[:, 1:kmax + 1],
    )


def snapshot(state: OccupancyState) -> SnapshotRow:
    return state.snapshot()
