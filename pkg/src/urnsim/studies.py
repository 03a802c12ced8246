"""Verification studies: decay of the poissonization gap, LIL-type bounds,
rate ratios, mean convergence, and the exact-series inequality sweeps.

Almost-sure limits are not finitely observable; each study replaces one
with an explicit finite-grid decay or threshold criterion (documented in
the study docstrings) and reports margins alongside the pass flags.  Every
study is deterministic given (config, master seed).
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig
from .distributions import (
    CellDistribution,
    DistributionError,
    build_distribution,
)
from .moments import (
    RegimeFlag,
    asym_mean_coeff,
    exact_mean,
    exact_var,
    mean_difference,
    mean_increment_check,
    normalizer,
    variance_sandwich_check,
)
from .simulate import CheckpointGrid, CoupledTrajectory, run_coupled

SCHEMA_VERSION = 1


@dataclass
class StudyResult:
    """Aggregated outcome of one study."""

    study: str
    checkpoints: list[float]
    stats: dict[str, list[float]]
    pass_flags: dict[str, bool]
    margins: dict[str, float]
    meta: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.pass_flags.values())

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "study": self.study,
            "passed": self.passed,
            "pass_flags": self.pass_flags,
            "margins": self.margins,
            "checkpoints": list(self.checkpoints),
            "stats": {k: list(v) for k, v in self.stats.items()},
            "meta": self.meta,
        }

    def csv_rows(self) -> tuple[list[str], list[list]]:
        header = ["study", "checkpoint", "statistic", "value"]
        rows = []
        for name, series in sorted(self.stats.items()):
            for x, v in zip(self.checkpoints, series):
                rows.append([self.study, x, name, v])
        return header, rows


def aggregate(indexed_rows: Sequence[tuple[int, Sequence[float]]]) -> dict[str, np.ndarray]:
    """Order-stable per-checkpoint quantiles over seed-indexed rows.

    Rows are sorted by their index first, so any permutation of the input
    yields identical output.
    """
    if not indexed_rows:
        raise ValueError("aggregate needs at least one row")
    ordered = sorted(indexed_rows, key=lambda pair: pair[0])
    data = np.asarray([row for _, row in ordered], dtype=np.float64)
    return {
        "median": np.median(data, axis=0),
        "q05": np.quantile(data, 0.05, axis=0),
        "q95": np.quantile(data, 0.95, axis=0),
    }


# ------------------------------------------------------------ trajectories

def _one_trajectory(args) -> tuple[int, dict]:
    spec_map, positions, k_max, master_seed, index = args
    from .distributions import DistributionSpec
    d = build_distribution(DistributionSpec.from_mapping(spec_map))
    grid = CheckpointGrid(positions=positions, k_max=k_max)
    traj = run_coupled(d, grid, seed=(master_seed, index))
    return index, {
        "K": traj.K, "rstar_fixed": traj.rstar_fixed,
        "rstar_poisson": traj.rstar_poisson,
        "r_fixed": traj.r_fixed, "r_poisson": traj.r_poisson,
    }


def generate_trajectories(cfg: ExperimentConfig, d: CellDistribution,
                          grid: CheckpointGrid) -> list[CoupledTrajectory]:
    """Seed-indexed trajectories; fan out to workers when configured.

    Aggregation is by trajectory index, so results do not depend on
    worker scheduling.
    """
    positions = np.asarray(grid.positions, dtype=np.int64)
    out: list[CoupledTrajectory | None] = [None] * cfg.seeds
    if cfg.workers > 1 and cfg.seeds > 1:
        args = [(cfg.distribution.as_mapping(), grid.positions, grid.k_max,
                 cfg.master_seed, i) for i in range(cfg.seeds)]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for index, payload in pool.map(_one_trajectory, args, chunksize=1):
                out[index] = CoupledTrajectory(
                    seed=index, positions=positions, k_max=grid.k_max, **payload)
    else:
        for i in range(cfg.seeds):
            out[i] = run_coupled(d, grid, seed=(cfg.master_seed, i))
    return out  # type: ignore[return-value]


def _grid_for(cfg: ExperimentConfig) -> CheckpointGrid:
    return CheckpointGrid.logspaced(cfg.n_min, cfg.n_max, cfg.points, cfg.k_max)


# ------------------------------------------------------------- studies

def study_coupling_decay(cfg: ExperimentConfig,
                         trajectories: list[CoupledTrajectory] | None = None) -> StudyResult:
    """Decay of b(n) * |fixed-n count - poissonized count| along the grid.

    Pass (per k): the seed-median at n_max is <= decay_factor times its
    value at n_min and below the absolute threshold.  The scaled coupling
    gap b(n)|K - n| is reported as a consistency column.
    """
    cfg.validate()
    d = build_distribution(cfg.distribution)
    grid = _grid_for(cfg)
    if trajectories is None:
        trajectories = generate_trajectories(cfg, d, grid)
    profile = d.profile()
    ns = np.asarray(grid.positions, dtype=np.float64)
    b_per_k = {}
    for k in cfg.ks:
        spec = normalizer(d.theta, k, profile)
        b_per_k[k] = np.array([spec.b(float(n)) for n in ns])
    stats: dict[str, list[float]] = {}
    flags: dict[str, bool] = {}
    margins: dict[str, float] = {}
    for k in cfg.ks:
        rows = []
        gap_rows = []
        for traj in trajectories:
            diff = np.abs(traj.rstar_fixed[:, k - 1] - traj.rstar_poisson[:, k - 1])
            rows.append((traj.seed if isinstance(traj.seed, int) else traj.seed[-1],
                         b_per_k[k] * diff))
            gap_rows.append((rows[-1][0], b_per_k[k] * traj.gap()))
        agg = aggregate(rows)
        gap_agg = aggregate(gap_rows)
        med = agg["median"]
        stats[f"scaled_gap_median_k{k}"] = med.tolist()
        stats[f"scaled_gap_q95_k{k}"] = agg["q95"].tolist()
        stats[f"scaled_clock_gap_median_k{k}"] = gap_agg["median"].tolist()
        first, last = float(med[0]), float(med[-1])
        flags[f"decay_k{k}"] = bool(last <= cfg.decay_factor * first
                                    and last <= cfg.decay_abs_threshold)
        margins[f"decay_margin_k{k}"] = cfg.decay_factor * first - last
        margins[f"final_median_k{k}"] = last
    return StudyResult(
        study="coupling_decay", checkpoints=ns.tolist(), stats=stats,
        pass_flags=flags, margins=margins,
        meta={"distribution": cfg.distribution.as_mapping(),
              "seeds": cfg.seeds, "master_seed": cfg.master_seed,
              "decay_factor": cfg.decay_factor})


def study_lil_bound(cfg: ExperimentConfig,
                    trajectories: list[CoupledTrajectory] | None = None) -> StudyResult:
    """Normalized centered counts against the sqrt(2 * var * ln n) envelope.

    Centering uses exact fixed-n means; envelopes use exact poissonized
    variances.  Pass (per k, both count types): at least ``pass_fraction``
    of seeds keep their maximum over checkpoints n >= n_floor at or below
    1 + slack.  Refuses theta = 0 families (their mean grows too slowly
    for the envelope's precondition).
    """
    cfg.validate()
    d = build_distribution(cfg.distribution)
    if d.theta == 0.0:
        raise DistributionError(
            "bound study requires theta > 0: the per-k poissonized mean must "
            "outgrow ln n, which fails for geometric-type tails")
    grid = _grid_for(cfg)
    if trajectories is None:
        trajectories = generate_trajectories(cfg, d, grid)
    ns = np.asarray(grid.positions, dtype=np.float64)
    keep = ns >= cfg.n_floor
    stats: dict[str, list[float]] = {}
    flags: dict[str, bool] = {}
    margins: dict[str, float] = {}
    lnn = np.log(ns)
    for k in cfg.ks:
        mean_star = np.array([exact_mean(d, float(n), k, star=True, law="binomial")[0]
                              for n in grid.positions])
        mean_exact = np.array([exact_mean(d, float(n), k, star=False, law="binomial")[0]
                               for n in grid.positions])
        var_star = np.array([exact_var(d, float(n), k, star=True)[0]
                             for n in grid.positions])
        var_exact = np.array([exact_var(d, float(n), k, star=False)[0]
                              for n in grid.positions])
        den_star = np.sqrt(2.0 * var_star * lnn)
        den_exact = np.sqrt(2.0 * var_exact * lnn)
        for label, mean_vec, den_vec, col in (
                ("at_least", mean_star, den_star, "rstar_fixed"),
                ("exactly", mean_exact, den_exact, "r_fixed")):
            per_seed = []
            rows = []
            for traj in trajectories:
                series = getattr(traj, col)[:, k - 1].astype(np.float64)
                ratio = np.abs(series - mean_vec) / den_vec
                per_seed.append(float(ratio[keep].max()))
                rows.append((traj.seed if isinstance(traj.seed, int) else traj.seed[-1],
                             ratio))
            agg = aggregate(rows)
            stats[f"ratio_median_{label}_k{k}"] = agg["median"].tolist()
            stats[f"ratio_q95_{label}_k{k}"] = agg["q95"].tolist()
            frac = float(np.mean(np.asarray(per_seed) <= 1.0 + cfg.slack))
            flags[f"bound_{label}_k{k}"] = bool(frac >= cfg.pass_fraction)
            margins[f"seed_fraction_{label}_k{k}"] = frac
            margins[f"worst_seed_{label}_k{k}"] = float(max(per_seed))
    return StudyResult(
        study="lil_bound", checkpoints=ns.tolist(), stats=stats,
        pass_flags=flags, margins=margins,
        meta={"distribution": cfg.distribution.as_mapping(),
              "seeds": cfg.seeds, "master_seed": cfg.master_seed,
              "slack": cfg.slack, "n_floor": cfg.n_floor})


def study_rate_ratio(cfg: ExperimentConfig,
                     increments_fn: Callable | None = None) -> StudyResult:
    """Uniform closeness of Poisson increment ratios to one.

    For each t, the witness window floor is v = t^rate_v_exponent and the
    statistic is max over the doubling window grid {v, 2v, ..., t} of
    |increment/width - 1|.  Pass: seed-medians decrease along t_values and
    the final median is below rate_threshold.
    """
    cfg.validate()
    t_values = cfg.rate_t_values
    medians = []
    stats: dict[str, list[float]] = {"deviation_median": [], "deviation_q95": []}
    for t in t_values:
        v = t ** cfg.rate_v_exponent
        widths = [v]
        while widths[-1] * 2.0 < t:
            widths.append(widths[-1] * 2.0)
        widths.append(float(t))
        edges = np.concatenate([[0.0], np.asarray(widths)])
        seg = np.diff(edges)
        devs = []
        for i in range(cfg.seeds):
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=(cfg.master_seed, int(t), i)))
            if increments_fn is None:
                incs = rng.poisson(seg)
            else:
                incs = increments_fn(seg, rng)
            cum = np.cumsum(incs)
            devs.append(float(np.max(np.abs(cum / np.asarray(widths) - 1.0))))
        medians.append(float(np.median(devs)))
        stats["deviation_median"].append(medians[-1])
        stats["deviation_q95"].append(float(np.quantile(devs, 0.95)))
    decreasing = all(b < a for a, b in zip(medians, medians[1:]))
    final_ok = medians[-1] < cfg.rate_threshold
    return StudyResult(
        study="rate_ratio", checkpoints=list(t_values), stats=stats,
        pass_flags={"medians_decreasing": bool(decreasing),
                    "final_below_threshold": bool(final_ok)},
        margins={"final_median": medians[-1],
                 "threshold": cfg.rate_threshold},
        meta={"seeds": cfg.seeds, "master_seed": cfg.master_seed,
              "v_exponent": cfg.rate_v_exponent})


def study_mean_convergence(cfg: ExperimentConfig) -> StudyResult:
    """Fixed-n vs poissonized exact means, plus exact/asymptotic ratios.

    The absolute fixed-n minus poissonized differences (at-least-1 count
    and each exactly-k count) must be nonincreasing for n >= n_floor with
    final value below convergence_factor times the initial one.  At n_max
    the exact/asymptotic mean ratios must sit in ratio_band (theta > 0;
    for theta = 0 the ratio must instead trend to zero).
    """
    cfg.validate()
    d = build_distribution(cfg.distribution)
    grid = _grid_for(cfg)
    ns = np.asarray(grid.positions, dtype=np.float64)
    keep = ns >= cfg.n_floor
    stats: dict[str, list[float]] = {}
    flags: dict[str, bool] = {}
    margins: dict[str, float] = {}

    def _check_decay(label: str, series: np.ndarray) -> None:
        stats[f"abs_diff_{label}"] = np.abs(series).tolist()
        sub = np.abs(series[keep])
        slack = 1e-9 * max(1.0, float(sub[0]))
        monotone = bool(np.all(np.diff(sub) <= slack))
        final_ok = bool(sub[-1] < cfg.convergence_factor * sub[0])
        flags[f"nonincreasing_{label}"] = monotone
        flags[f"final_small_{label}"] = final_ok
        margins[f"final_over_initial_{label}"] = float(sub[-1] / sub[0]) if sub[0] else 0.0

    diffs1 = np.array([mean_difference(d, int(n), 1, star=True)[0] for n in grid.positions])
    _check_decay("at_least_1", diffs1)
    for k in cfg.ks:
        dk = np.array([mean_difference(d, int(n), k, star=False)[0] for n in grid.positions])
        _check_decay(f"exactly_{k}", dk)

    n_max = float(grid.positions[-1])
    count_max = d.counting_function(n_max)
    if d.theta > 0.0:
        lo, hi = cfg.ratio_band
        for k in cfg.ks:
            for star in (True, False):
                coeff = asym_mean_coeff(d.theta, k, star)
                if isinstance(coeff, RegimeFlag):
                    continue
                value, _ = exact_mean(d, n_max, k, star)
                ratio = value / (coeff * count_max)
                label = f"ratio_{'at_least' if star else 'exactly'}_{k}"
                flags[f"band_{label}"] = bool(lo <= ratio <= hi)
                margins[label] = float(ratio)
    else:
        # theta = 0: the exactly-k means are negligible against the
        # counting function, so their scaled ratios must trend to zero
        ratios = np.array([exact_mean(d, float(n), 1, star=False)[0]
                           / max(d.counting_function(float(n)), 1)
                           for n in grid.positions])
        stats["count_scaled_mean"] = ratios.tolist()
        flags["theta0_ratio_trend"] = bool(ratios[-1] < 0.5 * ratios[0])
        margins["theta0_final_ratio"] = float(ratios[-1])
    return StudyResult(
        study="mean_convergence", checkpoints=ns.tolist(), stats=stats,
        pass_flags=flags, margins=margins,
        meta={"distribution": cfg.distribution.as_mapping(),
              "n_floor": cfg.n_floor,
              "convergence_factor": cfg.convergence_factor})


_INCREMENT_RULES: tuple[tuple[str, Callable[[float], float]], ...] = (
    ("sqrt_n", lambda n: math.sqrt(n)),
    ("n_pow_06", lambda n: n ** 0.6),
    ("n_over_log", lambda n: n / math.log(n)),
)


def study_increment_bound(cfg: ExperimentConfig) -> StudyResult:
    """Exact-series sweep of the poissonized mean increment inequality
    over the grid (n >= n_floor), window rules sqrt(n), n^0.6, n/ln n, and
    each configured k.  Pass: the inequality holds everywhere."""
    cfg.validate()
    d = build_distribution(cfg.distribution)
    grid = _grid_for(cfg)
    ns = [n for n in grid.positions if n >= cfg.n_floor]
    stats: dict[str, list[float]] = {}
    flags: dict[str, bool] = {}
    margins: dict[str, float] = {}
    for rule_name, rule in _INCREMENT_RULES:
        for k in cfg.ks:
            rel_margins = []
            ok = True
            for n in ns:
                chk = mean_increment_check(d, int(n), rule(float(n)), k)
                ok = ok and chk.holds
                rel_margins.append(chk.margin / chk.rhs if chk.rhs else 0.0)
            stats[f"rel_margin_{rule_name}_k{k}"] = rel_margins
            flags[f"holds_{rule_name}_k{k}"] = bool(ok)
            margins[f"min_rel_margin_{rule_name}_k{k}"] = float(min(rel_margins))
    return StudyResult(
        study="increment_bound", checkpoints=[float(n) for n in ns],
        stats=stats, pass_flags=flags, margins=margins,
        meta={"distribution": cfg.distribution.as_mapping(),
              "n_floor": cfg.n_floor})


def study_variance_sandwich(cfg: ExperimentConfig) -> StudyResult:
    """Exact-series sweep of the three poissonized variance inequalities
    over the grid and each configured k.  Pass: all margins positive."""
    cfg.validate()
    d = build_distribution(cfg.distribution)
    grid = _grid_for(cfg)
    ns = list(grid.positions)
    stats: dict[str, list[float]] = {}
    flags: dict[str, bool] = {}
    margins: dict[str, float] = {}
    for k in cfg.ks:
        lower, upper, strict = [], [], []
        for n in ns:
            m = variance_sandwich_check(d, int(n), k)
            lower.append(m.lower_margin)
            upper.append(m.upper_margin)
            strict.append(m.strict_margin)
        stats[f"lower_margin_k{k}"] = lower
        stats[f"upper_margin_k{k}"] = upper
        stats[f"strict_margin_k{k}"] = strict
        flags[f"sandwich_k{k}"] = bool(min(lower) >= 0 and min(upper) >= 0
                                       and min(strict) > 0)
        margins[f"min_margin_k{k}"] = float(min(min(lower), min(upper), min(strict)))
    return StudyResult(
        study="variance_sandwich", checkpoints=[float(n) for n in ns],
        stats=stats, pass_flags=flags, margins=margins,
        meta={"distribution": cfg.distribution.as_mapping()})


def estimate_theta(trajectory: CoupledTrajectory) -> float:
    """Crude regular-variation exponent estimate from the final at-least-1
    count: log(count)/log(n).  Uses the fixed-n columns only."""
    if trajectory.positions.size == 0:
        raise ValueError("empty trajectory")
    n_last = int(trajectory.positions[-1])
    if n_last < 100:
        raise ValueError("need a final checkpoint with n >= 100")
    occupied = int(trajectory.rstar_fixed[-1, 0])
    if occupied < 1:
        raise ValueError("no occupied cells recorded")
    return math.log(occupied) / math.log(n_last)


STUDIES: dict[str, Callable[[ExperimentConfig], StudyResult]] = {
    "theorem1": study_coupling_decay,
    "corollary1": study_lil_bound,
    "prop1": study_rate_ratio,
    "remark1": study_mean_convergence,
    "lemma2": study_increment_bound,
    "lemma5": study_variance_sandwich,
}


def run_study(name: str, cfg: ExperimentConfig) -> StudyResult:
    try:
        fn = STUDIES[name]
    except KeyError:
        raise ValueError(f"unknown study {name!r}; expected one of {sorted(STUDIES)}")
    return fn(cfg)


def write_study_outputs(result: StudyResult, out_dir, stem: str) -> tuple[str, str]:
    """Write <stem>.csv and <stem>.json under out_dir; returns the paths."""
    import csv as _csv
    from pathlib import Path
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    header, rows = result.csv_rows()
    try:
        with open(csv_path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
        with open(json_path, "w") as fh:
            json.dump(result.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except Exception:
        for path in (csv_path, json_path):
            Path(path).unlink(missing_ok=True)
        raise
    return str(csv_path), str(json_path)
