import json
import math

import numpy as np
import pytest

from urnsim import (
    CheckpointGrid,
    DistributionError,
    DistributionSpec,
    ExperimentConfig,
    StudyResult,
    aggregate,
    estimate_theta,
    run_coupled,
    run_study,
    write_study_outputs,
)
from urnsim.studies import (
    generate_trajectories,
    study_coupling_decay,
    study_increment_bound,
    study_lil_bound,
    study_mean_convergence,
    study_rate_ratio,
    study_variance_sandwich,
)

ZIPF = DistributionSpec(family="zipf", s=2.0)
GEO = DistributionSpec(family="geometric", q=0.5)


def small_cfg(**kw):
    base = dict(distribution=ZIPF, n_min=1_000, n_max=50_000, points=7,
                ks=(1, 2), seeds=12, master_seed=7)
    base.update(kw)
    return ExperimentConfig(**base)


class TestAggregate:
    def test_single_row(self):
        out = aggregate([(0, [1.0, 2.0, 3.0])])
        assert out["median"].tolist() == [1.0, 2.0, 3.0]
        assert out["q05"].tolist() == [1.0, 2.0, 3.0]

    def test_constant_rows(self):
        rows = [(i, [4.0, 4.0]) for i in range(9)]
        out = aggregate(rows)
        assert np.ptp(out["q95"] - out["q05"]) == 0.0

    def test_permutation_invariant(self):
        rows = [(i, [float(i), float(i * i)]) for i in range(11)]
        shuffled = [rows[i] for i in (3, 0, 10, 5, 1, 7, 2, 9, 4, 8, 6)]
        a = aggregate(rows)
        b = aggregate(shuffled)
        for key in a:
            assert np.array_equal(a[key], b[key])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])


class TestCouplingDecay:
    def test_structure_and_clock_column(self):
        cfg = small_cfg()
        res = study_coupling_decay(cfg)
        assert res.study == "coupling_decay"
        assert set(res.pass_flags) == {"decay_k1", "decay_k2"}
        assert len(res.stats["scaled_gap_median_k1"]) == len(res.checkpoints)
        assert "scaled_clock_gap_median_k1" in res.stats

    def test_forced_equal_clock_gives_zero(self, zipf2):
        cfg = small_cfg(seeds=5)
        grid = CheckpointGrid.logspaced(cfg.n_min, cfg.n_max, cfg.points, cfg.k_max)
        forced = lambda g, rng: np.asarray(g.positions, dtype=np.int64)
        trajs = [run_coupled(zipf2, grid, seed=(7, i), increments_fn=forced)
                 for i in range(cfg.seeds)]
        res = study_coupling_decay(cfg, trajectories=trajs)
        assert all(v == 0.0 for v in res.stats["scaled_gap_median_k1"])
        assert res.pass_flags["decay_k1"]  # 0 <= 0.5 * 0

    def test_scaling_monotone_in_b(self):
        # the scaled statistic can only shrink under a smaller normalizer
        cfg = small_cfg(seeds=6)
        res = study_coupling_decay(cfg)
        med = np.asarray(res.stats["scaled_gap_median_k1"])
        clock = np.asarray(res.stats["scaled_clock_gap_median_k1"])
        assert np.all(med <= clock + 1e-12)


class TestLilBound:
    def test_zipf_small_run(self):
        cfg = small_cfg(n_max=20_000, points=6, seeds=15)
        res = study_lil_bound(cfg)
        for k in (1, 2):
            for label in ("at_least", "exactly"):
                assert res.margins[f"seed_fraction_{label}_k{k}"] >= 0.8
        assert all(np.isfinite(res.stats["ratio_median_at_least_k1"]))

    def test_refuses_theta_zero(self):
        cfg = small_cfg(distribution=GEO)
        with pytest.raises(DistributionError):
            study_lil_bound(cfg)

    def test_single_checkpoint_scale(self):
        # with one checkpoint the normalized deviations sit on the
        # |Z|/sqrt(2 ln n) scale, far below 1 + slack
        cfg = ExperimentConfig(distribution=ZIPF, n_min=9_999, n_max=10_000,
                               points=2, ks=(1,), seeds=30, master_seed=3,
                               n_floor=9_999)
        res = study_lil_bound(cfg)
        assert res.passed
        assert max(res.stats["ratio_median_at_least_k1"]) < 0.5


class TestRateRatio:
    def test_deterministic_stub_exact_zero(self):
        cfg = small_cfg(rate_t_values=(1e4, 1e6), seeds=10)
        res = study_rate_ratio(cfg, increments_fn=lambda seg, rng: seg)
        assert res.stats["deviation_median"] == [0.0, 0.0]

    def test_medians_decrease(self):
        cfg = small_cfg(rate_t_values=(1e4, 1e6, 1e8), seeds=40)
        res = study_rate_ratio(cfg)
        med = res.stats["deviation_median"]
        assert med[0] > med[1] > med[2]
        assert res.pass_flags["final_below_threshold"]

    def test_deterministic_given_seed(self):
        cfg = small_cfg(rate_t_values=(1e4,), seeds=20)
        a = study_rate_ratio(cfg).stats["deviation_median"]
        b = study_rate_ratio(cfg).stats["deviation_median"]
        assert a == b


class TestMeanConvergence:
    def test_zipf_grid(self):
        cfg = small_cfg(n_max=100_000, points=9)
        res = study_mean_convergence(cfg)
        assert res.pass_flags["nonincreasing_at_least_1"]
        assert res.pass_flags["band_ratio_at_least_1"]
        assert 0.9 <= res.margins["ratio_at_least_1"] <= 1.1

    def test_geometric_theta0_trend(self):
        cfg = small_cfg(distribution=GEO, n_min=100, n_max=100_000, points=7,
                        n_floor=100)
        res = study_mean_convergence(cfg)
        assert res.pass_flags["theta0_ratio_trend"]
        assert "count_scaled_mean" in res.stats

    def test_zero_checkpoint_diff(self, zipf2):
        from urnsim.moments import mean_difference
        assert mean_difference(zipf2, 0, 1, True) == (0.0, 0.0)


class TestInequalStudies:
    def test_increment_bound_zipf_and_geometric(self):
        for dist in (ZIPF, GEO):
            cfg = small_cfg(distribution=dist, ks=(1, 2, 3), k_max=4)
            res = study_increment_bound(cfg)
            assert res.passed, res.margins

    def test_variance_sandwich_zipf_and_geometric(self):
        for dist in (ZIPF, GEO):
            cfg = small_cfg(distribution=dist, n_min=100, ks=(1, 2, 3), k_max=4)
            res = study_variance_sandwich(cfg)
            assert res.passed, res.margins


class TestEstimateTheta:
    def test_all_distinct_stub(self):
        n = 512
        traj_kwargs = dict(
            seed=0,
            positions=np.array([n]),
            K=np.array([n]),
            k_max=1,
            rstar_fixed=np.array([[n]]),
            rstar_poisson=np.array([[0]]),
            r_fixed=np.array([[n]]),
            r_poisson=np.array([[0]]),
        )
        from urnsim.simulate import CoupledTrajectory
        traj = CoupledTrajectory(**traj_kwargs)
        assert estimate_theta(traj) == 1.0

    def test_uses_fixed_columns_only(self, zipf2):
        grid = CheckpointGrid.logspaced(100, 20_000, 5, k_max=2)
        traj = run_coupled(zipf2, grid, seed=4)
        est = estimate_theta(traj)
        from dataclasses import replace
        tweaked = replace(traj, rstar_poisson=np.zeros_like(traj.rstar_poisson))
        assert estimate_theta(tweaked) == est

    def test_rejects_small_or_empty(self, zipf2):
        grid = CheckpointGrid(positions=(50,), k_max=1)
        traj = run_coupled(zipf2, grid, seed=4)
        with pytest.raises(ValueError):
            estimate_theta(traj)

    @pytest.mark.slow
    def test_zipf_recovers_exponent(self, zipf2):
        grid = CheckpointGrid.logspaced(1_000, 10_000_000, 8, k_max=2)
        traj = run_coupled(zipf2, grid, seed=(2024, 0))
        assert abs(estimate_theta(traj) - 0.5) < 0.1


class TestResultPlumbing:
    def test_json_schema_and_csv(self, tmp_path):
        cfg = small_cfg(distribution=GEO, ks=(1,), seeds=2)
        res = study_variance_sandwich(cfg)
        csv_path, json_path = write_study_outputs(res, tmp_path, "demo")
        payload = json.loads(open(json_path).read())
        assert payload["schema_version"] == 1
        assert payload["study"] == "variance_sandwich"
        header = open(csv_path).readline().strip().split(",")
        assert header == ["study", "checkpoint", "statistic", "value"]

    def test_partial_outputs_removed_on_failure(self, tmp_path):
        res = StudyResult(study="bad", checkpoints=[1.0],
                          stats={"x": [1.0]}, pass_flags={"ok": True},
                          margins={}, meta={"oops": object()})
        with pytest.raises(TypeError):
            write_study_outputs(res, tmp_path, "bad")
        assert not list(tmp_path.iterdir())

    def test_run_study_dispatch(self):
        cfg = small_cfg(ks=(1,), seeds=3, rate_t_values=(1e4,))
        res = run_study("prop1", cfg)
        assert res.study == "rate_ratio"
        with pytest.raises(ValueError):
            run_study("nope", cfg)

    def test_worker_pool_matches_serial(self, zipf2):
        cfg = small_cfg(seeds=4, n_max=5_000, points=4)
        grid = CheckpointGrid.logspaced(cfg.n_min, cfg.n_max, cfg.points, cfg.k_max)
        serial = generate_trajectories(cfg, zipf2, grid)
        from dataclasses import replace as dc_replace
        cfg2 = small_cfg(seeds=4, n_max=5_000, points=4, workers=2)
        parallel = generate_trajectories(cfg2, zipf2, grid)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.K, b.K)
            assert np.array_equal(a.rstar_fixed, b.rstar_fixed)
            assert np.array_equal(a.rstar_poisson, b.rstar_poisson)
