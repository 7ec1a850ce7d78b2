import json

import numpy as np
import pytest

from heterodyn import (
    CouplingMatrix,
    DriftFamily,
    FeasibilityError,
    HeterogeneityParams,
    MonteCarloEstimate,
    SweepResult,
    build_heterogeneous_sequence,
    emit_report,
    laplacian,
    run_concentration_campaign,
    run_lambda_max_campaign,
    run_theorem1,
    run_theorem3_sweep,
    sample_graph,
    wilson_interval,
)
from heterodyn.experiments import (
    BifurcationEvent,
    _measure_stable_dim,
    detect_events,
    regime_desk_windows,
    theorem1_desk_window,
)

from conftest import star_graph

THEOREM1_PARAMS = HeterogeneityParams(
    ell=3, theta=0.3, gamma=0.65, c0=0.5,
    Gamma0=1.0, Gamma1=0.7, Gamma2=1.4, beta=0.1,
)
SMALL_CAMPAIGN_PARAMS = HeterogeneityParams(
    ell=3, theta=0.3, gamma=0.65, c0=0.5,
    Gamma0=1.0, Gamma1=0.6, Gamma2=1.6, beta=0.1,
)
UNIT_DRIFT = DriftFamily(d=1, kind="constant", a=1.0)
UNIT_H = CouplingMatrix(np.array([[1.0]]))


class TestWilson:
    def test_interval_bounds(self):
        lo, hi = wilson_interval(190, 200)
        assert 0.0 <= lo < 190 / 200 < hi <= 1.0

    def test_extremes(self):
        lo, hi = wilson_interval(200, 200)
        assert hi == 1.0 and lo > 0.95
        lo, hi = wilson_interval(0, 200)
        assert lo == 0.0 and hi < 0.05

    def test_validation(self):
        with pytest.raises(ValueError):
            wilson_interval(5, 0)
        with pytest.raises(ValueError):
            wilson_interval(7, 5)

    def test_estimate_floor_logic(self):
        est = MonteCarloEstimate(trials=200, successes=198, floor=0.64)
        assert est.p_hat == pytest.approx(0.99)
        assert est.dominates_floor()
        low = MonteCarloEstimate(trials=200, successes=60, floor=0.64)
        assert not low.dominates_floor()


class TestDeskWindows:
    def test_theorem1_window_nonempty_at_scale(self):
        seq = build_heterogeneous_sequence(THEOREM1_PARAMS, 2000, 100.0)
        lo, hi = theorem1_desk_window(seq, THEOREM1_PARAMS, UNIT_DRIFT, UNIT_H)
        assert 0 < lo < hi

    def test_theorem1_window_empty_at_small_n(self):
        params = SMALL_CAMPAIGN_PARAMS
        seq = build_heterogeneous_sequence(params, 800, 45.0)
        with pytest.raises(FeasibilityError, match="empty desk window"):
            theorem1_desk_window(seq, params, UNIT_DRIFT, UNIT_H)

    def test_regime_windows_ordered(self):
        params = HeterogeneityParams(
            ell=2, theta=0.3, gamma=0.65, c0=0.3, Gamma0=1.0,
            Gamma1=0.7, Gamma2=1.4, beta=0.1,
            regimes=((1.0, 0.55), (0.85, 0.4)),
        )
        seq = build_heterogeneous_sequence(params, 2000, 100.0)
        windows = regime_desk_windows(seq, params, UNIT_DRIFT, UNIT_H)
        assert len(windows) == 2
        assert windows[0][0] < windows[0][1] <= windows[1][0] < windows[1][1]


class TestDetectEvents:
    def test_star_oracle_brackets(self):
        # 1+9 star: Laplacian eigenvalues {0, 1 x8, 10}; with a = 1 the
        # stable dimension jumps 0 -> 1 at alpha = 0.1 and 1 -> 9 at 1.0
        g = star_graph(9)
        lam = np.linalg.eigvalsh(laplacian(g).astype(float))
        grid = [0.05, 0.08, 0.12, 0.5, 0.9, 1.1, 1.5]
        dims = [int(np.sum(1.0 - a * lam < 0)) for a in grid]
        events = detect_events(grid, dims)
        assert [(e.dim_before, e.dim_after) for e in events] == [(0, 1), (1, 9)]
        assert events[0].alpha_lo == 0.08 and events[0].alpha_hi == 0.12
        assert events[1].alpha_lo == 0.9 and events[1].alpha_hi == 1.1

    def test_skips_unresolved_cells(self):
        events = detect_events([1, 2, 3, 4], [0, None, None, 2])
        assert len(events) == 1
        assert (events[0].alpha_lo, events[0].alpha_hi) == (1, 4)

    def test_event_validation(self):
        with pytest.raises(ValueError):
            BifurcationEvent(alpha_lo=0.2, alpha_hi=0.1, dim_before=0, dim_after=1)
        with pytest.raises(ValueError):
            BifurcationEvent(alpha_lo=0.1, alpha_hi=0.2, dim_before=1, dim_after=1)


class TestMeasureStableDim:
    def test_star_thresholds(self):
        g = star_graph(9)
        for alpha, want in [(0.05, 0), (0.5, 1), (1.5, 9)]:
            dim, _ = _measure_stable_dim(g, UNIT_DRIFT, UNIT_H, alpha,
                                         k=10, horizon=60.0, reorth=0.5,
                                         gap_min=0.05)
            assert dim == want

    def test_below_window_undershoots_target(self):
        # far below the window the eigenvalue count stays under d * ell
        seq = build_heterogeneous_sequence(THEOREM1_PARAMS, 600, 55.0)
        g = sample_graph(seq, 3)
        lam = np.linalg.eigvalsh(laplacian(g).astype(float))
        alpha = 0.1 * 8.0 / 55.0 / 10.0  # c/10 in alpha w_max units
        count = int(np.sum(1.0 - alpha * lam < 0))
        assert count < 3


class TestRunTheorem1:
    def test_small_run(self):
        res = run_theorem1(THEOREM1_PARAMS, 2000, 100.0, UNIT_DRIFT, UNIT_H,
                           seeds=[1, 2], horizon=25.0)
        assert res.target_dim == 3
        assert res.estimate.trials == 2
        assert res.desk_window[0] < res.alpha < res.desk_window[1]
        assert set(r["seed"] for r in res.per_seed) == {1, 2}
        assert res.constants["c"] == pytest.approx(8.0)
        rows = res.to_csv_rows()
        assert len(rows) == 2 and res.csv_header().startswith("seed,")

    def test_theorem_exponent_gate(self):
        bad = HeterogeneityParams(ell=3, theta=0.39, gamma=0.65, c0=0.5,
                                  Gamma1=0.7, Gamma2=1.4, beta=0.1)
        with pytest.raises(FeasibilityError, match="theta"):
            run_theorem1(bad, 2000, 100.0, UNIT_DRIFT, UNIT_H, seeds=[1])


class TestRunTheorem3Sweep:
    PARAMS = HeterogeneityParams(
        ell=2, theta=0.3, gamma=0.65, c0=0.3, Gamma0=1.0,
        Gamma1=0.7, Gamma2=1.4, beta=0.1,
        regimes=((1.0, 0.55), (0.85, 0.4)),
    )

    def test_cascade_events(self):
        sweep = run_theorem3_sweep(
            self.PARAMS, 2000, 100.0, UNIT_DRIFT, UNIT_H, seeds=[1],
            alpha_grid=[0.008, 0.0136, 0.023, 0.05], horizon=25.0,
        )
        dims = [r["stable_dim"] for r in sweep.records]
        assert dims[0] == 0 and 1 in dims and 2 in dims
        events = sweep.events[sweep.records[0]["seed"]]
        assert all(e.dim_after > e.dim_before for e in events)
        assert sweep.metadata["frozen_graph"] is True

    def test_requires_regimes(self):
        with pytest.raises(FeasibilityError, match="regime"):
            run_theorem3_sweep(THEOREM1_PARAMS, 2000, 100.0, UNIT_DRIFT,
                               UNIT_H, seeds=[1])

    def test_rejects_unsorted_grid(self):
        with pytest.raises(ValueError, match="increasing"):
            run_theorem3_sweep(self.PARAMS, 2000, 100.0, UNIT_DRIFT, UNIT_H,
                               seeds=[1], alpha_grid=[0.02, 0.01], horizon=25.0)


class TestCampaigns:
    def test_concentration_small(self):
        res = run_concentration_campaign(SMALL_CAMPAIGN_PARAMS, 800, 45.0,
                                         trials=100, master_seed=7)
        kiwi = res.estimates["kiwi"]
        assert kiwi.trials == 100
        assert kiwi.wilson[1] <= 1.0
        assert kiwi.p_hat >= kiwi.floor
        assert len(res.per_trial) == 100

    def test_concentration_needs_100_trials(self):
        with pytest.raises(ValueError, match="100"):
            run_concentration_campaign(SMALL_CAMPAIGN_PARAMS, 800, 45.0,
                                       trials=50, master_seed=7)

    def test_lambda_max_small(self):
        res = run_lambda_max_campaign(SMALL_CAMPAIGN_PARAMS, 800, 45.0,
                                      delta_exp=0.76, trials=100, master_seed=7)
        est = res.estimates["lambda_max"]
        assert est.p_hat >= est.floor
        assert all(t["delta_ok"] for t in res.per_trial)
        # the second-order bound is the sharper of the two
        assert all(t["sharp_bound"] <= t["bound"] for t in res.per_trial)

    def test_lambda_max_region_checks(self):
        with pytest.raises(FeasibilityError, match="delta"):
            run_lambda_max_campaign(SMALL_CAMPAIGN_PARAMS, 800, 45.0,
                                    delta_exp=0.7, trials=100, master_seed=7)
        steep = HeterogeneityParams(ell=3, theta=0.385, gamma=0.65, c0=0.5,
                                    Gamma1=0.6, Gamma2=1.6, beta=0.1)
        with pytest.raises(FeasibilityError, match="theta"):
            run_lambda_max_campaign(steep, 800, 45.0, delta_exp=0.76,
                                    trials=100, master_seed=7)


class TestEmitReport:
    def test_empty_sweep_header_only(self, tmp_path):
        sweep = SweepResult(alpha_grid=(), records=[], events={})
        path = tmp_path / "empty.csv"
        emit_report(sweep, str(path), format="csv")
        assert path.read_text() == "alpha_index,alpha,seed,stable_dim,gap,dichotomy\n"

    def test_byte_identical(self, tmp_path):
        res = run_concentration_campaign(SMALL_CAMPAIGN_PARAMS, 800, 45.0,
                                         trials=100, master_seed=11)
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        emit_report(res, str(p1))
        emit_report(res, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_json_round_trip(self, tmp_path):
        res = run_lambda_max_campaign(SMALL_CAMPAIGN_PARAMS, 800, 45.0,
                                      delta_exp=0.76, trials=100, master_seed=5)
        path = tmp_path / "lam.json"
        emit_report(res, str(path))
        loaded = json.loads(path.read_text())
        est = loaded["estimates"]["lambda_max"]
        assert est["trials"] == 100
        assert est["successes"] == res.estimates["lambda_max"].successes
        assert loaded["metadata"]["master_seed"] == 5

    def test_unknown_format(self, tmp_path):
        sweep = SweepResult(alpha_grid=(), records=[], events={})
        with pytest.raises(ValueError, match="format"):
            emit_report(sweep, str(tmp_path / "x.yaml"), format="yaml")

    def test_io_error_names_path(self):
        sweep = SweepResult(alpha_grid=(), records=[], events={})
        with pytest.raises(OSError, match="no/such/dir"):
            emit_report(sweep, "/no/such/dir/out.csv", format="csv")

    def test_fixed_seed_reproducibility(self, tmp_path):
        outs = []
        for name in ("r1.csv", "r2.csv"):
            res = run_concentration_campaign(SMALL_CAMPAIGN_PARAMS, 800, 45.0,
                                             trials=100, master_seed=42)
            path = tmp_path / name
            emit_report(res, str(path), format="csv")
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
