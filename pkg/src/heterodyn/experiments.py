"""Monte Carlo campaigns and coupling-strength sweeps.

Runs the statistical side of the study: concentration and spectral-radius
campaigns over the graph ensemble, dichotomy frequency at a fixed coupling
strength, and cascades of stable-dimension jumps along an alpha grid.

The asymptotic window constants (c, C, c_bar, C_bar) are hopelessly
conservative at desk-scale n, where c > C (log n)^gamma makes the stated
window empty.  Campaigns therefore pick their test coupling inside the
*desk window* derived from the same two rate inequalities the constants
encode (alpha * hub degree large enough, alpha * tail degree small
enough), with the degree extremes replaced by their concentration-bound
surrogates.  Both the desk window and the asymptotic constants are
reported.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dichotomy import lyapunov_spectrum, stable_dimension, theorem_windows
from .dynamics import CoupledSystem, CouplingMatrix, DriftFamily, instability_constants
from .graphgen import (
    ExpectedDegreeSequence,
    FeasibilityError,
    Graph,
    HeterogeneityParams,
    build_heterogeneous_sequence,
    check_concentration,
    lambda_max,
    sample_graph,
    second_order_average,
    seed_stream,
)

__all__ = [
    "MonteCarloEstimate",
    "SweepResult",
    "BifurcationEvent",
    "Theorem1Result",
    "CampaignResult",
    "wilson_interval",
    "theorem1_desk_window",
    "regime_desk_windows",
    "run_theorem1",
    "run_theorem3_sweep",
    "run_concentration_campaign",
    "run_lambda_max_campaign",
    "emit_report",
]


def wilson_interval(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes must lie in [0, trials]")
    p = successes / trials
    denom = 1.0 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


@dataclass(frozen=True)
class MonteCarloEstimate:
    """Empirical event frequency with its Wilson interval and theory floor."""

    trials: int
    successes: int
    floor: float
    label: str = ""

    def __post_init__(self):
        if not 0 <= self.successes <= self.trials:
            raise ValueError("successes must lie in [0, trials]")

    @property
    def p_hat(self) -> float:
        return self.successes / self.trials

    @property
    def wilson(self) -> tuple[float, float]:
        return wilson_interval(self.successes, self.trials)

    def dominates_floor(self) -> bool:
        """Frequency not below the floor by more than the Wilson half-width."""
        lo, _ = self.wilson
        half = self.p_hat - lo
        return self.p_hat >= self.floor - half

    def to_json_dict(self) -> dict:
        lo, hi = self.wilson
        return {
            "label": self.label,
            "trials": self.trials,
            "successes": self.successes,
            "p_hat": self.p_hat,
            "wilson_lo": lo,
            "wilson_hi": hi,
            "floor": self.floor,
        }


# ---------------------------------------------------------------------------
# desk-scale coupling windows
# ---------------------------------------------------------------------------


def _rate_constants(drift: DriftFamily, coupling: CouplingMatrix) -> tuple[float, float]:
    """(stability threshold, instability ceiling) for alpha times a degree:
    alpha * kappa_hub must exceed ||V|| / lambda_H and alpha * kappa_tail
    must stay below eta0 / ||H|| (K_hat_H = 1 for symmetric H)."""
    eta0, _ = instability_constants(drift)
    return drift.norm_bound / coupling.lambda_min, eta0 / coupling.norm


def _kiwi_margin(w: float, n: int) -> float:
    logn = np.log(n)
    return 2.0 * np.sqrt(logn) * np.sqrt(max(w, logn))


def theorem1_desk_window(
    w: ExpectedDegreeSequence,
    params: HeterogeneityParams,
    drift: DriftFamily,
    coupling: CouplingMatrix,
) -> tuple[float, float]:
    """Coupling window (alpha_lo, alpha_hi) for the hub-dichotomy test at
    finite n: hub degrees lowered and tail degrees raised by their
    concentration bounds."""
    lo_rate, hi_rate = _rate_constants(drift, coupling)
    n = w.n
    hub_w = float(w.w[params.ell - 1])
    tail_w = float(w.w[params.ell]) if params.ell < n else np.log(n)
    hub_floor = hub_w - _kiwi_margin(hub_w, n)
    tail_cap = tail_w + _kiwi_margin(tail_w, n)
    if hub_floor <= 0:
        raise FeasibilityError("hub weights too small for a desk-scale window")
    alpha_lo = lo_rate / hub_floor
    alpha_hi = hi_rate / tail_cap
    if alpha_lo >= alpha_hi:
        raise FeasibilityError(
            f"empty desk window at n = {n}: alpha_lo = {alpha_lo:.6g} >= "
            f"alpha_hi = {alpha_hi:.6g}"
        )
    return float(alpha_lo), float(alpha_hi)


def regime_desk_windows(
    w: ExpectedDegreeSequence,
    params: HeterogeneityParams,
    drift: DriftFamily,
    coupling: CouplingMatrix,
) -> list[tuple[float, float]]:
    """Per-regime coupling windows (alpha_lo, alpha_hi), regime i stabilizing
    exactly the first i hubs.  Bounds come from the neighboring weights."""
    if params.regimes is None:
        raise FeasibilityError("regime windows need hub regimes")
    lo_rate, hi_rate = _rate_constants(drift, coupling)
    windows = []
    for i in range(1, params.ell + 1):
        w_i = float(w.w[i - 1])
        w_next = float(w.w[i])
        lo = lo_rate / w_i
        hi = hi_rate / w_next
        if lo >= hi:
            raise FeasibilityError(
                f"regime {i} window empty: weights {w_i:.6g} and {w_next:.6g} "
                "are too close for the drift/coupling rates"
            )
        windows.append((float(lo), float(hi)))
    return windows


# ---------------------------------------------------------------------------
# dichotomy frequency at fixed alpha
# ---------------------------------------------------------------------------


def _measure_stable_dim(
    graph: Graph,
    drift: DriftFamily,
    coupling: CouplingMatrix,
    alpha: float,
    k: int,
    horizon: float,
    reorth: float,
    gap_min: float,
):
    sys = CoupledSystem(graph=graph, drift=drift, coupling=coupling, alpha=alpha)
    spec = lyapunov_spectrum(sys, k=k, mode="bottom", horizon=horizon, reorth=reorth)
    dim = stable_dimension(spec, gap_min)
    exps = spec.exponents
    gap = None
    if dim is not None and 0 < dim < len(exps):
        gap = float(exps[len(exps) - dim - 1] - exps[len(exps) - dim])
    return dim, gap


def _theorem1_worker(args):
    seq_w, params, drift, coupling, alpha, seed, k, horizon, reorth, gap_min = args
    seq = ExpectedDegreeSequence(seq_w)
    g = sample_graph(seq, seed)
    dim, gap = _measure_stable_dim(
        g, drift, coupling, alpha, k, horizon, reorth, gap_min
    )
    return {"seed": seed, "stable_dim": dim, "gap": gap}


@dataclass(frozen=True, eq=False)
class Theorem1Result:
    estimate: MonteCarloEstimate
    alpha: float
    target_dim: int
    per_seed: list[dict]
    desk_window: tuple[float, float]
    constants: dict

    def to_json_dict(self) -> dict:
        return {
            "estimate": self.estimate.to_json_dict(),
            "alpha": self.alpha,
            "target_dim": self.target_dim,
            "desk_window": list(self.desk_window),
            "constants": self.constants,
            "per_seed": self.per_seed,
        }

    def csv_header(self) -> str:
        return "seed,stable_dim,gap,success"

    def to_csv_rows(self) -> list[str]:
        rows = []
        for rec in self.per_seed:
            dim = rec["stable_dim"]
            gap = rec["gap"]
            ok = int(dim == self.target_dim)
            rows.append(
                f"{rec['seed']},{'' if dim is None else dim},"
                f"{'' if gap is None else format(gap, '.12g')},{ok}"
            )
        return rows


def run_theorem1(
    params: HeterogeneityParams,
    n: int,
    w_max: float,
    drift: DriftFamily,
    coupling: CouplingMatrix,
    seeds,
    alpha: float | None = None,
    tail_hi: float | None = None,
    horizon: float = 30.0,
    reorth: float = 0.5,
    gap_min: float = 0.05,
    jobs: int = 1,
) -> Theorem1Result:
    """Frequency of a resolved dichotomy with stable dimension d * ell.

    Per seed: sample a graph, measure the bottom of the Lyapunov spectrum,
    and count success when the stable dimension equals d * ell.  ``alpha``
    defaults to the geometric midpoint of the desk window.
    """
    params.check_theorem_exponents()
    seq = build_heterogeneous_sequence(params, n, w_max, tail_hi=tail_hi)
    window = theorem1_desk_window(seq, params, drift, coupling)
    if alpha is None:
        alpha = float(np.sqrt(window[0] * window[1]))
    target = drift.d * params.ell
    k = min(seq.n * drift.d, target + 3)
    args = [
        (seq.w, params, drift, coupling, alpha, int(s), k, horizon, reorth, gap_min)
        for s in seeds
    ]
    records = _map_jobs(_theorem1_worker, args, jobs)
    records.sort(key=lambda r: r["seed"])
    successes = sum(1 for r in records if r["stable_dim"] == target)
    floor = 1.0 - n**-0.5 - 2.0 * n**-0.2
    wc = theorem_windows(drift, coupling, params, n, alpha=alpha, w_max=w_max)
    return Theorem1Result(
        estimate=MonteCarloEstimate(
            trials=len(records), successes=successes, floor=floor, label="theorem1"
        ),
        alpha=float(alpha),
        target_dim=target,
        per_seed=records,
        desk_window=window,
        constants=dict(wc.to_json_dict(), desk_target=0.9),
    )


# ---------------------------------------------------------------------------
# alpha sweeps and bifurcation events
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BifurcationEvent:
    alpha_lo: float
    alpha_hi: float
    dim_before: int
    dim_after: int

    def __post_init__(self):
        if self.alpha_lo >= self.alpha_hi:
            raise ValueError("event bracket must satisfy alpha_lo < alpha_hi")
        if self.dim_before == self.dim_after:
            raise ValueError("event needs a dimension change")


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Stable dimension per (alpha, seed) with detected dimension jumps."""

    alpha_grid: tuple[float, ...]
    records: list[dict]  # alpha_index, alpha, seed, stable_dim, gap, dichotomy
    events: dict[int, list[BifurcationEvent]]  # per seed
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "alpha_grid": list(self.alpha_grid),
            "records": self.records,
            "events": {
                str(seed): [
                    {
                        "alpha_lo": e.alpha_lo,
                        "alpha_hi": e.alpha_hi,
                        "dim_before": e.dim_before,
                        "dim_after": e.dim_after,
                    }
                    for e in evs
                ]
                for seed, evs in self.events.items()
            },
            "metadata": self.metadata,
        }

    def csv_header(self) -> str:
        return "alpha_index,alpha,seed,stable_dim,gap,dichotomy"

    def to_csv_rows(self) -> list[str]:
        rows = []
        for rec in self.records:
            dim = rec["stable_dim"]
            gap = rec["gap"]
            rows.append(
                f"{rec['alpha_index']},{format(rec['alpha'], '.12g')},{rec['seed']},"
                f"{'' if dim is None else dim},"
                f"{'' if gap is None else format(gap, '.12g')},{int(rec['dichotomy'])}"
            )
        return rows


def detect_events(alpha_grid, dims) -> list[BifurcationEvent]:
    """Dimension-change brackets between adjacent resolved grid points."""
    events = []
    last_idx = None
    for idx, dim in enumerate(dims):
        if dim is None:
            continue
        if last_idx is not None and dim != dims[last_idx]:
            events.append(
                BifurcationEvent(
                    alpha_lo=float(alpha_grid[last_idx]),
                    alpha_hi=float(alpha_grid[idx]),
                    dim_before=int(dims[last_idx]),
                    dim_after=int(dim),
                )
            )
        last_idx = idx
    return events


def _sweep_worker(args):
    (seq_w, drift, coupling, alpha_grid, seed, k, horizon, reorth, gap_min,
     resample) = args
    seq = ExpectedDegreeSequence(seq_w)
    out = []
    g = sample_graph(seq, seed)
    for idx, alpha in enumerate(alpha_grid):
        if resample:
            g = sample_graph(seq, (seed << 8) + idx)
        dim, gap = _measure_stable_dim(
            g, drift, coupling, float(alpha), k, horizon, reorth, gap_min
        )
        out.append(
            {
                "alpha_index": idx,
                "alpha": float(alpha),
                "seed": seed,
                "stable_dim": dim,
                "gap": gap,
                "dichotomy": dim is not None,
            }
        )
    return out


def run_theorem3_sweep(
    params: HeterogeneityParams,
    n: int,
    w_max: float,
    drift: DriftFamily,
    coupling: CouplingMatrix,
    seeds,
    alpha_grid=None,
    tail_hi: float | None = None,
    horizon: float = 30.0,
    reorth: float = 0.5,
    gap_min: float = 0.05,
    resample_per_alpha: bool = False,
    jobs: int = 1,
) -> SweepResult:
    """Sweep alpha through the per-regime windows and detect dimension jumps.

    Graphs are frozen per seed along the grid by default (resampling per
    grid point is the in-distribution reading).  Cascade feasibility is
    checked with the desk-scale rate constants.
    """
    params.check_theorem_exponents()
    if params.regimes is None:
        raise FeasibilityError("theorem-3 sweep needs hubs in distinct regimes")
    sigma, tau = params.regimes
    lo_rate, hi_rate = _rate_constants(drift, coupling)
    for i in range(params.ell):
        if lo_rate / hi_rate >= sigma[i] / tau[i]:
            raise FeasibilityError(
                f"cascade infeasible: desk ratio {lo_rate / hi_rate:.6g} >= "
                f"sigma_{i + 1}/tau_{i + 1} = {sigma[i] / tau[i]:.6g}"
            )
    seq = build_heterogeneous_sequence(params, n, w_max, tail_hi=tail_hi)
    windows = regime_desk_windows(seq, params, drift, coupling)
    if alpha_grid is None:
        wc = theorem_windows(drift, coupling, params, n)
        lo = 0.1 * wc.c / w_max
        hi = 10.0 * wc.C * np.log(n) ** params.gamma / w_max
        if lo >= hi:
            lo, hi = 0.5 * windows[0][0], 2.0 * windows[-1][1]
        alpha_grid = np.geomspace(lo, hi, 40)
    alpha_grid = tuple(float(a) for a in alpha_grid)
    if any(b <= a for a, b in zip(alpha_grid, alpha_grid[1:])):
        raise ValueError("alpha grid must be strictly increasing")
    k = min(seq.n * drift.d, drift.d * params.ell + 3)
    args = [
        (seq.w, drift, coupling, alpha_grid, int(s), k, horizon, reorth, gap_min,
         resample_per_alpha)
        for s in seeds
    ]
    blocks = _map_jobs(_sweep_worker, args, jobs)
    records = [rec for block in blocks for rec in block]
    records.sort(key=lambda r: (r["seed"], r["alpha_index"]))
    events = {}
    for s in {r["seed"] for r in records}:
        dims = [r["stable_dim"] for r in records if r["seed"] == s]
        events[s] = detect_events(alpha_grid, dims)
    return SweepResult(
        alpha_grid=alpha_grid,
        records=records,
        events=events,
        metadata={
            "n": n,
            "w_max": w_max,
            "d": drift.d,
            "ell": params.ell,
            "regime_windows": [list(w) for w in windows],
            "frozen_graph": not resample_per_alpha,
            "desk_target": 0.9,
        },
    )


# ---------------------------------------------------------------------------
# graph-ensemble campaigns
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CampaignResult:
    """Named Monte Carlo estimates plus per-trial detail rows."""

    estimates: dict[str, MonteCarloEstimate]
    per_trial: list[dict]
    metadata: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "estimates": {k: v.to_json_dict() for k, v in self.estimates.items()},
            "per_trial": self.per_trial,
            "metadata": self.metadata,
        }

    def csv_header(self) -> str:
        if not self.per_trial:
            return "seed"
        keys = [k for k in self.per_trial[0] if k != "seed"]
        return ",".join(["seed"] + keys)

    def to_csv_rows(self) -> list[str]:
        rows = []
        for rec in self.per_trial:
            keys = [k for k in rec if k != "seed"]
            vals = [str(rec["seed"])]
            for k in keys:
                v = rec[k]
                if isinstance(v, bool):
                    vals.append(str(int(v)))
                elif isinstance(v, float):
                    vals.append(format(v, ".12g"))
                else:
                    vals.append(str(v))
            rows.append(",".join(vals))
        return rows


def _concentration_worker(args):
    seq_w, params, seed = args
    seq = ExpectedDegreeSequence(seq_w)
    g = sample_graph(seq, seed)
    rep = check_concentration(g, seq, params)
    return {
        "seed": seed,
        "kiwi": rep.event,
        "hub_tail": bool(rep.hub_tail_event),
        "regimes": bool(rep.regime_event) if rep.regime_event is not None else None,
    }


def run_concentration_campaign(
    params: HeterogeneityParams,
    n: int,
    w_max: float,
    trials: int,
    master_seed: int,
    tail_hi: float | None = None,
    jobs: int = 1,
) -> CampaignResult:
    """Empirical frequency of the three degree-concentration events."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    seq = build_heterogeneous_sequence(params, n, w_max, tail_hi=tail_hi)
    seeds = seed_stream(master_seed, trials)
    args = [(seq.w, params, int(s)) for s in seeds]
    records = _map_jobs(_concentration_worker, args, jobs)
    records.sort(key=lambda r: seeds.index(r["seed"]))
    floor = 1.0 - 2.0 * n**-0.2
    estimates = {
        "kiwi": MonteCarloEstimate(
            trials=trials,
            successes=sum(r["kiwi"] for r in records),
            floor=floor,
            label="degree concentration",
        ),
        "hub_tail": MonteCarloEstimate(
            trials=trials,
            successes=sum(r["hub_tail"] for r in records),
            floor=floor,
            label="hub floor and tail ceiling",
        ),
    }
    if params.regimes is not None:
        estimates["regimes"] = MonteCarloEstimate(
            trials=trials,
            successes=sum(bool(r["regimes"]) for r in records),
            floor=floor,
            label="distinct-regime concentration",
        )
    return CampaignResult(
        estimates=estimates,
        per_trial=records,
        metadata={"n": n, "w_max": w_max, "trials": trials, "master_seed": master_seed},
    )


def _lambda_max_worker(args):
    seq_w, seed, delta_exp = args
    seq = ExpectedDegreeSequence(seq_w)
    g = sample_graph(seq, seed)
    lam = lambda_max(g)
    w_max = seq.w_max
    bound = 5.0 * w_max**delta_exp
    dd = second_order_average(seq)
    logn = np.log(seq.n)
    sharp = dd + 1.5 * np.sqrt(logn * w_max) + np.sqrt(
        0.25 * logn * w_max + 3.0 * (dd + logn) * np.sqrt(logn * w_max)
    )
    return {
        "seed": seed,
        "lambda_max": float(lam),
        "bound": float(bound),
        "sharp_bound": float(sharp),
        "ok": bool(lam <= bound),
        "sharp_ok": bool(lam <= sharp),
        "delta_ok": bool(dd < w_max**delta_exp),
    }


def run_lambda_max_campaign(
    params: HeterogeneityParams,
    n: int,
    w_max: float,
    delta_exp: float,
    trials: int,
    master_seed: int,
    tail_hi: float | None = None,
    jobs: int = 1,
) -> CampaignResult:
    """Frequency of lambda_max <= 5 w_max^delta over the ensemble."""
    cap = 3.0 - np.sqrt(5.0)
    if not 0.75 <= delta_exp < cap:
        raise FeasibilityError(f"delta must lie in [3/4, {cap:.6f})")
    if params.theta >= delta_exp / 2.0:
        raise FeasibilityError("need theta < delta/2")
    if params.gamma <= 1.0 - delta_exp / 2.0:
        raise FeasibilityError("need gamma > 1 - delta/2")
    seq = build_heterogeneous_sequence(params, n, w_max, tail_hi=tail_hi)
    seeds = seed_stream(master_seed, trials)
    args = [(seq.w, int(s), delta_exp) for s in seeds]
    records = _map_jobs(_lambda_max_worker, args, jobs)
    records.sort(key=lambda r: seeds.index(r["seed"]))
    floor = 1.0 - n**-0.5
    estimates = {
        "lambda_max": MonteCarloEstimate(
            trials=trials,
            successes=sum(r["ok"] for r in records),
            floor=floor,
            label="adjacency radius vs 5 w_max^delta",
        ),
        "sharp": MonteCarloEstimate(
            trials=trials,
            successes=sum(r["sharp_ok"] for r in records),
            floor=floor,
            label="adjacency radius vs second-order bound",
        ),
    }
    return CampaignResult(
        estimates=estimates,
        per_trial=records,
        metadata={
            "n": n,
            "w_max": w_max,
            "delta": delta_exp,
            "trials": trials,
            "master_seed": master_seed,
            "second_order_average": second_order_average(seq),
        },
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _stable_floats(obj):
    """Round-trip floats through 12 significant digits for stable output."""
    if isinstance(obj, dict):
        return {k: _stable_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_stable_floats(v) for v in obj]
    if isinstance(obj, bool) or obj is None or isinstance(obj, (int, str)):
        return obj
    if isinstance(obj, float):
        return float(format(obj, ".12g"))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(format(float(obj), ".12g"))
    raise TypeError(f"cannot serialize {type(obj)!r}")


def emit_report(result, path: str, format: str = "json") -> None:
    """Write a campaign result deterministically (sorted keys, 12 significant
    digits); the same result always produces byte-identical files."""
    if format == "json":
        payload = _stable_floats(result.to_json_dict())
        text = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    elif format == "csv":
        lines = [result.csv_header()] + result.to_csv_rows()
        text = "\n".join(lines) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def _map_jobs(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(a) for a in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))
