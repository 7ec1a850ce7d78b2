"""Finite-time dichotomy measurement and certification.

Measures Lyapunov spectra of the coupled block system by QR
re-orthonormalization, counts stable directions, fits projector-based
decay constants (K, eta) on a time grid, and evaluates the coupling
windows and roughness budgets that the stability theory predicts.

Large systems are handled by propagating a thin frame under the
inverse-adjoint flow dZ/dt = -M(t)^T Z, whose leading exponents are the
negatives of the smallest forward exponents; that is exactly the part of
the spectrum the stable dimension depends on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (
    BlowupError,
    CoupledSystem,
    CouplingMatrix,
    DriftFamily,
    default_step,
    instability_constants,
    rk4_step_matrix,
    system_matrix,
)
from .graphgen import HeterogeneityParams

__all__ = [
    "LinearSystem",
    "LyapunovSpectrum",
    "DichotomyReport",
    "WindowConstants",
    "lyapunov_spectrum",
    "stable_dimension",
    "fit_dichotomy",
    "theorem_windows",
    "roughness_check",
    "verify_roughness_numerically",
]

_DENSE_FAST_PATH_CAP = 600


class LinearSystem:
    """Adapter exposing an arbitrary linear ODE to the spectrum machinery.

    ``matrix`` is either a constant square array or a callable t -> array.
    """

    def __init__(self, matrix, dim: int | None = None):
        if callable(matrix):
            self._fn = matrix
            self._const = None
            if dim is None:
                dim = np.asarray(matrix(0.0)).shape[0]
        else:
            self._const = np.asarray(matrix, dtype=float)
            self._fn = None
            dim = self._const.shape[0]
        self.dim = int(dim)

    @property
    def is_autonomous(self) -> bool:
        return self._const is not None

    def matrix(self, t: float) -> np.ndarray:
        return self._const if self._const is not None else np.asarray(self._fn(t), dtype=float)

    def apply(self, t: float, y: np.ndarray, transpose: bool = False) -> np.ndarray:
        m = self.matrix(t)
        return (m.T if transpose else m) @ y


def _step_for(sys) -> float:
    if isinstance(sys, CoupledSystem):
        return default_step(sys)
    # crude spectral-scale estimate for adapters
    m = sys.matrix(0.0) if hasattr(sys, "matrix") else None
    rate = float(np.linalg.norm(m, 2)) if m is not None else 10.0
    return min(1e-2, 0.1 / max(rate, 1e-12))


@dataclass(frozen=True, eq=False)
class LyapunovSpectrum:
    """Finite-time exponents (descending) with convergence metadata.

    mode "full" covers the whole spectrum; "bottom" holds the k smallest
    exponents of the system (measured through the inverse-adjoint flow);
    "top" holds the k largest.  ``convergence`` is the per-exponent drift
    between the whole-window estimate and the last 20% of the window.
    """

    exponents: np.ndarray
    horizon: float
    reorth_interval: float
    convergence: np.ndarray
    mode: str
    dim: int
    discard: float

    @property
    def complete(self) -> bool:
        return self.mode == "full"

    def to_csv(self) -> str:
        lines = ["index,exponent,convergence_drift"]
        for i, (x, c) in enumerate(zip(self.exponents, self.convergence)):
            lines.append(f"{i},{x:.12g},{c:.12g}")
        return "\n".join(lines) + "\n"


def _benettin(propagate, dim: int, k: int, horizon: float, reorth: float, discard: float):
    """Shared QR loop.  ``propagate`` maps (t0, frame) -> frame at t0+reorth."""
    rng = np.random.default_rng(0xB10C5EED)
    q = np.linalg.qr(rng.standard_normal((dim, k)))[0]
    nint = int(round(horizon / reorth))
    sums = np.zeros(k)
    measured = 0.0
    tail_logs = []  # (time-in-window, log-increment) pairs past the discard
    t = 0.0
    for _ in range(nint):
        q = propagate(t, q)
        t += reorth
        if not np.all(np.isfinite(q)):
            raise BlowupError(t)
        q, r = np.linalg.qr(q)
        diag = np.diag(r)
        q = q * np.sign(diag)
        logs = np.log(np.abs(diag))
        if t > discard:
            sums += logs
            measured += reorth
            tail_logs.append(logs)
    if measured <= 0:
        raise ValueError("discard leaves no measurement window")
    exps = sums / measured
    # drift: rate over the last 20% of the measured window vs the full rate
    ntail = max(1, int(round(0.2 * len(tail_logs))))
    tail = np.sum(tail_logs[-ntail:], axis=0) / (ntail * reorth)
    conv = np.abs(tail - exps)
    return exps, conv


def lyapunov_spectrum(
    sys,
    k: int | None = None,
    horizon: float = 100.0,
    reorth: float = 0.5,
    step: float | None = None,
    mode: str = "full",
    discard_fraction: float = 0.2,
) -> LyapunovSpectrum:
    """Finite-time Lyapunov exponents by QR re-orthonormalization.

    mode="full" propagates a square frame and returns all exponents;
    mode="top" the k largest; mode="bottom" the k smallest (via the
    inverse-adjoint flow, the cheap route for large sparse systems).
    Autonomous systems are advanced one re-orthonormalization interval at
    a time with a precomputed RK4 interval map.
    """
    dim = sys.dim
    if mode not in ("full", "top", "bottom"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "full":
        k = dim
    if k is None or not 1 <= k <= dim:
        raise ValueError("need 1 <= k <= system dimension")
    if horizon < 50 * reorth:
        raise ValueError("horizon must cover at least 50 re-orthonormalizations")
    if step is None:
        step = _step_for(sys)
    discard = discard_fraction * horizon
    reverse = mode == "bottom"

    autonomous = getattr(sys, "is_autonomous", False)
    if autonomous and dim <= _DENSE_FAST_PATH_CAP:
        m = system_matrix(sys, 0.0) if isinstance(sys, CoupledSystem) else sys.matrix(0.0)
        if reverse:
            m = -m.T
        nsteps = max(1, int(round(reorth / step)))
        gmap = np.linalg.matrix_power(rk4_step_matrix(m, reorth / nsteps), nsteps)

        def propagate(t, q):
            return gmap @ q

    else:
        sign = -1.0 if reverse else 1.0

        def propagate(t, q):
            span = reorth
            nsteps = max(1, int(round(span / step)))
            h = span / nsteps
            tt = t
            for _ in range(nsteps):
                k1 = sign * sys.apply(tt, q, transpose=reverse)
                k2 = sign * sys.apply(tt + 0.5 * h, q + 0.5 * h * k1, transpose=reverse)
                k3 = sign * sys.apply(tt + 0.5 * h, q + 0.5 * h * k2, transpose=reverse)
                k4 = sign * sys.apply(tt + h, q + h * k3, transpose=reverse)
                q = q + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                tt += h
            return q

    exps, conv = _benettin(propagate, dim, k, horizon, reorth, discard)
    if reverse:
        exps, conv = -exps[::-1], conv[::-1]
        order = np.argsort(exps)[::-1]
        exps, conv = exps[order], conv[order]
    else:
        order = np.argsort(exps)[::-1]
        exps, conv = exps[order], conv[order]
    return LyapunovSpectrum(
        exponents=exps,
        horizon=horizon,
        reorth_interval=reorth,
        convergence=conv,
        mode=mode,
        dim=dim,
        discard=discard,
    )


def stable_dimension(spec: LyapunovSpectrum, gap_min: float) -> int | None:
    """Count exponents below -gap_min/2, or None when the gap is unresolved.

    Requires an empty dead zone (-gap_min/2, +gap_min/2).  For a partial
    "bottom" spectrum the count is certified only when the frame also
    contains an exponent on the positive side of the dead zone; "top"
    partial spectra cannot certify a count.
    """
    if gap_min <= 0:
        raise ValueError("gap_min must be positive")
    half = 0.5 * gap_min
    exps = spec.exponents
    if np.any((exps > -half) & (exps < half)):
        return None
    neg = int(np.sum(exps < -half))
    if spec.complete:
        return neg
    if spec.mode == "bottom":
        # all stable exponents are inside the frame iff a positive one is too
        if exps.max(initial=-np.inf) > half and neg < len(exps):
            return neg
        return None
    return None


# ---------------------------------------------------------------------------
# dichotomy fitting
# ---------------------------------------------------------------------------


def _default_grid() -> list[tuple[float, float]]:
    lags = np.geomspace(0.25, 8.0, 8)
    pairs = [(s, s + lag) for s in (0.0, 2.0, 5.0) for lag in lags]
    pairs += [(s, s) for s in (0.0, 2.0, 5.0)]
    return pairs


@dataclass(frozen=True, eq=False)
class DichotomyReport:
    """Fitted finite-time dichotomy data.

    ``bound_residuals`` is the worst signed log-excess of the measured
    decay over K exp(-eta (t-s)) across the grid (<= 0 means the bound
    holds everywhere).  ``dichotomy`` is declared only with a resolved
    spectral gap of at least ``gap_min`` and nonpositive residuals.
    """

    stable_dim: int | None
    gap: float | None
    fitted_K: float | None
    fitted_eta: float | None
    bound_residuals: float | None
    dichotomy: bool
    gap_min: float
    grid: list[tuple[float, float]] | None = None

    def to_json_dict(self) -> dict:
        return {
            "stable_dim": self.stable_dim,
            "gap": self.gap,
            "fitted_K": self.fitted_K,
            "fitted_eta": self.fitted_eta,
            "bound_residuals": self.bound_residuals,
            "dichotomy": self.dichotomy,
            "gap_min": self.gap_min,
        }


def _no_dichotomy(gap_min: float) -> DichotomyReport:
    return DichotomyReport(
        stable_dim=None,
        gap=None,
        fitted_K=None,
        fitted_eta=None,
        bound_residuals=None,
        dichotomy=False,
        gap_min=gap_min,
    )


def fit_dichotomy(
    sys,
    stable_dim: int | None = None,
    grid: list[tuple[float, float]] | None = None,
    spectrum: LyapunovSpectrum | None = None,
    gap_min: float = 0.05,
    align_horizon: float = 10.0,
    step: float | None = None,
) -> DichotomyReport:
    """Fit (K, eta) and a projector for the measured dichotomy.

    The stable subspace at time 0 is the span of the trailing right
    singular vectors of T(align_horizon, 0); its orthogonal complement
    serves as the unstable complement.  Both are pushed along the flow so
    the projector commutes with the evolution, and the two decay bounds
    are evaluated on the (s, t) grid.
    """
    from .dynamics import evolve_operator  # local import to avoid cycle noise

    dim = sys.dim
    if spectrum is None:
        spectrum = lyapunov_spectrum(sys, mode="full", step=step)
    if stable_dim is None:
        stable_dim = stable_dimension(spectrum, gap_min)
    if stable_dim is None:
        return _no_dichotomy(gap_min)
    s_dim = int(stable_dim)
    exps = spectrum.exponents
    if s_dim > 0 and s_dim < dim:
        gap = float(exps[dim - s_dim - 1] - exps[dim - s_dim])
        eta_cap = float(min(-exps[dim - s_dim], exps[dim - s_dim - 1]))
    elif s_dim == 0:
        gap = None
        eta_cap = float(exps[-1])
    else:
        gap = None
        eta_cap = float(-exps[0])
    if eta_cap <= 0:
        return _no_dichotomy(gap_min)

    if step is None:
        step = _step_for(sys)
    if grid is None:
        grid = _default_grid()

    def seg_operator(a, b):
        if isinstance(sys, CoupledSystem):
            return evolve_operator(sys, a, b, step)
        ls: LinearSystem = sys
        if ls.is_autonomous:
            nst = max(1, int(round((b - a) / step)))
            return np.linalg.matrix_power(rk4_step_matrix(ls.matrix(0.0), (b - a) / nst), nst)
        op = np.eye(dim)
        nst = max(1, int(round((b - a) / step)))
        h = (b - a) / nst
        t = a
        for _ in range(nst):
            k1 = ls.apply(t, op)
            k2 = ls.apply(t + 0.5 * h, op + 0.5 * h * k1)
            k3 = ls.apply(t + 0.5 * h, op + 0.5 * h * k2)
            k4 = ls.apply(t + h, op + h * k3)
            op = op + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        return op

    def window_split(t0):
        """Stable basis and its orthogonal complement at time t0 from the
        trailing right singular vectors of T(t0 + align_horizon, t0)."""
        op = seg_operator(t0, t0 + align_horizon)
        _, _, vt = np.linalg.svd(op)
        sb = vt[dim - s_dim :].T if s_dim else np.zeros((dim, 0))
        ub = vt[: dim - s_dim].T if s_dim < dim else np.zeros((dim, 0))
        return sb, ub

    times = sorted({0.0} | {p for pair in grid for p in pair})
    seg_ops = {}
    prev = 0.0
    for tt in times:
        if tt == 0.0:
            continue
        seg_ops[(prev, tt)] = seg_operator(prev, tt)
        prev = tt

    def transfer(a, b):
        """T(b, a) as a product of stored segments (no inversion)."""
        op = np.eye(dim)
        prev_t = a
        for tt in times:
            if tt <= a:
                continue
            if tt > b:
                break
            op = seg_ops[(prev_t, tt)] @ op
            prev_t = tt
        return op

    # stable basis: local forward-window SVD at each grid time (pushing it
    # along the flow would let the unstable directions contaminate it);
    # unstable complement: pushed along the flow, which is stable for it
    s0, u0 = window_split(0.0)
    sbas = {0.0: s0}
    ubas = {0.0: u0}
    prev = 0.0
    for tt in times:
        if tt == 0.0:
            continue
        sbas[tt] = window_split(tt)[0] if s_dim else s0
        op = seg_ops[(prev, tt)]
        ubas[tt] = np.linalg.qr(op @ ubas[prev])[0] if s_dim < dim else u0
        prev = tt

    def projector(tt):
        if s_dim == 0:
            return np.zeros((dim, dim))
        if s_dim == dim:
            return np.eye(dim)
        basis = np.hstack([sbas[tt], ubas[tt]])
        sel = np.zeros((dim, dim))
        sel[:s_dim, :s_dim] = np.eye(s_dim)
        return basis @ sel @ np.linalg.inv(basis)

    proj = {tt: projector(tt) for tt in times}
    samples = []  # (lag, log norm) per inequality
    for a, b in grid:
        tab = transfer(a, b)
        if s_dim:
            samples.append((b - a, float(np.linalg.norm(tab @ proj[a], 2))))
        if s_dim < dim:
            w = tab @ ubas[a]
            y, *_ = np.linalg.lstsq(w, np.eye(dim) - proj[b], rcond=None)
            samples.append((b - a, float(np.linalg.norm(ubas[a] @ y, 2))))

    etas = np.linspace(eta_cap / 200.0, eta_cap, 200)
    k_of_eta = np.array(
        [max(max(norm * np.exp(eta * lag) for lag, norm in samples), 1.0) for eta in etas]
    )
    k_min = k_of_eta.min()
    ok = k_of_eta <= 1.05 * k_min
    idx = int(np.nonzero(ok)[0][-1])
    fitted_eta = float(etas[idx])
    fitted_k = float(k_of_eta[idx])
    residual = max(
        np.log(norm) - (np.log(fitted_k) - fitted_eta * lag) for lag, norm in samples
    )
    declared = (
        residual <= 1e-6
        and (gap is None or gap >= gap_min)
        and fitted_eta > 0
    )
    return DichotomyReport(
        stable_dim=s_dim,
        gap=gap,
        fitted_K=fitted_k,
        fitted_eta=fitted_eta,
        bound_residuals=float(residual),
        dichotomy=bool(declared),
        gap_min=gap_min,
        grid=list(grid),
    )


# ---------------------------------------------------------------------------
# theorem windows and roughness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowConstants:
    """Coupling-window constants of the stability analysis.

    c, C frame the single-window statement (alpha * w_max between c and
    C (log n)^gamma); c_bar, C_bar frame the per-regime cascade windows.
    eta_hat is the decoupled-system decay margin at the given alpha and
    Lambda = eta_hat / (4 K_hat^2) the admissible perturbation norm.
    """

    c: float
    C: float
    c_bar: float
    C_bar: float
    eta_hat: float | None = None
    eta_hat_realized: float | None = None
    Lambda: float | None = None
    feasible: bool = True
    window: tuple[float, float] | None = None  # in alpha * w_max units

    def to_json_dict(self) -> dict:
        return {
            "c": self.c,
            "C": self.C,
            "c_bar": self.c_bar,
            "C_bar": self.C_bar,
            "eta_hat": self.eta_hat,
            "eta_hat_realized": self.eta_hat_realized,
            "Lambda": self.Lambda,
            "feasible": self.feasible,
            "window": list(self.window) if self.window else None,
        }


def theorem_windows(
    drift: DriftFamily,
    coupling: CouplingMatrix,
    params: HeterogeneityParams,
    n: int,
    alpha: float | None = None,
    w_max: float | None = None,
    degrees=None,
) -> WindowConstants:
    """Evaluate the window constants c, C, c_bar, C_bar (and eta_hat, Lambda
    for a concrete alpha).

    Symmetric positive-definite coupling gives K_hat_H = 1 exactly.  When
    realized ``degrees`` are passed alongside alpha, the decay margin is
    also evaluated with them in place of the prescribed weights.
    """
    k_hat_h = 1.0  # symmetric H: || exp(-alpha t H) || = exp(-alpha lambda_min t)
    eta0, k0 = instability_constants(drift)
    v_norm = drift.norm_bound
    lam_h = coupling.lambda_min
    h_norm = coupling.norm

    c = 4.0 * k_hat_h * v_norm / (params.c0 * lam_h)
    big_c = eta0 / (3.0 * params.Gamma2 * h_norm)
    c_bar = 3.0 * k_hat_h * v_norm / lam_h
    big_c_bar = eta0 / (2.0 * h_norm)

    upper = big_c * np.log(n) ** params.gamma
    feasible = c < upper
    window = (c, float(upper))

    eta_hat = eta_hat_realized = lam = None
    if alpha is not None:
        if w_max is None:
            raise ValueError("eta_hat needs w_max alongside alpha")
        k_hat = max(k_hat_h, k0)

        def margin(hub_scale, tail_scale):
            stable = 0.5 * lam_h * params.c0 * alpha * hub_scale - k_hat_h * v_norm
            unstable = eta0 - 1.5 * h_norm * params.Gamma2 * alpha * tail_scale
            return float(min(stable, unstable))

        eta_hat = margin(w_max, w_max ** (1.0 - params.gamma))
        lam = eta_hat / (4.0 * k_hat**2) if eta_hat > 0 else 0.0
        if degrees is not None:
            # realized variant: actual extreme degrees in place of the
            # concentration surrogates
            deg = np.asarray(degrees, dtype=float)
            stable = alpha * lam_h * deg[: params.ell].min() - k_hat_h * v_norm
            unstable = eta0 - alpha * h_norm * deg[params.ell :].max(initial=0.0)
            eta_hat_realized = float(min(stable, unstable))

    return WindowConstants(
        c=float(c),
        C=float(big_c),
        c_bar=float(c_bar),
        C_bar=float(big_c_bar),
        eta_hat=eta_hat,
        eta_hat_realized=eta_hat_realized,
        Lambda=lam,
        feasible=bool(feasible),
        window=window,
    )


def roughness_check(eta: float, K: float, perturbation_norm: float) -> tuple[bool, float]:
    """Admissibility of a bounded perturbation against the eta/(4K^2) budget.

    Returns (admissible, new_eta) with new_eta = eta - 2 K delta.  The
    budget boundary is strict.
    """
    if eta <= 0 or K < 1:
        raise ValueError("need eta > 0 and K >= 1")
    if perturbation_norm < 0:
        raise ValueError("perturbation norm must be >= 0")
    admissible = perturbation_norm < eta / (4.0 * K**2)
    return bool(admissible), float(eta - 2.0 * K * perturbation_norm)


@dataclass(frozen=True, eq=False)
class RoughnessReport:
    admissible: bool
    delta: float
    stable_dim_base: int
    stable_dim_perturbed: int | None
    rank_preserved: bool
    predicted_eta: float
    measured_decay: float | None
    decay_ok: bool


def verify_roughness_numerically(
    base,
    B,
    eta: float,
    K: float,
    stable_dim: int,
    gap_min: float = 0.05,
    horizon: float = 100.0,
    reorth: float = 0.5,
    slack: float = 0.10,
) -> RoughnessReport:
    """Integrate the perturbed system and check rank and decay persistence.

    ``base`` is a CoupledSystem or LinearSystem with a known dichotomy
    (eta, K, stable_dim); ``B`` a constant matrix or callable t -> matrix
    with sup norm below eta/(4 K^2) (checked, rejected otherwise).  The
    perturbed spectrum must keep the stable dimension, and its decay rate
    must reach eta - 2 K delta up to the relative slack.
    """
    if callable(B):
        ts = np.linspace(0.0, horizon, 201)
        delta = max(float(np.linalg.norm(np.asarray(B(t)), 2)) for t in ts)
        b_fn = B
    else:
        b_mat = np.asarray(B, dtype=float)
        delta = float(np.linalg.norm(b_mat, 2))
        b_fn = None
    admissible, new_eta = roughness_check(eta, K, delta)
    if not admissible:
        raise ValueError(
            f"perturbation norm {delta:.6g} reaches the budget "
            f"{eta / (4 * K ** 2):.6g}; roughness does not apply"
        )

    base_autonomous = getattr(base, "is_autonomous", False)
    if b_fn is None and base_autonomous:
        m0 = system_matrix(base, 0.0) if isinstance(base, CoupledSystem) else base.matrix(0.0)
        perturbed = LinearSystem(m0 + b_mat)
    else:
        def fn(t):
            m = system_matrix(base, t) if isinstance(base, CoupledSystem) else base.matrix(t)
            return m + (np.asarray(b_fn(t)) if b_fn is not None else b_mat)

        perturbed = LinearSystem(fn, dim=base.dim)

    spec = lyapunov_spectrum(perturbed, mode="full", horizon=horizon, reorth=reorth)
    dim_pert = stable_dimension(spec, gap_min)
    rank_ok = dim_pert == stable_dim
    measured_decay = None
    decay_ok = False
    if dim_pert is not None and dim_pert > 0:
        stable_exps = spec.exponents[perturbed.dim - dim_pert :]
        measured_decay = float(-stable_exps.max())
        decay_ok = measured_decay >= new_eta * (1.0 - slack)
    elif dim_pert == 0 and stable_dim == 0:
        decay_ok = True
    return RoughnessReport(
        admissible=True,
        delta=delta,
        stable_dim_base=stable_dim,
        stable_dim_perturbed=dim_pert,
        rank_preserved=bool(rank_ok),
        predicted_eta=float(new_eta),
        measured_decay=measured_decay,
        decay_ok=bool(decay_ok),
    )
