"""Coupled nonautonomous linear dynamics on a graph.

Each node carries an unstable d-dimensional linear equation; diffusive
coupling through a positive-definite matrix H and the graph Laplacian turns
the stack of n equations into the block system

    dX/dt = [blockdiag(V_1(t), ..., V_n(t)) - alpha * (L kron H)] X.

The module provides two certified drift families (constant-diagonal and a
periodically perturbed variant), the block assembly, and fixed-step RK4
propagation of states, frames, and full evolution operators.  For constant
drifts the one-step RK4 map is a fixed polynomial in the system matrix, so
long horizons are propagated by binary powering of that matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .graphgen import Graph, laplacian

__all__ = [
    "BlowupError",
    "DriftFamily",
    "CouplingMatrix",
    "CoupledSystem",
    "EvolutionSample",
    "drift_at",
    "instability_constants",
    "kron",
    "system_matrix",
    "evolve_state",
    "evolve_operator",
    "sample_evolution",
    "rk4_step_matrix",
    "default_step",
]

_OPERATOR_DIM_CAP = 4000


class BlowupError(FloatingPointError):
    """State became non-finite during integration (unbounded instability)."""

    def __init__(self, t):
        super().__init__(f"non-finite state at t = {t:.6g}; renormalize more often")
        self.t = float(t)


def _traceless_unit(d: int) -> np.ndarray:
    """Fixed symmetric traceless matrix with unit operator norm."""
    if d == 1:
        # no symmetric traceless direction in 1-d; perturb the scalar itself
        return np.array([[1.0]])
    s = np.zeros((d, d))
    s[0, 1] = s[1, 0] = 1.0
    return s


@dataclass(frozen=True, eq=False)
class DriftFamily:
    """Per-node drifts V_i(t) with certified instability constants.

    kind="constant": V_i(t) = a * I_d.
    kind="periodic": V_i(t) = a * I_d + eps * sin(omega_i t) * S with S a
    fixed unit-norm symmetric traceless matrix.  Requires eps < a so the
    inverse flow still contracts at a certified rate.
    """

    d: int
    kind: str
    a: float
    eps: float = 0.0
    omega: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "periodic"):
            raise ValueError(f"unknown drift kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("node dimension d must be >= 1")
        if self.a <= 0:
            raise ValueError("instability rate a must be positive")
        if self.eps < 0:
            raise ValueError("perturbation amplitude eps must be >= 0")
        if self.kind == "constant" and self.eps:
            raise ValueError("constant drift takes eps = 0")
        if self.kind == "periodic" and self.omega is None:
            raise ValueError("periodic drift needs per-node frequencies")
        if self.omega is not None:
            om = np.asarray(self.omega, dtype=float).copy()
            om.setflags(write=False)
            object.__setattr__(self, "omega", om)

    @property
    def norm_bound(self) -> float:
        """sup over i, t of the operator norm of V_i(t)."""
        return self.a + self.eps

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"


def drift_at(drift: DriftFamily, i: int, t: float) -> np.ndarray:
    """Drift matrix V_i(t) of node i."""
    v = drift.a * np.eye(drift.d)
    if drift.kind == "periodic":
        v += drift.eps * np.sin(drift.omega[i] * t) * _traceless_unit(drift.d)
    return v


def instability_constants(drift: DriftFamily) -> tuple[float, float]:
    """Certified (eta0, K0) with ||T_i^-1(t,s)|| <= K0 exp(-eta0 (t-s)).

    Constant drift: the inverse flow is exp(-a (t-s)) I, so (a, 1) exactly.
    Periodic drift: the symmetric drift has eigenvalues >= a - eps at all
    times, giving the Gronwall-type bound (a - eps, 1); requires eps < a.
    """
    if drift.kind == "constant":
        return drift.a, 1.0
    if drift.eps >= drift.a:
        raise ValueError(
            f"eps = {drift.eps} >= a = {drift.a}: isolated instability is not "
            "certifiable for this amplitude"
        )
    return drift.a - drift.eps, 1.0


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    """Symmetric positive-definite coupling matrix H."""

    H: np.ndarray

    def __init__(self, H):
        H = np.asarray(H, dtype=float).copy()
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("H must be a square matrix")
        if not np.allclose(H, H.T, atol=1e-12):
            raise ValueError("H must be symmetric")
        eig = np.linalg.eigvalsh(H)
        if eig[0] <= 0:
            raise ValueError(f"H must be positive definite; smallest eigenvalue {eig[0]:.6g}")
        H.setflags(write=False)
        object.__setattr__(self, "H", H)

    @property
    def d(self) -> int:
        return self.H.shape[0]

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.H)[0])

    @property
    def norm(self) -> float:
        return float(np.linalg.eigvalsh(self.H)[-1])


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product with block (i, j) equal to a_ij * b."""
    return np.kron(np.asarray(a), np.asarray(b))


@dataclass(frozen=True, eq=False)
class CoupledSystem:
    """Block system dX/dt = [V(t) - alpha (L kron H)] X on a sampled graph."""

    graph: Graph
    drift: DriftFamily
    coupling: CouplingMatrix
    alpha: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("coupling strength alpha must be >= 0")
        if self.coupling.d != self.drift.d:
            raise ValueError("coupling matrix dimension must match drift dimension")
        if self.drift.kind == "periodic" and len(self.drift.omega) < self.graph.n:
            raise ValueError("periodic drift needs one frequency per node")

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def d(self) -> int:
        return self.drift.d

    @property
    def dim(self) -> int:
        return self.n * self.d

    @property
    def laplacian(self) -> sp.csr_matrix:
        cache = self.graph._adj
        if "lap_csr" not in cache:
            cache["lap_csr"] = laplacian(self.graph, dense=False).astype(float)
        return cache["lap_csr"]

    @property
    def is_autonomous(self) -> bool:
        return self.drift.is_constant

    def apply(self, t: float, y: np.ndarray, transpose: bool = False) -> np.ndarray:
        """Matrix-free action of the system matrix (or its transpose) on
        state columns; y has shape (n*d,) or (n*d, k)."""
        single = y.ndim == 1
        cols = y.reshape(self.n, self.d, -1)
        out = self.drift.a * cols
        if self.drift.kind == "periodic":
            s = _traceless_unit(self.d)
            amp = self.drift.eps * np.sin(self.drift.omega[: self.n] * t)
            out = out + amp[:, None, None] * np.einsum("ab,nbk->nak", s, cols)
        if self.alpha:
            h = self.coupling.H  # symmetric, so transpose only matters for L
            hc = np.einsum("ab,nbk->nak", h, cols)
            k = hc.shape[2]
            mixed = (self.laplacian @ hc.reshape(self.n, self.d * k)).reshape(
                self.n, self.d, k
            )
            out = out - self.alpha * mixed
        # drift blocks are symmetric and L is symmetric: transpose action equals
        # the direct one for both families
        res = out.reshape(y.shape)
        return res[:, 0] if single and res.ndim > 1 else res


def system_matrix(sys: CoupledSystem, t: float) -> np.ndarray:
    """Dense N x N system matrix blockdiag(V_i(t)) - alpha (L kron H)."""
    n, d = sys.n, sys.d
    if n * d > _OPERATOR_DIM_CAP:
        raise ValueError(f"dense system matrix capped at N = {_OPERATOR_DIM_CAP}")
    m = np.zeros((n * d, n * d))
    for i in range(n):
        m[i * d : (i + 1) * d, i * d : (i + 1) * d] = drift_at(sys.drift, i, t)
    if sys.alpha:
        m -= sys.alpha * kron(laplacian(sys.graph), sys.coupling.H)
    return m


def default_step(sys: CoupledSystem) -> float:
    """Step resolving the stiffest coupling mode: 0.1 / (||V|| + 2 alpha kmax ||H||)."""
    kmax = float(sys.graph.degrees.max(initial=0))
    rate = sys.drift.norm_bound + 2.0 * sys.alpha * kmax * sys.coupling.norm
    return min(1e-2, 0.1 / max(rate, 1e-12))


def _rk4_sweep(apply: Callable, y: np.ndarray, t0: float, t1: float, step: float):
    """Classical RK4 from t0 to t1 with a step adjusted to divide the span."""
    span = t1 - t0
    if span == 0:
        return y
    nsteps = max(1, int(round(span / step)))
    h = span / nsteps
    t = t0
    # overflow is reported through BlowupError, not a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(nsteps):
            k1 = apply(t, y)
            k2 = apply(t + 0.5 * h, y + 0.5 * h * k1)
            k3 = apply(t + 0.5 * h, y + 0.5 * h * k2)
            k4 = apply(t + h, y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            if not np.all(np.isfinite(y)):
                raise BlowupError(t)
    return y


def rk4_step_matrix(m: np.ndarray, h: float) -> np.ndarray:
    """One-step RK4 transfer matrix for a constant system: the degree-4
    Taylor polynomial of exp(h m)."""
    eye = np.eye(m.shape[0])
    hm = h * m
    p = eye + hm
    term = hm
    for k in (2, 3, 4):
        term = term @ hm / k
        p = p + term
    return p


def evolve_state(
    sys: CoupledSystem,
    x0: np.ndarray,
    t0: float,
    t1: float,
    step: float | None = None,
) -> np.ndarray:
    """Propagate a state (or a stack of column states) from t0 to t1."""
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    if step is None:
        step = default_step(sys)
    if step <= 0:
        raise ValueError("step must be positive")
    x0 = np.asarray(x0, dtype=float)
    return _rk4_sweep(sys.apply, x0, t0, t1, step)


def evolve_operator(
    sys: CoupledSystem,
    s: float,
    t: float,
    step: float | None = None,
) -> np.ndarray:
    """Approximate evolution operator T(t, s) as a dense matrix."""
    if t < s:
        raise ValueError("t must be >= s")
    if sys.dim > _OPERATOR_DIM_CAP:
        raise ValueError(f"full-operator work capped at N = {_OPERATOR_DIM_CAP}")
    if step is None:
        step = default_step(sys)
    eye = np.eye(sys.dim)
    if sys.is_autonomous:
        m = system_matrix(sys, 0.0)
        span = t - s
        if span == 0:
            return eye
        nsteps = max(1, int(round(span / step)))
        g = rk4_step_matrix(m, span / nsteps)
        op = np.linalg.matrix_power(g, nsteps)
        if not np.all(np.isfinite(op)):
            raise BlowupError(t)
        return op
    return _rk4_sweep(sys.apply, eye, s, t, step)


@dataclass(frozen=True, eq=False)
class EvolutionSample:
    """Evolution operators on a time grid, with composition residuals."""

    times: tuple[float, ...]
    operators: list[np.ndarray]  # operators[k] approximates T(times[k], times[0])
    step: float

    def operator(self, s_index: int, t_index: int) -> np.ndarray:
        """T(times[t_index], times[s_index]) via the stored grid."""
        if t_index < s_index:
            raise ValueError("need t_index >= s_index")
        ts = self.operators[s_index]
        tt = self.operators[t_index]
        return tt @ np.linalg.inv(ts)

    def composition_residual(self) -> float:
        worst = 0.0
        for k in range(1, len(self.times) - 1):
            lhs = self.operator(k, k + 1) @ self.operator(0, k)
            worst = max(worst, float(np.linalg.norm(lhs - self.operators[k + 1])))
        return worst


def sample_evolution(
    sys: CoupledSystem, times, step: float | None = None
) -> EvolutionSample:
    """Propagate T(t, times[0]) along an increasing time grid."""
    times = tuple(float(t) for t in times)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    if step is None:
        step = default_step(sys)
    ops = [np.eye(sys.dim)]
    for a, b in zip(times, times[1:]):
        seg = evolve_operator(sys, a, b, step)
        ops.append(seg @ ops[-1])
    return EvolutionSample(times=times, operators=ops, step=step)


def system_from_config(config: dict, graph: Graph) -> CoupledSystem:
    """Build a system from the JSON config layout
    {"drift": {...}, "coupling": {"H": [[...]]}, "alpha": ...}."""
    dcfg = config["drift"]
    kind = dcfg["kind"]
    omega = None
    if kind == "periodic":
        omega = dcfg.get("omega")
        if omega is None:
            # deterministic spread of frequencies, one per node
            omega = 1.0 + np.arange(graph.n) * (np.pi / (2.0 * graph.n))
    drift = DriftFamily(
        d=int(dcfg.get("d", 1)),
        kind=kind,
        a=float(dcfg["a"]),
        eps=float(dcfg.get("eps", 0.0)),
        omega=omega,
    )
    coupling = CouplingMatrix(config["coupling"]["H"])
    return CoupledSystem(
        graph=graph, drift=drift, coupling=coupling, alpha=float(config["alpha"])
    )


def config_to_json(sys: CoupledSystem, graph_ref: str | None = None) -> str:
    cfg = {
        "drift": {
            "kind": sys.drift.kind,
            "a": sys.drift.a,
            "eps": sys.drift.eps,
            "d": sys.drift.d,
        },
        "coupling": {"H": sys.coupling.H.tolist()},
        "alpha": sys.alpha,
    }
    if graph_ref is not None:
        cfg["graph_ref"] = graph_ref
    return json.dumps(cfg, sort_keys=True)
