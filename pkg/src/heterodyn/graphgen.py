"""Expected-degree random graphs with few massively connected hubs.

Implements the expected-degree (Chung-Lu) ensemble: every unordered pair
{i, j} is an edge independently with probability w_i w_j / sum(w).  On top
of the plain ensemble this module builds degree sequences with a prescribed
hub structure (a handful of nodes near the maximal weight, a poorly
connected power-law tail) and checks the concentration and spectral-radius
bounds that the downstream stability analysis relies on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "FeasibilityError",
    "PowerIterationError",
    "ExpectedDegreeSequence",
    "HeterogeneityParams",
    "Graph",
    "ConcentrationReport",
    "edge_probability",
    "build_heterogeneous_sequence",
    "sample_graph",
    "check_concentration",
    "second_order_average",
    "lambda_max",
    "laplacian",
]

_DENSE_NODE_CAP = 20_000


class FeasibilityError(ValueError):
    """A degree sequence or parameter set violates a structural constraint."""


class PowerIterationError(RuntimeError):
    """Power iteration did not converge; carries the last iterate's data."""

    def __init__(self, msg, rayleigh, residual):
        super().__init__(msg)
        self.rayleigh = rayleigh
        self.residual = residual


# ---------------------------------------------------------------------------
# degree sequences
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExpectedDegreeSequence:
    """Nonincreasing positive expected degrees w_1 >= ... >= w_n > 0.

    The edge-probability formula w_i w_j / sum(w) only yields probabilities
    when (max w)^2 <= sum(w); the constructor rejects sequences outside
    that region.
    """

    w: np.ndarray

    def __init__(self, w):
        w = np.sort(np.asarray(w, dtype=float))[::-1].copy()
        if w.size == 0:
            raise FeasibilityError("empty degree sequence")
        if not np.all(w > 0):
            raise FeasibilityError("expected degrees must be positive")
        total = float(w.sum())
        if w[0] ** 2 > total:
            raise FeasibilityError(
                f"infeasible sequence: (max w)^2 = {w[0] ** 2:.6g} exceeds "
                f"sum(w) = {total:.6g}"
            )
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return int(self.w.size)

    @property
    def total(self) -> float:
        return float(self.w.sum())

    @property
    def w_max(self) -> float:
        return float(self.w[0])

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "w": list(self.w)})

    @classmethod
    def from_json(cls, text: str) -> "ExpectedDegreeSequence":
        obj = json.loads(text)
        seq = cls(obj["w"])
        if seq.n != obj["n"]:
            raise ValueError("inconsistent sequence JSON: n != len(w)")
        return seq


@dataclass(frozen=True)
class HeterogeneityParams:
    """Knobs of the hub-plus-tail degree structure.

    ``ell`` hubs sit in [2*c0*w_max, w_max]; the remaining weights lie
    strictly between Gamma1*(log n)^(1+beta) and Gamma2*w_max^(1-gamma).
    The hub count is capped by Gamma0*w_max^theta.  Optional ``regimes``
    = (sigma, tau) pins each hub into its own band of w_max fractions.
    """

    ell: int
    theta: float
    gamma: float
    c0: float = 0.5
    Gamma0: float = 1.0
    Gamma1: float = 1.0
    Gamma2: float = 1.0
    beta: float = 0.5
    regimes: tuple[tuple[float, ...], tuple[float, ...]] | None = None

    def __post_init__(self):
        if self.ell < 1:
            raise FeasibilityError("hub count ell must be >= 1")
        if not 0 < self.theta < 1:
            raise FeasibilityError("theta must lie in (0, 1)")
        if not 0 < self.gamma < 1:
            raise FeasibilityError("gamma must lie in (0, 1)")
        if not 0 < self.c0 <= 0.5:
            raise FeasibilityError("c0 must lie in (0, 1/2]")
        for name in ("Gamma0", "Gamma1", "Gamma2", "beta"):
            if getattr(self, name) <= 0:
                raise FeasibilityError(f"{name} must be positive")
        if self.regimes is not None:
            sigma, tau = self.regimes
            sigma = tuple(float(s) for s in sigma)
            tau = tuple(float(t) for t in tau)
            if len(sigma) != self.ell or len(tau) != self.ell:
                raise FeasibilityError("regimes must provide sigma_i, tau_i per hub")
            for s, t in zip(sigma, tau):
                if not (0 < t < s <= 1):
                    raise FeasibilityError("regimes need sigma_i > tau_i in (0, 1]")
            if any(np.diff(sigma) >= 0) or any(np.diff(tau) >= 0):
                raise FeasibilityError("sigma and tau must be strictly decreasing")
            object.__setattr__(self, "regimes", (sigma, tau))

    def check_theorem_exponents(self):
        """Exponent region required by the dichotomy theorems."""
        theta_cap = (3.0 - np.sqrt(5.0)) / 2.0
        gamma_floor = (np.sqrt(5.0) - 1.0) / 2.0
        if self.theta >= theta_cap:
            raise FeasibilityError(
                f"theta = {self.theta} violates theta < (3 - sqrt 5)/2 = {theta_cap:.6f}"
            )
        if self.gamma <= gamma_floor:
            raise FeasibilityError(
                f"gamma = {self.gamma} violates gamma > (sqrt 5 - 1)/2 = {gamma_floor:.6f}"
            )


def edge_probability(w: ExpectedDegreeSequence, i: int, j: int) -> float:
    """Probability of the edge {i, j}: w_i * w_j / sum(w).  Requires i != j."""
    if i == j:
        raise ValueError("self-loops are excluded from the ensemble")
    return float(w.w[i] * w.w[j] / w.total)


def _tail_bounds(params: HeterogeneityParams, n: int, w_max: float) -> tuple[float, float]:
    lo = params.Gamma1 * np.log(n) ** (1.0 + params.beta)
    hi = params.Gamma2 * w_max ** (1.0 - params.gamma)
    return float(lo), float(hi)


def build_heterogeneous_sequence(
    params: HeterogeneityParams, n: int, w_max: float, tail_hi: float | None = None
) -> ExpectedDegreeSequence:
    """Deterministic hub-plus-tail sequence satisfying the heterogeneity rules.

    Hubs: with regimes, hub 1 sits at w_max and hub i at the midpoint of
    (sigma_i, tau_{i-1}) times w_max; without regimes, hubs interpolate
    linearly from w_max down to 2*c0*w_max.  Tail: inverse-CDF placement of
    a power law with exponent 2.5, clipped strictly inside the allowed
    band.  Quantile placement keeps the builder seed-free.

    ``tail_hi`` optionally lowers the build ceiling of the tail below the
    structural one; the declared Gamma2 ceiling then has slack, which the
    realized degrees need at moderate n.
    """
    ell = params.ell
    if ell >= n:
        raise FeasibilityError(f"hub count {ell} must be smaller than n = {n}")
    if ell >= params.Gamma0 * w_max**params.theta:
        raise FeasibilityError(
            f"[hub cardinality] ell = {ell} >= Gamma0 * w_max^theta = "
            f"{params.Gamma0 * w_max ** params.theta:.6g}"
        )
    lo, hi = _tail_bounds(params, n, w_max)
    if tail_hi is not None:
        if not lo < tail_hi <= hi:
            raise FeasibilityError(
                f"tail_hi = {tail_hi:.6g} must lie in ({lo:.6g}, {hi:.6g}]"
            )
        hi = float(tail_hi)
    if lo >= hi:
        raise FeasibilityError(
            f"[tail band] Gamma1 (log n)^(1+beta) = {lo:.6g} must be below "
            f"Gamma2 w_max^(1-gamma) = {hi:.6g}"
        )

    if params.regimes is not None:
        sigma, tau = params.regimes
        hubs = [w_max]
        for i in range(1, ell):
            frac = 0.5 * (sigma[i] + tau[i - 1])
            hubs.append(frac * w_max)
        hubs = np.array(hubs)
        # hub i must clear its own band and leave hub i+1 under tau_i
        for i in range(ell):
            if hubs[i] / w_max < sigma[i] - 1e-12:
                raise FeasibilityError(
                    f"[distinct regimes] hub {i} at {hubs[i] / w_max:.4g} w_max "
                    f"falls below sigma_{i} = {sigma[i]}"
                )
            nxt = hubs[i + 1] / w_max if i + 1 < ell else hi / w_max
            if nxt >= tau[i]:
                raise FeasibilityError(
                    f"[distinct regimes] weight after hub {i} at {nxt:.4g} w_max "
                    f"is not below tau_{i} = {tau[i]}"
                )
    else:
        if ell == 1:
            hubs = np.array([w_max])
        else:
            hubs = np.linspace(w_max, 2.0 * params.c0 * w_max, ell)

    if hubs[-1] < 2.0 * params.c0 * w_max - 1e-12:
        raise FeasibilityError(
            f"[massive hubs] smallest hub {hubs[-1]:.6g} is below "
            f"2 c0 w_max = {2 * params.c0 * w_max:.6g}"
        )
    if hi >= hubs[-1]:
        raise FeasibilityError(
            f"[scale separation] tail ceiling {hi:.6g} reaches the smallest hub "
            f"{hubs[-1]:.6g}"
        )

    m = n - ell
    # inverse CDF of a density ~ x^-2.5 truncated to (lo, hi), shrunk a hair
    # so the tail sits strictly inside the open band
    pad = 1e-9 * (hi - lo)
    a, b = lo + pad, hi - pad
    u = (np.arange(m) + 0.5) / m
    p = 1.5
    tail = (a**-p - u * (a**-p - b**-p)) ** (-1.0 / p)

    seq = ExpectedDegreeSequence(np.concatenate([hubs, tail]))
    if seq.w_max != w_max:
        raise FeasibilityError("tail exceeded w_max; inconsistent parameters")
    return seq


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """splitmix64 output function on uint64 arrays (wrapping arithmetic)."""
    z = x.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


def pair_uniforms(seed: int, k: np.ndarray) -> np.ndarray:
    """Uniform [0,1) draw for pair index k, independent of evaluation order."""
    state = np.uint64(seed) + (k.astype(np.uint64) + np.uint64(1)) * _GOLDEN
    h = _splitmix64(state)
    return (h >> np.uint64(11)) * 2.0**-53


def seed_stream(master_seed: int, count: int) -> list[int]:
    """Derive `count` child seeds from a master seed (splitmix stream)."""
    ks = np.arange(count, dtype=np.uint64)
    state = np.uint64(master_seed) ^ np.uint64(0xD1B54A32D192ED03)
    h = _splitmix64(state + (ks + np.uint64(1)) * _GOLDEN)
    return [int(x) for x in h]


@dataclass(frozen=True, eq=False)
class Graph:
    """Sampled simple undirected graph: edge list plus degree vector."""

    n: int
    edges: np.ndarray  # (m, 2) int array, i < j
    seed: int | None = None
    _adj: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        edges.setflags(write=False)
        object.__setattr__(self, "edges", edges)

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    @property
    def adjacency(self) -> sp.csr_matrix:
        """Symmetric {0,1} adjacency, zero diagonal, CSR."""
        if "csr" not in self._adj:
            i, j = self.edges[:, 0], self.edges[:, 1]
            data = np.ones(2 * self.m, dtype=np.int64)
            adj = sp.coo_matrix(
                (data, (np.concatenate([i, j]), np.concatenate([j, i]))),
                shape=(self.n, self.n),
            ).tocsr()
            self._adj["csr"] = adj
        return self._adj["csr"]

    def dense_adjacency(self) -> np.ndarray:
        if self.n > _DENSE_NODE_CAP:
            raise ValueError(f"dense adjacency capped at n = {_DENSE_NODE_CAP}")
        return self.adjacency.toarray()

    @property
    def degrees(self) -> np.ndarray:
        if "deg" not in self._adj:
            deg = np.zeros(self.n, dtype=np.int64)
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
            deg.setflags(write=False)
            self._adj["deg"] = deg
        return self._adj["deg"]

    def to_json(self) -> str:
        return json.dumps(
            {"n": self.n, "edges": self.edges.tolist(), "seed": self.seed}
        )

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        obj = json.loads(text)
        return cls(n=obj["n"], edges=np.array(obj["edges"]).reshape(-1, 2),
                   seed=obj.get("seed"))


def sample_graph(w: ExpectedDegreeSequence, seed: int) -> Graph:
    """Sample the ensemble: edge {i,j} present iff its pair-uniform < p_ij.

    Each unordered pair gets one uniform derived by hashing (seed, pair
    index), so the draw is reproducible and independent of traversal order.
    """
    n = w.n
    weights = w.w
    total = w.total
    rows_i = []
    rows_j = []
    block = max(1, 2**22 // max(n, 1))
    for start in range(0, n, block):
        stop = min(start + block, n)
        for i in range(start, stop):
            if i + 1 >= n:
                continue
            j = np.arange(i + 1, n)
            p = weights[i] * weights[j] / total
            u = pair_uniforms(seed, np.int64(i) * n + j)
            hit = j[u < p]
            if hit.size:
                rows_i.append(np.full(hit.size, i, dtype=np.int64))
                rows_j.append(hit)
    if rows_i:
        edges = np.column_stack([np.concatenate(rows_i), np.concatenate(rows_j)])
    else:
        edges = np.empty((0, 2), dtype=np.int64)
    return Graph(n=n, edges=edges, seed=int(seed))


# ---------------------------------------------------------------------------
# checks and spectral quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConcentrationReport:
    """Per-node degree deviations against the 2 sqrt(log n * max(w, log n)) bound.

    ``event`` is the all-nodes concentration event; ``hub_tail_event`` and
    ``regime_event`` are the corollary-level events (None when the needed
    parameters were not supplied).  ``floor`` is the guaranteed probability
    1 - 2 n^(-1/5) of the concentration event.
    """

    deviations: np.ndarray
    bounds: np.ndarray
    event: bool
    floor: float
    hub_tail_event: bool | None = None
    regime_event: bool | None = None

    def to_csv(self, kappa: np.ndarray, w: np.ndarray) -> str:
        lines = ["node,kappa,w,deviation,bound,pass"]
        ok = self.deviations <= self.bounds
        for i in range(len(kappa)):
            lines.append(
                f"{i},{int(kappa[i])},{w[i]:.12g},{self.deviations[i]:.12g},"
                f"{self.bounds[i]:.12g},{int(ok[i])}"
            )
        return "\n".join(lines) + "\n"


def check_concentration(
    g: Graph,
    w: ExpectedDegreeSequence,
    params: HeterogeneityParams | None = None,
) -> ConcentrationReport:
    """Evaluate the degree-concentration event and its corollary events."""
    n = g.n
    kappa = g.degrees.astype(float)
    logn = np.log(n)
    bounds = 2.0 * np.sqrt(logn) * np.sqrt(np.maximum(w.w, logn))
    deviations = np.abs(kappa - w.w)
    event = bool(np.all(deviations <= bounds))
    floor = 1.0 - 2.0 * n ** (-1.0 / 5.0)

    hub_tail_event = None
    regime_event = None
    if params is not None:
        ell = params.ell
        w_max = w.w_max
        tail_cap = 1.5 * params.Gamma2 * w_max ** (1.0 - params.gamma)
        hub_floor = 0.5 * params.c0 * w_max
        hub_tail_event = bool(
            (ell >= n or kappa[ell:].max(initial=0.0) < tail_cap)
            and kappa[:ell].min() > hub_floor
        )
        if params.regimes is not None:
            sigma, tau = params.regimes
            ok = True
            for j in range(1, ell):
                ok &= kappa[j:].max() < 1.5 * tau[j - 1] * w_max
                ok &= kappa[:j].min() > 0.5 * sigma[j - 1] * w_max
            regime_event = bool(ok)

    return ConcentrationReport(
        deviations=deviations,
        bounds=bounds,
        event=event,
        floor=floor,
        hub_tail_event=hub_tail_event,
        regime_event=regime_event,
    )


def second_order_average(w: ExpectedDegreeSequence) -> float:
    """Second-order average degree sum(w^2) / sum(w)."""
    return float(np.dot(w.w, w.w) / w.total)


def lambda_max(g: Graph, tol: float = 1e-8, max_iter: int = 10_000) -> float:
    """Largest adjacency eigenvalue by shifted power iteration.

    Iterates on A + I from a strictly positive start vector so the Perron
    value dominates even on bipartite graphs, and reads off the Rayleigh
    quotient of A itself.
    """
    if g.n == 0:
        raise ValueError("empty graph")
    if g.m == 0:
        return 0.0
    adj = g.adjacency.astype(float)
    x = np.full(g.n, 1.0 / np.sqrt(g.n))
    rq = 0.0
    for _ in range(max_iter):
        y = adj @ x + x
        ny = np.linalg.norm(y)
        x_new = y / ny
        rq_new = float(x_new @ (adj @ x_new))
        residual = np.linalg.norm(adj @ x_new - rq_new * x_new)
        if abs(rq_new - rq) <= tol and residual <= max(10 * tol, tol * max(rq_new, 1.0)):
            return rq_new
        rq, x = rq_new, x_new
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} iterations",
        rayleigh=rq,
        residual=float(np.linalg.norm(adj @ x - rq * x)),
    )


def laplacian(g: Graph, dense: bool = True):
    """Combinatorial Laplacian L = diag(kappa) - A (integer, PSD)."""
    lap = sp.diags(g.degrees.astype(np.int64)) - g.adjacency
    if dense and g.n <= _DENSE_NODE_CAP:
        return lap.toarray()
    return lap.tocsr()
