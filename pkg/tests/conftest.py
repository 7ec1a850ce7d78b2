import numpy as np
import pytest

from heterodyn import (
    CouplingMatrix,
    DriftFamily,
    ExpectedDegreeSequence,
    Graph,
    HeterogeneityParams,
)


def star_graph(leaves: int) -> Graph:
    """Hub node 0 connected to `leaves` leaf nodes."""
    edges = np.array([[0, j] for j in range(1, leaves + 1)], dtype=np.int64)
    return Graph(n=leaves + 1, edges=edges, seed=None)


def complete_graph(n: int) -> Graph:
    edges = np.array([[i, j] for i in range(n) for j in range(i + 1, n)],
                     dtype=np.int64)
    return Graph(n=n, edges=edges, seed=None)


def path_graph(n: int) -> Graph:
    edges = np.array([[i, i + 1] for i in range(n - 1)], dtype=np.int64)
    return Graph(n=n, edges=edges, seed=None)


@pytest.fixture
def scalar_coupling():
    return CouplingMatrix(np.array([[1.0]]))


@pytest.fixture
def unit_drift():
    return DriftFamily(d=1, kind="constant", a=1.0)


@pytest.fixture
def small_params():
    return HeterogeneityParams(ell=2, theta=0.3, gamma=0.65, c0=0.5,
                               Gamma0=1.0, Gamma1=0.4, Gamma2=2.0, beta=0.1)


@pytest.fixture
def flat_sequence():
    return ExpectedDegreeSequence([2.0, 2.0, 2.0, 2.0])
