"""Communication graphs and consensus mixing matrices.

A mixing matrix ``W`` is symmetric, has unit row sums and is supported on
the graph edges plus the diagonal.  Its spectral quantity ``eta`` is the
largest eigenvalue magnitude on the subspace orthogonal to the all-ones
vector and controls how fast one round of neighbour averaging contracts
disagreement between nodes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

EIG_TOL = 1e-10
ROW_SUM_TOL = 1e-12


class GraphError(ValueError):
    """Base class for invalid graph input."""


class DisconnectedGraphError(GraphError):
    pass


class SelfLoopError(GraphError):
    pass


class NodeIndexError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class MixingMatrixError(ValueError):
    """Raised when a weight matrix violates the mixing assumptions."""

    def __init__(self, message: str, eta: float | None = None, w: np.ndarray | None = None):
        super().__init__(message)
        self.eta = eta
        self.w = w


@dataclass(frozen=True)
class Graph:
    m: int
    edges: frozenset[tuple[int, int]]

    @property
    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.m, dtype=int)
        for i, k in self.edges:
            deg[i] += 1
            deg[k] += 1
        return deg

    def neighbors(self, i: int) -> list[int]:
        return sorted({k if j == i else j for j, k in self.edges if i in (j, k)})

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.m, self.m))
        for i, k in self.edges:
            a[i, k] = a[k, i] = 1.0
        return a

    def laplacian(self) -> np.ndarray:
        a = self.adjacency()
        return np.diag(a.sum(axis=1)) - a


def build_graph(m: int, edges: Iterable[tuple[int, int]]) -> Graph:
    """Validate an undirected edge list and return a connected ``Graph``."""
    if m < 1:
        raise GraphError(f"node count must be positive, got {m}")
    seen: set[tuple[int, int]] = set()
    for i, k in edges:
        i, k = int(i), int(k)
        if not (0 <= i < m and 0 <= k < m):
            raise NodeIndexError(f"edge ({i}, {k}) has an endpoint outside [0, {m})")
        if i == k:
            raise SelfLoopError(f"self-loop at node {i}")
        key = (min(i, k), max(i, k))
        if key in seen:
            raise DuplicateEdgeError(f"duplicate edge {key}")
        seen.add(key)

    adj: dict[int, list[int]] = {i: [] for i in range(m)}
    for i, k in seen:
        adj[i].append(k)
        adj[k].append(i)
    reached = {0}
    queue = deque([0])
    while queue:
        for k in adj[queue.popleft()]:
            if k not in reached:
                reached.add(k)
                queue.append(k)
    if len(reached) != m:
        missing = sorted(set(range(m)) - reached)
        raise DisconnectedGraphError(f"nodes {missing} are unreachable from node 0")
    return Graph(m, frozenset(seen))


# Named fixtures ----------------------------------------------------------

def ring(m: int) -> Graph:
    if m <= 2:
        return path(m)
    return build_graph(m, [(i, (i + 1) % m) for i in range(m)])


def path(m: int) -> Graph:
    return build_graph(m, [(i, i + 1) for i in range(m - 1)])


def star(m: int, center: int = 0) -> Graph:
    return build_graph(m, [(center, k) for k in range(m) if k != center])


def complete(m: int) -> Graph:
    return build_graph(m, [(i, k) for i in range(m) for k in range(i + 1, m)])


def erdos_renyi(m: int, p: float, seed: int = 0) -> Graph:
    """G(m, p) with a fixed seed; raises ``DisconnectedGraphError`` if unlucky."""
    rng = np.random.default_rng(seed)
    iu, ku = np.triu_indices(m, k=1)
    keep = rng.random(iu.size) < p
    return build_graph(m, zip(iu[keep].tolist(), ku[keep].tolist()))


TOPOLOGIES = {"ring": ring, "path": path, "star": star, "complete": complete}


def make_topology(name: str, m: int, p: float = 0.5, seed: int = 0) -> Graph:
    if name in ("erdos_renyi", "er"):
        return erdos_renyi(m, p, seed)
    try:
        return TOPOLOGIES[name](m)
    except KeyError:
        raise GraphError(f"unknown topology {name!r}") from None


def parse_edge_list(text: str) -> Graph:
    """Parse the ``m=<count>`` header plus ``i k`` lines format."""
    m = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m is None:
            key, sep, value = line.partition("=")
            if not sep or key.strip() != "m":
                raise GraphError(f"line {lineno}: expected header 'm=<count>', got {raw!r}")
            m = int(value)
            continue
        parts = line.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'i k', got {raw!r}")
        edges.append((int(parts[0]), int(parts[1])))
    if m is None:
        raise GraphError("missing 'm=<count>' header")
    return build_graph(m, edges)


def read_edge_list(path: str | Path) -> Graph:
    return parse_edge_list(Path(path).read_text(encoding="utf-8"))


def format_edge_list(g: Graph) -> str:
    lines = [f"m={g.m}"] + [f"{i} {k}" for i, k in sorted(g.edges)]
    return "\n".join(lines) + "\n"


# Mixing matrices ---------------------------------------------------------

@dataclass(frozen=True)
class MixingMatrix:
    m: int
    w: np.ndarray = field(repr=False)
    eta: float

    def __post_init__(self):
        self.w.setflags(write=False)


def spectral_eta(w: np.ndarray) -> float:
    """Largest eigenvalue magnitude of ``w`` orthogonal to the ones vector.

    One copy of the eigenvalue 1 (the consensus direction) is dropped and the
    largest magnitude among the remaining eigenvalues is returned.  For a
    single node the orthogonal subspace is empty and the result is 0.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise MixingMatrixError(f"expected a square matrix, got shape {w.shape}")
    if np.max(np.abs(w - w.T), initial=0.0) > ROW_SUM_TOL:
        raise MixingMatrixError("matrix is not symmetric", w=w)
    if np.max(np.abs(w.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise MixingMatrixError("rows do not sum to one", w=w)
    if w.shape[0] == 1:
        return 0.0
    lam = np.linalg.eigvalsh(w)
    rest = np.delete(lam, np.argmin(np.abs(lam - 1.0)))
    eta = float(np.max(np.abs(rest)))
    # snap round-off around exact fixtures (eta = 0, eta = 1)
    if eta < EIG_TOL:
        eta = 0.0
    elif abs(eta - 1.0) < EIG_TOL:
        eta = 1.0
    return eta


def _finish(g: Graph, w: np.ndarray, scheme: str) -> MixingMatrix:
    eta = spectral_eta(w)
    if eta >= 1.0 - EIG_TOL:
        raise MixingMatrixError(
            f"{scheme} weights on this graph give eta = {eta:.6g} >= 1", eta=eta, w=w
        )
    return MixingMatrix(g.m, w, eta)


def _metropolis_matrix(g: Graph) -> np.ndarray:
    deg = g.degrees
    w = np.zeros((g.m, g.m))
    for i, k in g.edges:
        w[i, k] = w[k, i] = 1.0 / (1.0 + max(deg[i], deg[k]))
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def _max_degree_matrix(g: Graph) -> np.ndarray:
    deg = g.degrees
    if g.m == 1:
        return np.ones((1, 1))
    dmax = deg.max()
    w = g.adjacency() / dmax
    np.fill_diagonal(w, 1.0 - deg / dmax)
    return w


def default_laplacian_gamma(g: Graph) -> float:
    """2 / (largest + second smallest Laplacian eigenvalue)."""
    if g.m == 1:
        return 1.0
    lam = np.linalg.eigvalsh(g.laplacian())
    return 2.0 / (lam[-1] + lam[1])


def _laplacian_matrix(g: Graph, gamma: float) -> np.ndarray:
    w = gamma * g.adjacency()
    np.fill_diagonal(w, 1.0 - gamma * g.degrees)
    return w


def metropolis_weights(g: Graph) -> MixingMatrix:
    w = _metropolis_matrix(g)
    eta = spectral_eta(w)
    # cannot fail on a connected graph
    assert eta < 1.0 - EIG_TOL, eta
    return MixingMatrix(g.m, w, eta)


def max_degree_weights(g: Graph) -> MixingMatrix:
    return _finish(g, _max_degree_matrix(g), "maximum-degree")


def laplacian_weights(g: Graph, gamma: float | None = None) -> MixingMatrix:
    if gamma is None:
        gamma = default_laplacian_gamma(g)
    elif gamma < 0:
        raise MixingMatrixError(f"gamma must be nonnegative, got {gamma}")
    return _finish(g, _laplacian_matrix(g, gamma), "Laplacian")


def weight_matrix(g: Graph, scheme: str, gamma: float | None = None) -> np.ndarray:
    """Raw weights for ``scheme`` without the ``eta < 1`` gate."""
    if scheme == "metropolis":
        return _metropolis_matrix(g)
    if scheme in ("maxdegree", "max_degree"):
        return _max_degree_matrix(g)
    if scheme == "laplacian":
        return _laplacian_matrix(g, default_laplacian_gamma(g) if gamma is None else gamma)
    raise GraphError(f"unknown weight scheme {scheme!r}")


def mixing_matrix(g: Graph, scheme: str = "metropolis", gamma: float | None = None) -> MixingMatrix:
    if scheme == "metropolis":
        return metropolis_weights(g)
    if scheme in ("maxdegree", "max_degree"):
        return max_degree_weights(g)
    if scheme == "laplacian":
        return laplacian_weights(g, gamma)
    raise GraphError(f"unknown weight scheme {scheme!r}")


@dataclass
class MixingReport:
    symmetry_residual: float
    row_sum_deviation: float
    eta: float
    symmetric: bool
    stochastic: bool
    contractive: bool

    @property
    def passed(self) -> bool:
        return self.symmetric and self.stochastic and self.contractive

    def __str__(self) -> str:
        status = "pass" if self.passed else "FAIL"
        return (
            f"{status}: eta={self.eta:.12g} symmetry_residual={self.symmetry_residual:.3g} "
            f"row_sum_deviation={self.row_sum_deviation:.3g}"
        )


def validate_mixing(w: MixingMatrix | np.ndarray) -> MixingReport:
    """Check symmetry, unit row sums and ``eta < 1``; failures go in the report."""
    arr = np.asarray(w.w if isinstance(w, MixingMatrix) else w, dtype=float)
    sym = float(np.max(np.abs(arr - arr.T), initial=0.0))
    dev = float(np.max(np.abs(arr.sum(axis=1) - 1.0)))
    symmetric = sym <= ROW_SUM_TOL
    stochastic = dev <= ROW_SUM_TOL
    if symmetric and stochastic:
        eta = spectral_eta(arr)
    else:
        # still report a spectral figure for broken input
        lam = np.sort(np.abs(np.linalg.eigvals(arr)))
        eta = float(lam[-2]) if lam.size > 1 else 0.0
    return MixingReport(sym, dev, eta, symmetric, stochastic, eta < 1.0 - EIG_TOL)
