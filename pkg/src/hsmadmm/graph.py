"""Communication topologies and the consensus constraint operators over them.

A stacked network variable lives in R^{n p} with agent blocks in node order.
The edge operator maps it to R^{(m+n) p}: signed per-edge differences on top
(one block per edge, oriented low index to high index), an identity copy of
the stacked variable below. Applying the transpose of the edge operator to
its own output reproduces the graph Laplacian action plus the identity, so
the smallest squared singular value of the operator is exactly 1 on every
connected graph.

Implicit neighbor-sum application is the default everywhere; dense matrices
are materialized only for verification and spectral checks on small networks
(guarded by ``DENSE_LIMIT``).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

# Dense matrices are for verification only; refuse to build them past this.
DENSE_LIMIT = 4096

TOPOLOGY_KINDS = ("ring", "star", "hub_leaf", "random_connected", "from_edge_list")


class GraphError(Exception):
    """Base class for topology and operator failures."""


class InvalidParam(GraphError):
    """A construction parameter is out of range."""


class NotConnected(GraphError):
    """Sampling could not produce a connected graph."""


class DimensionMismatch(GraphError):
    """An operator was applied to a vector of the wrong size."""


class DenseRequired(GraphError):
    """The requested computation needs dense matrices beyond the size guard."""


@dataclass
class Graph:
    """Undirected connected graph with canonical low-to-high edge orientation.

    Parameters
    ----------
    n : int
        Node count (n >= 1; a single isolated node is the degenerate case).
    edges : sequence of (int, int)
        Undirected edges; pairs are normalized to (min, max). Self loops and
        duplicates are rejected, as are disconnected graphs.
    p : int
        Per-node variable dimension carried along for operator construction.
    """

    n: int
    edges: tuple = ()
    p: int = 1
    degree: np.ndarray = field(init=False, repr=False)
    neighbors: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidParam(f"node count must be >= 1, got {self.n}")
        if self.p < 1:
            raise InvalidParam(f"block dimension must be >= 1, got {self.p}")
        canon = []
        seen = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise InvalidParam(f"self loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise InvalidParam(f"edge ({i}, {j}) out of range for n={self.n}")
            e = (i, j) if i < j else (j, i)
            if e in seen:
                raise InvalidParam(f"duplicate edge {e}")
            seen.add(e)
            canon.append(e)
        self.edges = tuple(canon)

        deg = np.zeros(self.n, dtype=np.int64)
        nbrs = [[] for _ in range(self.n)]
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
            nbrs[i].append(j)
            nbrs[j].append(i)
        self.degree = deg
        self.neighbors = tuple(tuple(sorted(v)) for v in nbrs)

        if not self._connected():
            raise NotConnected(f"graph with {self.n} nodes and {self.m} edges is not connected")

    def _connected(self) -> bool:
        if self.n == 1:
            return True
        seen = {0}
        queue = deque([0])
        while queue:
            u = queue.popleft()
            for v in self.neighbors[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == self.n

    @property
    def m(self) -> int:
        return len(self.edges)

    def canonical_edge(self, i: int, j: int) -> tuple:
        return (i, j) if i < j else (j, i)


def build_topology(kind: str, n: int, seed: int = 0, *, p: int = 1,
                   prob: float | None = None, hubs: int = 1,
                   edges=None, max_attempts: int = 1000) -> Graph:
    """Construct a named topology deterministically.

    Parameters
    ----------
    kind : str
        One of ``ring``, ``star``, ``hub_leaf``, ``random_connected``,
        ``from_edge_list``.
    n : int
        Node count, n >= 2.
    seed : int
        Seed for the ``random_connected`` sampler; ignored by the
        deterministic kinds, so every kind is a pure function of its
        arguments.
    p : int
        Per-node block dimension stored on the graph.
    prob : float
        Edge probability in (0, 1] for ``random_connected``.
    hubs : int
        For ``hub_leaf``: number of mutually connected hub nodes; remaining
        nodes are leaves attached round-robin. ``hubs=1`` is a star with one
        center.
    edges : sequence of pairs
        Edge list for ``from_edge_list``.
    max_attempts : int
        Rejection-sampling budget for ``random_connected``.
    """
    if n < 2:
        raise InvalidParam(f"build_topology requires n >= 2, got {n}")
    if kind == "ring":
        e = [(i, i + 1) for i in range(n - 1)]
        if n > 2:
            e.append((0, n - 1))
        return Graph(n, tuple(e), p)
    if kind == "star":
        return Graph(n, tuple((0, j) for j in range(1, n)), p)
    if kind == "hub_leaf":
        if not (1 <= hubs < n):
            raise InvalidParam(f"hub_leaf needs 1 <= hubs < n, got hubs={hubs}, n={n}")
        e = [(i, j) for i in range(hubs) for j in range(i + 1, hubs)]
        for leaf in range(hubs, n):
            e.append(((leaf - hubs) % hubs, leaf))
        return Graph(n, tuple(e), p)
    if kind == "random_connected":
        if prob is None or not (0.0 < prob <= 1.0):
            raise InvalidParam(f"random_connected needs edge probability in (0, 1], got {prob}")
        rng = np.random.default_rng(seed)
        for _ in range(max_attempts):
            mask = rng.random((n, n)) < prob
            e = tuple((i, j) for i in range(n) for j in range(i + 1, n) if mask[i, j])
            try:
                return Graph(n, e, p)
            except NotConnected:
                continue
        raise NotConnected(f"no connected sample in {max_attempts} attempts (n={n}, prob={prob})")
    if kind == "from_edge_list":
        if edges is None:
            raise InvalidParam("from_edge_list requires an edge list")
        return Graph(n, tuple(edges), p)
    raise InvalidParam(f"unknown topology kind {kind!r}")


def incidence_matrix(g: Graph) -> np.ndarray:
    """Edge-by-node incidence matrix: row k has +1 at the low endpoint of
    edge k and -1 at the high endpoint."""
    M = np.zeros((g.m, g.n))
    for k, (i, j) in enumerate(g.edges):
        M[k, i] = 1.0
        M[k, j] = -1.0
    return M


def laplacian(g: Graph) -> np.ndarray:
    """Graph Laplacian built from degrees and adjacency (independent of the
    incidence construction, which must reproduce it as M^T M)."""
    L = np.diag(g.degree.astype(float))
    for i, j in g.edges:
        L[i, j] -= 1.0
        L[j, i] -= 1.0
    return L


def load_edge_list(path, n: int | None = None, p: int = 1) -> Graph:
    """Load a whitespace-separated ``i j`` edge list (0-based, one per line).

    Blank lines and ``#`` comments are skipped. ``n`` defaults to
    ``max node index + 1``. The resulting graph is fully validated.
    """
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise InvalidParam(f"{path}:{ln}: expected 'i j', got {raw.rstrip()!r}")
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise InvalidParam(f"{path}:{ln}: non-integer node id") from exc
            edges.append((i, j))
    if n is None:
        if not edges:
            raise InvalidParam(f"{path}: empty edge list and no node count given")
        n = max(max(e) for e in edges) + 1
    return Graph(n, tuple(edges), p)


def save_edge_list(g: Graph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, j in g.edges:
            fh.write(f"{i} {j}\n")


class ConstraintOps:
    """The stacked consensus operator pair for a graph at block size p.

    ``apply_A`` maps R^{np} to R^{(m+n)p}: per-edge differences on top, the
    identity below. ``apply_B`` maps R^{np} to the same codomain: zeros on
    top, negated identity below. ``mode`` selects the implicit neighbor-sum
    path (default) or dense matrix products (verification).
    """

    def __init__(self, graph: Graph, p: int | None = None, mode: str = "implicit"):
        if mode not in ("implicit", "dense"):
            raise InvalidParam(f"mode must be 'implicit' or 'dense', got {mode!r}")
        self.graph = graph
        self.p = graph.p if p is None else int(p)
        if self.p < 1:
            raise InvalidParam(f"block dimension must be >= 1, got {self.p}")
        self.mode = mode
        self._ei = np.array([e[0] for e in graph.edges], dtype=np.int64)
        self._ej = np.array([e[1] for e in graph.edges], dtype=np.int64)
        self._dense_A = None
        self._dense_B = None

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def m(self) -> int:
        return self.graph.m

    @property
    def dim_in(self) -> int:
        return self.n * self.p

    @property
    def dim_out(self) -> int:
        return (self.m + self.n) * self.p

    def _check(self, v, size, name):
        v = np.asarray(v, dtype=float)
        if v.shape != (size,):
            raise DimensionMismatch(f"{name} expects shape ({size},), got {v.shape}")
        return v

    def _guard_dense(self):
        if self.dim_in > DENSE_LIMIT:
            raise DenseRequired(
                f"dense matrices need n*p <= {DENSE_LIMIT}, got {self.dim_in}")

    def dense_A(self) -> np.ndarray:
        self._guard_dense()
        if self._dense_A is None:
            M = incidence_matrix(self.graph)
            self._dense_A = np.vstack([np.kron(M, np.eye(self.p)), np.eye(self.dim_in)])
        return self._dense_A

    def dense_B(self) -> np.ndarray:
        self._guard_dense()
        if self._dense_B is None:
            self._dense_B = np.vstack(
                [np.zeros((self.m * self.p, self.dim_in)), -np.eye(self.dim_in)])
        return self._dense_B

    def dense_AtA(self) -> np.ndarray:
        self._guard_dense()
        return np.kron(laplacian(self.graph), np.eye(self.p)) + np.eye(self.dim_in)

    def apply_A(self, x) -> np.ndarray:
        x = self._check(x, self.dim_in, "apply_A")
        if self.mode == "dense":
            return self.dense_A() @ x
        X = x.reshape(self.n, self.p)
        top = X[self._ei] - X[self._ej] if self.m else np.zeros((0, self.p))
        return np.concatenate([top.ravel(), x])

    def apply_At(self, u) -> np.ndarray:
        u = self._check(u, self.dim_out, "apply_At")
        if self.mode == "dense":
            return self.dense_A().T @ u
        top = u[: self.m * self.p].reshape(self.m, self.p)
        out = u[self.m * self.p:].reshape(self.n, self.p).copy()
        np.add.at(out, self._ei, top)
        np.subtract.at(out, self._ej, top)
        return out.ravel()

    def apply_AtA(self, x) -> np.ndarray:
        x = self._check(x, self.dim_in, "apply_AtA")
        if self.mode == "dense":
            return self.dense_AtA() @ x
        X = x.reshape(self.n, self.p)
        out = X.copy()
        if self.m:
            diff = X[self._ei] - X[self._ej]
            np.add.at(out, self._ei, diff)
            np.subtract.at(out, self._ej, diff)
        return out.ravel()

    def apply_B(self, y) -> np.ndarray:
        y = self._check(y, self.dim_in, "apply_B")
        return np.concatenate([np.zeros(self.m * self.p), -y])

    def apply_Bt(self, u) -> np.ndarray:
        u = self._check(u, self.dim_out, "apply_Bt")
        return -u[self.m * self.p:]

    def residual(self, x, y) -> np.ndarray:
        """A x + B y, assembled implicitly."""
        x = self._check(x, self.dim_in, "residual")
        y = self._check(y, self.dim_in, "residual")
        X = x.reshape(self.n, self.p)
        top = X[self._ei] - X[self._ej] if self.m else np.zeros((0, self.p))
        return np.concatenate([top.ravel(), x - y])


def smallest_singular_sq_A(ops: ConstraintOps) -> float:
    """Smallest squared singular value of the edge-plus-identity operator,
    from the Laplacian spectrum shifted by one. Equals 1 on every connected
    graph."""
    if ops.graph.n * ops.p > DENSE_LIMIT:
        raise DenseRequired(
            f"spectral check needs n*p <= {DENSE_LIMIT}, got {ops.graph.n * ops.p}")
    eigs = np.linalg.eigvalsh(laplacian(ops.graph))
    return float(eigs[0] + 1.0)


def singular_sq_extremes(ops: ConstraintOps) -> tuple:
    """(smallest, largest) squared singular values via the Laplacian spectrum."""
    if ops.graph.n * ops.p > DENSE_LIMIT:
        raise DenseRequired(
            f"spectral check needs n*p <= {DENSE_LIMIT}, got {ops.graph.n * ops.p}")
    eigs = np.linalg.eigvalsh(laplacian(ops.graph))
    return float(eigs[0] + 1.0), float(eigs[-1] + 1.0)
