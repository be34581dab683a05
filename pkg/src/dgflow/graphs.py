"""Weighted graphs and reversible Markov kernels.

Graph classes cover the synthetic benchmark families: complete, erdos_renyi,
d_regular, watts_strogatz, sbm, delaunay, emst, k_partite, grid, torus,
apollonian.  Kernels are random-walk normalizations of edge weights, which
gives detailed balance exactly with a closed-form stationary distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.spatial import Delaunay, distance_matrix
from scipy.sparse.csgraph import minimum_spanning_tree

from .errors import GenerationError, NumericalError, ParameterError

GRAPH_CLASSES = (
    "complete",
    "erdos_renyi",
    "d_regular",
    "watts_strogatz",
    "sbm",
    "delaunay",
    "emst",
    "k_partite",
    "grid",
    "torus",
    "apollonian",
)

DEFAULT_WEIGHT_RANGE = (0.5, 1.5)

_CONNECTIVITY_RETRIES = 50


@dataclass
class WeightedGraph:
    """Undirected, connected, positively weighted graph.

    Edges are stored once with i < j.
    """

    n: int
    edges: list  # list of (i, j, w) with i < j, w > 0
    class_tag: str
    seed: int

    def validate(self):
        if self.n < 2:
            raise ParameterError("graph needs at least 2 vertices")
        seen = set()
        for i, j, w in self.edges:
            if i == j:
                raise ParameterError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ParameterError(f"edge ({i},{j}) out of range")
            if w <= 0:
                raise ParameterError(f"nonpositive weight on edge ({i},{j})")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ParameterError(f"duplicate edge ({i},{j})")
            seen.add(key)
        if not _is_connected(self.n, self.edges):
            raise ParameterError("graph is not connected")

    def adjacency(self) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            W[i, j] = w
            W[j, i] = w
        return W

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "class_tag": self.class_tag,
            "seed": self.seed,
            "edges": [[int(i), int(j), float(w)] for i, j, w in self.edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WeightedGraph":
        g = cls(
            n=int(d["n"]),
            edges=[(int(i), int(j), float(w)) for i, j, w in d["edges"]],
            class_tag=d["class_tag"],
            seed=int(d["seed"]),
        )
        g.validate()
        return g


@dataclass
class MarkovChain:
    """Row-stochastic, irreducible, reversible kernel with stationary pi."""

    n: int
    K: np.ndarray
    pi: np.ndarray

    def validate(self):
        rep = validate_chain(self)
        if not rep.all_ok():
            raise ParameterError(f"invalid Markov chain: {rep}")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "K": [float(x) for x in self.K.ravel()],
            "pi": [float(x) for x in self.pi],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MarkovChain":
        n = int(d["n"])
        K = np.asarray(d["K"], dtype=float).reshape(n, n)
        pi = np.asarray(d["pi"], dtype=float)
        return cls(n=n, K=K, pi=pi)


@dataclass
class ValidationReport:
    row_stochastic: bool
    irreducible: bool
    reversible: bool
    pi_positive: bool
    row_sum_residual: float
    detailed_balance_residual: float
    pi_sum_residual: float

    def all_ok(self) -> bool:
        return (
            self.row_stochastic
            and self.irreducible
            and self.reversible
            and self.pi_positive
        )


def _is_connected(n: int, edges) -> bool:
    adj = [[] for _ in range(n)]
    for i, j, _ in edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = [False] * n
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                count += 1
                stack.append(v)
    return count == n


def _grid_dims(n: int, params: dict):
    rows = params.get("rows")
    cols = params.get("cols")
    if rows is not None and cols is not None:
        if rows * cols != n:
            raise ParameterError(f"rows*cols = {rows * cols} != n = {n}")
        return rows, cols
    # nearest-to-square factorization; primes fall back to a 1 x n path
    best = (1, n)
    for r in range(2, int(np.sqrt(n)) + 1):
        if n % r == 0:
            best = (r, n // r)
    return best


def _topology(class_tag: str, n: int, params: dict, rng: np.random.Generator):
    """Return an edge set {(i, j) with i < j} for one sample of the class."""
    if class_tag == "complete":
        return {(i, j) for i in range(n) for j in range(i + 1, n)}

    if class_tag == "erdos_renyi":
        p = params.get("p", 0.5)
        if not 0 < p <= 1:
            raise ParameterError(f"erdos_renyi needs p in (0,1], got {p}")
        # lexicographic pair sweep, one uniform draw per pair
        return {
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if rng.random() < p
        }

    if class_tag == "d_regular":
        if "d" in params:
            d = params["d"]
        else:
            d = 3 if n > 3 else 2
            if (n * d) % 2 != 0:
                d -= 1
        if d >= n:
            raise ParameterError(f"d_regular needs d < n, got d={d}, n={n}")
        if (n * d) % 2 != 0:
            raise ParameterError(f"d_regular needs n*d even, got n={n}, d={d}")
        G = nx.random_regular_graph(d, n, seed=int(rng.integers(2**31)))
        return {(min(u, v), max(u, v)) for u, v in G.edges()}

    if class_tag == "watts_strogatz":
        k = params.get("k", min(4, n - 1 - (n % 2 == 0)))
        k = max(2, min(k, n - 1))
        rewire = params.get("rewire", 0.3)
        G = nx.watts_strogatz_graph(n, k, rewire, seed=int(rng.integers(2**31)))
        return {(min(u, v), max(u, v)) for u, v in G.edges()}

    if class_tag == "sbm":
        blocks = params.get("blocks", 2)
        p_in = params.get("p_in", 0.7)
        p_out = params.get("p_out", 0.2)
        if blocks < 1 or blocks > n:
            raise ParameterError(f"sbm needs 1 <= blocks <= n, got {blocks}")
        sizes = [n // blocks + (1 if b < n % blocks else 0) for b in range(blocks)]
        G = nx.stochastic_block_model(
            sizes, [[p_in if a == b else p_out for b in range(blocks)] for a in range(blocks)],
            seed=int(rng.integers(2**31)),
        )
        return {(min(u, v), max(u, v)) for u, v in G.edges()}

    if class_tag == "delaunay":
        if n < 3:
            raise ParameterError("delaunay needs n >= 3")
        pts = rng.random((n, 2))
        tri = Delaunay(pts)
        edges = set()
        for simplex in tri.simplices:
            for a in range(3):
                u, v = int(simplex[a]), int(simplex[(a + 1) % 3])
                edges.add((min(u, v), max(u, v)))
        return edges

    if class_tag == "emst":
        pts = rng.random((n, 2))
        D = distance_matrix(pts, pts)
        T = minimum_spanning_tree(D).tocoo()
        return {(min(int(u), int(v)), max(int(u), int(v))) for u, v in zip(T.row, T.col)}

    if class_tag == "k_partite":
        k = params.get("k", min(3, n))
        if k < 2 or k > n:
            raise ParameterError(f"k_partite needs 2 <= k <= n, got {k}")
        sizes = [n // k + (1 if b < n % k else 0) for b in range(k)]
        G = nx.complete_multipartite_graph(*sizes)
        return {(min(u, v), max(u, v)) for u, v in G.edges()}

    if class_tag == "grid":
        rows, cols = _grid_dims(n, params)
        G = nx.grid_2d_graph(rows, cols)
        idx = {node: node[0] * cols + node[1] for node in G.nodes()}
        return {(min(idx[u], idx[v]), max(idx[u], idx[v])) for u, v in G.edges()}

    if class_tag == "torus":
        rows, cols = _grid_dims(n, params)
        G = nx.grid_2d_graph(rows, cols, periodic=True)
        idx = {node: node[0] * cols + node[1] for node in G.nodes()}
        edges = {
            (min(idx[u], idx[v]), max(idx[u], idx[v]))
            for u, v in G.edges()
            if idx[u] != idx[v]
        }
        return edges

    if class_tag == "apollonian":
        if n < 3:
            raise ParameterError("apollonian needs n >= 3")
        edges = {(0, 1), (0, 2), (1, 2)}
        faces = [(0, 1, 2)]
        for v in range(3, n):
            f = faces.pop(int(rng.integers(len(faces))))
            a, b, c = f
            edges |= {(min(a, v), max(a, v)), (min(b, v), max(b, v)), (min(c, v), max(c, v))}
            faces.extend([(a, b, v), (a, c, v), (b, c, v)])
        return edges

    raise ParameterError(f"unknown graph class {class_tag!r}")


def generate_graph(class_tag: str, n: int, params: dict | None = None,
                   seed: int = 0,
                   weight_range: tuple = DEFAULT_WEIGHT_RANGE) -> WeightedGraph:
    """Sample a connected weighted graph of the requested class.

    Deterministic given (class_tag, n, params, seed).  Connectivity is
    enforced by resampling up to 50 times; after that the last sample is
    augmented with random cross-component edges (a spanning structure over
    components), since an irreducible kernel is a hard requirement.
    """
    if n < 2:
        raise ParameterError(f"need n >= 2, got {n}")
    params = dict(params or {})
    lo, hi = weight_range
    if lo <= 0 or hi < lo:
        raise ParameterError(f"invalid weight range {weight_range}")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0,)))

    edges = None
    for _ in range(_CONNECTIVITY_RETRIES):
        cand = _topology(class_tag, n, params, rng)
        if cand and _is_connected(n, [(i, j, 1.0) for i, j in cand]):
            edges = cand
            break
        edges = cand
    else:
        # augment: connect components greedily with random bridges
        comp = _components(n, edges)
        while len(comp) > 1:
            a = comp.pop()
            b = comp[-1]
            u = int(sorted(a)[int(rng.integers(len(a)))])
            v = int(sorted(b)[int(rng.integers(len(b)))])
            edges.add((min(u, v), max(u, v)))
            comp[-1] = b | a
        if not _is_connected(n, [(i, j, 1.0) for i, j in edges]):
            raise GenerationError(f"could not build a connected {class_tag} graph")

    wrng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1,)))
    edge_list = [
        (i, j, float(wrng.uniform(lo, hi))) for i, j in sorted(edges)
    ]
    g = WeightedGraph(n=n, edges=edge_list, class_tag=class_tag, seed=seed)
    g.validate()
    return g


def _components(n, edges):
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in edges:
        parent[find(i)] = find(j)
    groups = {}
    for v in range(n):
        groups.setdefault(find(v), set()).add(v)
    return list(groups.values())


def to_markov_chain(g: WeightedGraph) -> MarkovChain:
    """Random-walk kernel K[i,j] = w(i,j)/deg(i), pi proportional to degree."""
    g.validate()
    W = g.adjacency()
    deg = W.sum(axis=1)
    if np.any(deg <= 0):
        raise ParameterError("isolated vertex: zero degree")
    K = W / deg[:, None]
    pi = deg / deg.sum()
    return MarkovChain(n=g.n, K=K, pi=pi)


def stationary_distribution(K: np.ndarray, tol: float = 1e-13,
                            max_iter: int = 500_000) -> np.ndarray:
    """Stationary pi of an irreducible row-stochastic K by power iteration.

    Iterates the lazy chain (K + I)/2, which shares the stationary vector
    but is aperiodic, so the iteration converges even for periodic K.
    Starts from the uniform vector.
    """
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    p = np.full(n, 1.0 / n)
    K_lazy = 0.5 * (K + np.eye(n))
    for _ in range(max_iter):
        p_next = p @ K_lazy
        p_next /= p_next.sum()
        if np.max(np.abs(p_next @ K - p_next)) <= tol:
            return p_next
        p = p_next
    raise NumericalError(
        f"power iteration did not reach residual {tol} in {max_iter} iterations"
    )


def validate_chain(chain: MarkovChain) -> ValidationReport:
    """Report-only validation of the chain invariants."""
    K, pi = np.asarray(chain.K, float), np.asarray(chain.pi, float)
    row_res = float(np.max(np.abs(K.sum(axis=1) - 1.0)))
    db = pi[:, None] * K - pi[None, :] * K.T
    db_res = float(np.max(np.abs(db)))
    pi_sum_res = float(abs(pi.sum() - 1.0))
    row_stochastic = bool(np.all(K >= 0) and row_res <= 1e-12)
    pi_positive = bool(np.all(pi > 0) and pi_sum_res <= 1e-12)
    reversible = db_res <= 1e-12
    irreducible = _strongly_connected(K)
    return ValidationReport(
        row_stochastic=row_stochastic,
        irreducible=irreducible,
        reversible=reversible,
        pi_positive=pi_positive,
        row_sum_residual=row_res,
        detailed_balance_residual=db_res,
        pi_sum_residual=pi_sum_res,
    )


def _strongly_connected(K: np.ndarray) -> bool:
    n = K.shape[0]
    pos = K > 0

    def reachable(adj):
        seen = np.zeros(n, dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            u = stack.pop()
            for v in np.flatnonzero(adj[u]):
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
        return seen.all()

    return bool(reachable(pos) and reachable(pos.T))
