"""d-regular multigraphs from the configuration model.

A multigraph on ``n`` vertices is stored as a perfect matching of the
``n * d`` half-edges; half-edge ``i`` belongs to vertex ``i // d``. Loops
and multi-edges are allowed and carry their multiplicity everywhere
(adjacency, transition kernel, degrees).
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Multigraph:
    n: int
    d: int
    pairing: np.ndarray

    def __post_init__(self):
        pairing = np.asarray(self.pairing, dtype=np.int64)
        pairing.setflags(write=False)
        object.__setattr__(self, "pairing", pairing)
        check_pairing(self.n, self.d, pairing)

    @property
    def num_half_edges(self) -> int:
        return self.n * self.d

    @property
    def num_edges(self) -> int:
        return self.n * self.d // 2

    def neighbor_table(self) -> np.ndarray:
        """(n, d) array; row x lists the neighbour across each half-edge of x.

        A loop shows up twice in its vertex's row.
        """
        return (self.pairing // self.d).reshape(self.n, self.d)

    def half_edge_pairs(self) -> np.ndarray:
        """(m, 2) array of matched half-edges, sorted by smallest index."""
        h = np.arange(self.num_half_edges)
        lo = h < self.pairing
        return np.column_stack([h[lo], self.pairing[lo]])

    def edges(self) -> np.ndarray:
        """(m, 2) vertex pairs ordered by smallest half-edge index."""
        return self.half_edge_pairs() // self.d

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric adjacency with multiplicities; a loop adds 2 on the diagonal."""
        nb = self.neighbor_table()
        rows = np.repeat(np.arange(self.n), self.d)
        data = np.ones(self.n * self.d)
        return sp.csr_matrix((data, (rows, nb.ravel())), shape=(self.n, self.n))

    def transition_matrix(self) -> sp.csr_matrix:
        return self.adjacency() / self.d

    def is_connected(self) -> bool:
        ncomp, _ = sp.csgraph.connected_components(self.adjacency(), directed=False)
        return ncomp == 1


def check_pairing(n: int, d: int, pairing: np.ndarray) -> None:
    m = n * d
    if pairing.shape != (m,):
        raise ValueError(f"pairing must have length n*d={m}, got {pairing.shape}")
    if m % 2:
        raise ValueError("n*d must be even")
    if m == 0:
        return
    if pairing.min() < 0 or pairing.max() >= m:
        raise ValueError("pairing entries out of range")
    idx = np.arange(m)
    if np.any(pairing == idx):
        raise ValueError("pairing has a fixed point")
    if np.any(pairing[pairing] != idx):
        raise ValueError("pairing is not an involution")


def generate_configuration_model(n: int, d: int, rng: np.random.Generator) -> Multigraph:
    """Uniform perfect matching of the ``n*d`` half-edges."""
    if d < 3:
        raise ValueError("degree must be at least 3")
    if n < 1:
        raise ValueError("n must be positive")
    if (n * d) % 2:
        raise ValueError(f"n*d must be even (n={n}, d={d})")
    perm = rng.permutation(n * d).reshape(-1, 2)
    pairing = np.empty(n * d, dtype=np.int64)
    pairing[perm[:, 0]] = perm[:, 1]
    pairing[perm[:, 1]] = perm[:, 0]
    return Multigraph(n, d, pairing)


def generate_simple(n: int, d: int, rng: np.random.Generator, max_tries: int = 100_000) -> Multigraph:
    """Configuration model conditioned on simplicity (rejection sampling)."""
    for _ in range(max_tries):
        g = generate_configuration_model(n, d, rng)
        if is_simple(g):
            return g
    raise RuntimeError(f"no simple graph after {max_tries} tries (n={n}, d={d})")


def is_simple(g: Multigraph) -> bool:
    e = g.edges()
    if np.any(e[:, 0] == e[:, 1]):
        return False
    key = np.sort(e, axis=1)
    return len(np.unique(key, axis=0)) == len(key)


def from_edges(n: int, d: int, edges: Iterable[tuple[int, int]]) -> Multigraph:
    """Build a multigraph from an edge list, assigning half-edges in order."""
    nxt = np.arange(n) * d
    pairing = np.full(n * d, -1, dtype=np.int64)
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise ValueError(f"edge ({u}, {v}) out of range")
        hu = nxt[u]
        nxt[u] += 1
        hv = nxt[v]
        nxt[v] += 1
        if hu >= (u + 1) * d or hv >= (v + 1) * d:
            raise ValueError(f"vertex degree exceeds {d}")
        pairing[hu] = hv
        pairing[hv] = hu
    if np.any(pairing < 0):
        raise ValueError("edge list does not saturate every half-edge")
    return Multigraph(n, d, pairing)


def complete_graph(k: int) -> Multigraph:
    """K_k as a (k-1)-regular multigraph."""
    return from_edges(k, k - 1, [(i, j) for i in range(k) for j in range(i + 1, k)])


def disjoint_union(a: Multigraph, b: Multigraph) -> Multigraph:
    if a.d != b.d:
        raise ValueError("degrees differ")
    shift = a.n * a.d
    return Multigraph(a.n + b.n, a.d, np.concatenate([a.pairing, b.pairing + shift]))


# -- subgraphs -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Subgraph:
    """Vertex set plus a multiset of edges (vertex pairs) among them."""

    vertices: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))

    def __post_init__(self):
        v = np.unique(np.asarray(self.vertices, dtype=np.int64))
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and not np.all(np.isin(e, v)):
            raise ValueError("edge endpoint outside vertex set")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edges", e)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def degrees(self) -> dict[int, int]:
        deg = dict.fromkeys(self.vertices.tolist(), 0)
        for u, v in self.edges.tolist():
            deg[u] += 1
            deg[v] += 1
        return deg


def induced_subgraph(g: Multigraph, vertices: Iterable[int]) -> Subgraph:
    vs = np.unique(np.fromiter(vertices, dtype=np.int64))
    mask = np.zeros(g.n, dtype=bool)
    mask[vs] = True
    e = g.edges()
    keep = mask[e[:, 0]] & mask[e[:, 1]]
    return Subgraph(vs, e[keep])


def count_components(s: Subgraph) -> int:
    from gffperc.levelset import UnionFind

    uf = UnionFind(s.vertices.tolist())
    for u, v in s.edges.tolist():
        uf.union(u, v)
    return uf.num_sets


def tree_excess(s: Subgraph) -> int:
    """edges - vertices + number of connected components."""
    return s.num_edges - s.num_vertices + count_components(s)


def _bfs_distances(g: Multigraph, sources: Iterable[int], radius: int,
                   forbidden: int | None = None) -> dict[int, int]:
    nb = g.neighbor_table()
    dist = {}
    queue = deque()
    for s in sources:
        if not 0 <= s < g.n:
            raise ValueError(f"unknown vertex {s}")
        if s not in dist:
            dist[s] = 0
            queue.append(s)
    while queue:
        x = queue.popleft()
        dx = dist[x]
        if dx == radius:
            continue
        for y in nb[x].tolist():
            if y == forbidden or y in dist:
                continue
            dist[y] = dx + 1
            queue.append(y)
    return dist


def ball(g: Multigraph, centers: Iterable[int], radius: int) -> Subgraph:
    """Radius-``radius`` ball around ``centers`` with all induced edges."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    dist = _bfs_distances(g, centers, radius)
    return induced_subgraph(g, dist)


def directed_ball(g: Multigraph, x: int, avoid: int, radius: int) -> Subgraph:
    """Vertices reached from ``x`` by paths of length <= radius avoiding ``avoid``."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    if not 0 <= avoid < g.n:
        raise ValueError(f"unknown vertex {avoid}")
    dist = _bfs_distances(g, [x], radius, forbidden=avoid)
    return induced_subgraph(g, dist)


def subgraph_ball(g: Multigraph, s: Subgraph, radius: int) -> Subgraph:
    return ball(g, s.vertices.tolist(), radius)


def tree_radius(g: Multigraph, centers: Iterable[int], max_radius: int) -> int:
    """Largest r <= max_radius such that the r-ball keeps the tree excess of the 0-ball."""
    centers = list(centers)
    base = tree_excess(ball(g, centers, 0))
    r = 0
    while r < max_radius and tree_excess(ball(g, centers, r + 1)) == base:
        r += 1
    return r


def distance_matrix(g: Multigraph) -> np.ndarray:
    """All-pairs graph distances (inf across components); O(n^2) memory."""
    return sp.csgraph.shortest_path(g.adjacency(), unweighted=True, directed=False)


def set_tree_radius(g: Multigraph, dist_to_set: np.ndarray, max_radius: int) -> int:
    """Largest r <= max_radius with B(A, r) a tree, given distances to a connected tree A.

    Returns -1 if A itself carries a cycle.
    """
    e = g.edges()
    emax = np.maximum(dist_to_set[e[:, 0]], dist_to_set[e[:, 1]])
    r_best = -1
    for r in range(max_radius + 1):
        nv = int(np.count_nonzero(dist_to_set <= r))
        ne = int(np.count_nonzero(emax <= r))
        if ne != nv - 1:
            break
        r_best = r
    return r_best


def _ball_counts(g: Multigraph, reach: sp.csr_matrix, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vertex and edge counts of the balls encoded by the rows of ``reach``."""
    nv = np.asarray(reach.sum(axis=1)).ravel()
    # an edge lies in the ball iff both endpoints do
    both = reach[:, e[:, 0]].multiply(reach[:, e[:, 1]])
    ne = np.asarray(both.sum(axis=1)).ravel()
    return nv, ne


def ball_tree_excesses(g: Multigraph, radius: int) -> np.ndarray:
    """tx(B(x, radius)) for every vertex x (balls are connected)."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    step = (g.adjacency() + sp.identity(g.n, format="csr")).astype(bool).tocsr()
    reach = sp.identity(g.n, format="csr", dtype=bool)
    for _ in range(radius):
        reach = (reach @ step).astype(bool).tocsr()
    nv, ne = _ball_counts(g, reach, g.edges())
    return (ne - nv + 1).astype(np.int64)


def vertex_tree_radii(g: Multigraph, max_radius: int) -> np.ndarray:
    """For every vertex x, the largest r <= max_radius with B(x, r) a tree (-1 for a loop at x).

    Balls are grown as sparse reachability rows, so the cost scales with
    the ball sizes rather than n^2.
    """
    n = g.n
    e = g.edges()
    step = (g.adjacency() + sp.identity(n, format="csr")).astype(bool).tocsr()
    reach = sp.identity(n, format="csr", dtype=bool)
    out = np.full(n, -1, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    for r in range(max_radius + 1):
        if r:
            reach = (reach @ step).astype(bool).tocsr()
        nv, ne = _ball_counts(g, reach, e)
        ok = alive & (ne == nv - 1)
        out[ok] = r
        alive = ok
        if not alive.any():
            break
        # rows that already failed no longer need to grow
        reach = (sp.diags(alive.astype(float)) @ reach).astype(bool).tocsr()
    return out


# -- spectrum ------------------------------------------------------------------


def spectral_gap(g: Multigraph, tol: float = 1e-8, method: str = "auto",
                 maxiter: int | None = None) -> float:
    """1 - lambda_2 / d, with lambda_2 the second-largest adjacency eigenvalue.

    Disconnected graphs have gap 0. ``method='dense'`` runs a full
    eigendecomposition; ``'iterative'`` runs Lanczos on the adjacency
    deflated against the constant vector.
    """
    if not g.is_connected():
        return 0.0
    if g.n == 1:
        return 1.0
    if method == "auto":
        method = "dense" if g.n <= 512 else "iterative"
    a = g.adjacency()
    if method == "dense":
        ev = np.linalg.eigvalsh(a.toarray())
        lam2 = ev[-2]
    elif method == "iterative":
        lam2 = _deflated_top_eigenvalue(a, g.d, tol, maxiter)
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(1.0 - lam2 / g.d)


def _deflated_top_eigenvalue(a: sp.csr_matrix, d: int, tol: float, maxiter: int | None) -> float:
    n = a.shape[0]

    def matvec(v):
        v = np.ravel(v)
        v = v - v.mean()
        w = a @ v
        return w - w.mean()

    op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    # shift by d so that the wanted eigenvalue is the largest algebraic one of a PSD-ish operator
    shifted = spla.LinearOperator((n, n), matvec=lambda v: op.matvec(v) + d * (np.ravel(v) - np.ravel(v).mean()),
                                  dtype=float)
    v0 = np.random.default_rng(0).standard_normal(n)
    v0 -= v0.mean()
    try:
        vals = spla.eigsh(shifted, k=1, which="LA", tol=tol, v0=v0,
                          maxiter=maxiter or 50 * n, return_eigenvectors=False)
    except spla.ArpackNoConvergence as exc:
        raise ConvergenceError("spectral gap iteration did not converge") from exc
    return float(vals[0] - d)


# -- good-graph report ---------------------------------------------------------


@dataclass(frozen=True)
class GoodGraphThresholds:
    cycle_radius_coeff: float = 0.25
    green_radius_coeff: float = 2.0
    spectral_tol: float = 1e-8

    def cycle_radius(self, n: int, d: int) -> int:
        return max(0, math.floor(self.cycle_radius_coeff * math.log(n) / math.log(d - 1)))

    def green_radius(self, n: int, d: int) -> int:
        if n < 3:
            return 0
        return max(0, math.floor(self.green_radius_coeff * math.log(math.log(n)) / math.log(d - 1)))


@dataclass(frozen=True)
class GoodGraphReport:
    spectral_gap: float
    max_cycles_in_log_ball: int
    green_diag_error: float | None
    green_offdiag_error: float | None
    tree_like_vertices: int
    cycle_radius: int
    green_radius: int
    thresholds_used: GoodGraphThresholds


def good_graph_report(g: Multigraph, green, params: GoodGraphThresholds | None = None) -> GoodGraphReport:
    """Measured versions of the expander / few-cycles / local-Green conditions.

    Green errors are ``None`` when no vertex has a tree-like ball of the
    configured radius.
    """
    params = params or GoodGraphThresholds()
    gvals = np.asarray(getattr(green, "values", green))
    d = g.d
    rc = params.cycle_radius(g.n, d)
    rg = params.green_radius(g.n, d)
    gap = spectral_gap(g, tol=params.spectral_tol)
    max_cycles = int(ball_tree_excesses(g, rc).max())
    tl = np.flatnonzero(ball_tree_excesses(g, rg) == 0)
    diag_err = offdiag_err = None
    if tl.size:
        diag_err = float(np.max(np.abs(gvals[tl, tl] - (d - 1) / (d - 2))))
        nb = g.neighbor_table()[tl]
        off = gvals[np.repeat(tl, d), nb.ravel()]
        offdiag_err = float(np.max(np.abs(off - 1 / (d - 2))))
    return GoodGraphReport(gap, max_cycles, diag_err, offdiag_err, int(tl.size), rc, rg, params)


# -- serialization -------------------------------------------------------------


def write_graph(g: Multigraph, fh: TextIO) -> None:
    fh.write(f"{g.n} {g.d}\n")
    for u, v in g.edges().tolist():
        fh.write(f"{u} {v}\n")


def read_graph(fh: TextIO) -> Multigraph:
    header = fh.readline().split()
    if len(header) != 2:
        raise ValueError("graph header must be 'n d'")
    n, d = int(header[0]), int(header[1])
    edges = []
    for line in fh:
        line = line.strip()
        if line:
            u, v = line.split()
            edges.append((int(u), int(v)))
    if len(edges) != n * d // 2:
        raise ValueError(f"expected {n * d // 2} edges, got {len(edges)}")
    return from_edges(n, d, edges)
