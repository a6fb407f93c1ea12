"""Level sets of a field and the structure of their connected components:
component decomposition, 2-core, kernel, diameter, typical distances and
the census of rooted tree balls.
"""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from gffperc.multigraph import Multigraph, Subgraph, induced_subgraph

NON_TREE = "NONTREE"


class UnionFind:
    """Disjoint sets over arbitrary hashable items (union by size, path halving)."""

    def __init__(self, items: Iterable[Hashable] = ()):
        self.parent = {}
        self.size = {}
        self.num_sets = 0
        for x in items:
            self.add(x)

    def add(self, x):
        if x not in self.parent:
            self.parent[x] = x
            self.size[x] = 1
            self.num_sets += 1

    def find(self, x):
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.num_sets -= 1
        return True

    def groups(self) -> list[list]:
        out = {}
        for x in self.parent:
            out.setdefault(self.find(x), []).append(x)
        return list(out.values())


def level_set(field_values, h: float) -> np.ndarray:
    """Vertices with value >= h (ties included)."""
    vals = np.asarray(getattr(field_values, "values", field_values))
    return np.flatnonzero(vals >= h)


@dataclass(frozen=True)
class ComponentDecomposition:
    level: float
    components: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [len(c) for c in self.components]

    def largest(self, i: int = 0) -> np.ndarray:
        """i-th largest component (0-based); empty array if absent."""
        if i < len(self.components):
            return self.components[i]
        return np.empty(0, dtype=np.int64)


def components(g: Multigraph, s: Iterable[int], level: float = float("nan")) -> ComponentDecomposition:
    """Connected components of the subgraph induced by ``s``.

    Sorted by decreasing size, ties by smallest vertex id.
    """
    s = np.unique(np.fromiter(s, dtype=np.int64))
    if s.size == 0:
        return ComponentDecomposition(level, [])
    mask = np.zeros(g.n, dtype=bool)
    mask[s] = True
    e = g.edges()
    e = e[mask[e[:, 0]] & mask[e[:, 1]] & (e[:, 0] != e[:, 1])]
    uf = UnionFind(s.tolist())
    for u, v in e.tolist():
        uf.union(u, v)
    comps = [np.sort(np.array(c, dtype=np.int64)) for c in uf.groups()]
    comps.sort(key=lambda c: (-len(c), c[0]))
    return ComponentDecomposition(level, comps)


def _subgraph_adjacency(edges: np.ndarray, vertices: np.ndarray) -> tuple[dict, dict]:
    """Adjacency lists keyed by vertex; loops appear twice, like in the multigraph."""
    adj = {v: [] for v in vertices.tolist()}
    for u, v in edges.tolist():
        adj[u].append(v)
        adj[v].append(u)
    return adj


def two_core(g: Multigraph, c: Iterable[int]) -> Subgraph:
    """Iteratively delete vertices of degree < 2 in the subgraph induced by ``c``."""
    sub = induced_subgraph(g, c)
    return core_of(sub)


def core_of(sub: Subgraph) -> Subgraph:
    adj = _subgraph_adjacency(sub.edges, sub.vertices)
    deg = {v: len(nb) for v, nb in adj.items()}
    removed = set()
    stack = [v for v, k in deg.items() if k < 2]
    while stack:
        v = stack.pop()
        if v in removed:
            continue
        removed.add(v)
        for u in adj[v]:
            if u in removed:
                continue
            deg[u] -= 1
            if deg[u] < 2:
                stack.append(u)
    keep = np.array([v for v in sub.vertices.tolist() if v not in removed], dtype=np.int64)
    if sub.num_edges:
        alive = np.ones(sub.num_edges, dtype=bool)
        for i, (u, v) in enumerate(sub.edges.tolist()):
            alive[i] = u not in removed and v not in removed
        return Subgraph(keep, sub.edges[alive])
    return Subgraph(keep)


@dataclass(frozen=True)
class Kernel:
    """Contracted 2-core: branch vertices and the paths between them as edges.

    ``cycle_components`` counts components of the core that are plain
    cycles (no vertex of degree >= 3); they contribute nothing else.
    """

    vertices: np.ndarray
    edges: list[tuple[int, int]]
    path_lengths: list[int] = field(default_factory=list)
    cycle_components: int = 0

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def is_cycle_only(self) -> bool:
        return self.num_vertices == 0 and self.cycle_components > 0

    def degrees(self) -> dict[int, int]:
        deg = dict.fromkeys(self.vertices.tolist(), 0)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg


def kernel(core: Subgraph) -> Kernel:
    """Contract maximal paths through degree-2 vertices of a 2-core."""
    verts = core.vertices.tolist()
    edges = core.edges.tolist()
    inc = {v: [] for v in verts}
    for i, (u, v) in enumerate(edges):
        inc[u].append(i)
        inc[v].append(i)
    deg = {v: len(es) for v, es in inc.items()}
    if deg and min(deg.values()) < 2:
        raise ValueError("kernel() needs a 2-core (minimum degree 2)")
    branch = [v for v in verts if deg[v] >= 3]
    used = [False] * len(edges)
    visited = set(branch)
    kedges = []
    lengths = []
    for start in branch:
        for e0 in inc[start]:
            if used[e0]:
                continue
            used[e0] = True
            prev, eid, length = start, e0, 1
            u, v = edges[eid]
            cur = v if u == prev else u
            while deg[cur] == 2:
                visited.add(cur)
                nxt = [e for e in inc[cur] if not used[e]]
                eid = nxt[0]
                used[eid] = True
                u, v = edges[eid]
                prev, cur = cur, (v if u == cur else u)
                length += 1
            kedges.append((start, cur))
            lengths.append(length)
    # remaining degree-2 vertices form plain cycles
    cycles = 0
    for v in verts:
        if v in visited:
            continue
        cycles += 1
        stack = [v]
        visited.add(v)
        while stack:
            x = stack.pop()
            for e in inc[x]:
                a, b = edges[e]
                y = b if a == x else a
                if y not in visited:
                    visited.add(y)
                    stack.append(y)
    return Kernel(np.array(sorted(branch), dtype=np.int64), kedges, lengths, cycles)


# -- distances -----------------------------------------------------------------


def _component_csr(g: Multigraph, c: np.ndarray) -> sp.csr_matrix:
    sub = induced_subgraph(g, c)
    index = np.full(g.n, -1, dtype=np.int64)
    index[sub.vertices] = np.arange(sub.num_vertices)
    e = index[sub.edges]
    e = e[e[:, 0] != e[:, 1]]
    k = sub.num_vertices
    a = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(k, k))
    return (a + a.T).tocsr()


def _bfs_rows(adj: sp.csr_matrix, sources: np.ndarray, chunk: int = 256) -> Iterable[tuple[np.ndarray, np.ndarray]]:
    for i in range(0, len(sources), chunk):
        src = sources[i:i + chunk]
        dist = csgraph.shortest_path(adj, unweighted=True, directed=False, indices=src)
        yield src, dist


def _check_connected(adj: sp.csr_matrix) -> None:
    if adj.shape[0] == 0:
        raise ValueError("empty vertex set")
    ncomp, _ = csgraph.connected_components(adj, directed=False)
    if ncomp != 1:
        raise ValueError("vertex set is not connected")


def diameter(g: Multigraph, c: Iterable[int], exact_limit: int = 2000) -> int:
    """Diameter of the subgraph induced by the connected vertex set ``c``.

    All-sources BFS up to ``exact_limit`` vertices, iFUB above.
    """
    c = np.unique(np.fromiter(c, dtype=np.int64))
    adj = _component_csr(g, c)
    _check_connected(adj)
    if len(c) <= exact_limit:
        best = 0
        for _, dist in _bfs_rows(adj, np.arange(len(c))):
            best = max(best, int(dist.max()))
        return best
    return ifub_diameter(adj)


def _ecc(adj: sp.csr_matrix, src: int) -> np.ndarray:
    return csgraph.shortest_path(adj, unweighted=True, directed=False, indices=[src])[0]


def ifub_diameter(adj: sp.csr_matrix) -> int:
    """Exact diameter by iFUB started from a double-sweep midpoint."""
    d0 = _ecc(adj, 0)
    a = int(np.argmax(d0))
    da = _ecc(adj, a)
    b = int(np.argmax(da))
    lower = int(da[b])
    # midpoint of the a-b path
    db = _ecc(adj, b)
    on_path = np.flatnonzero((da + db) == lower)
    mid = int(on_path[np.argmin(np.abs(da[on_path] - lower // 2))])
    du = _ecc(adj, mid)
    ecc_u = int(du.max())
    lower = max(lower, ecc_u)
    i = ecc_u
    while i > 0:
        if lower > 2 * (i - 1):
            return lower
        level = np.flatnonzero(du == i)
        for _, dist in _bfs_rows(adj, level):
            lower = max(lower, int(dist.max()))
        if lower > 2 * (i - 1):
            return lower
        i -= 1
    return lower


def sample_typical_distances(g: Multigraph, c: Iterable[int], pairs: int,
                             rng: np.random.Generator) -> np.ndarray:
    """Distances between ``pairs`` uniform ordered pairs of distinct vertices of the component."""
    c = np.unique(np.fromiter(c, dtype=np.int64))
    if len(c) < 2:
        raise ValueError("component must have at least 2 vertices")
    adj = _component_csr(g, c)
    _check_connected(adj)
    xs = rng.integers(len(c), size=pairs)
    ys = rng.integers(len(c) - 1, size=pairs)
    ys += ys >= xs
    out = np.empty(pairs, dtype=np.int64)
    order = np.argsort(xs, kind="stable")
    srcs, starts = np.unique(xs[order], return_index=True)
    bounds = np.append(starts, pairs)
    pos = {int(s): k for k, s in enumerate(srcs)}
    for chunk_src, dist in _bfs_rows(adj, srcs):
        for row, s in enumerate(chunk_src.tolist()):
            k = pos[s]
            idx = order[bounds[k]:bounds[k + 1]]
            out[idx] = dist[row, ys[idx]].astype(np.int64)
    return out


# -- rooted trees and the ball census -----------------------------------------


def canonical_tree_code(children: Mapping[Hashable, Sequence[Hashable]], root: Hashable) -> str:
    """AHU code: each node is '(' + sorted child codes + ')'."""
    seen = {root}
    order = [root]
    stack = [root]
    while stack:
        x = stack.pop()
        for y in children.get(x, ()):
            if y in seen:
                raise ValueError("input is not a rooted tree (cycle or shared child)")
            seen.add(y)
            order.append(y)
            stack.append(y)
    code = {}
    for x in reversed(order):
        code[x] = "(" + "".join(sorted(code[y] for y in children.get(x, ()))) + ")"
    return code[root]


def tree_code_from_parents(parents: Sequence[int]) -> str:
    """Code of a rooted tree given as a parent array (root has parent -1)."""
    children = {i: [] for i in range(len(parents))}
    root = None
    for i, p in enumerate(parents):
        if p < 0:
            root = i
        else:
            children[p].append(i)
    return canonical_tree_code(children, root)


def ball_census(g: Multigraph, c: Iterable[int], k: int) -> Counter:
    """Count canonical codes of radius-k balls inside the component ``c``.

    Balls that are not trees are counted under ``NON_TREE``.
    """
    c = np.unique(np.fromiter(c, dtype=np.int64))
    inside = np.zeros(g.n, dtype=bool)
    inside[c] = True
    nb = g.neighbor_table()
    census = Counter()
    for x in c.tolist():
        dist = {x: 0}
        parent = {x: None}
        children = {x: []}
        queue = deque([x])
        edges2 = 0  # twice the number of induced edges seen so far
        while queue:
            u = queue.popleft()
            for v in nb[u].tolist():
                if not inside[v]:
                    continue
                if v not in dist:
                    if dist[u] == k:
                        continue
                    dist[v] = dist[u] + 1
                    parent[v] = u
                    children[v] = []
                    children[u].append(v)
                    queue.append(v)
        for u in dist:
            for v in nb[u].tolist():
                if inside[v] and v in dist:
                    edges2 += 1
        n_edges = edges2 // 2
        if n_edges != len(dist) - 1:
            census[NON_TREE] += 1
        else:
            census[canonical_tree_code(children, x)] += 1
    return census
