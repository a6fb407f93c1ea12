"""The level-set cluster of the root for the GFF on the d-regular tree.

The cluster is a multi-type branching process: a kept vertex with value a
has d-1 children (d for the root of the two-sided tree) with values
sqrt(d/(d-1)) * xi + a/(d-1), and a child is kept iff its value is >= h.

Replicas are simulated in vectorized blocks. Block ``b`` of a run with
master seed ``s`` draws from ``SeedSequence(s, spawn_key=(b,))``, so a run
is reproducible and does not depend on how blocks are scheduled.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from gffperc.gff import GaussianReservoir, tree_child_std, tree_root_std
from gffperc.levelset import tree_code_from_parents

DEFAULT_K = 60
DEFAULT_MAX_SIZE = 10**6
DEFAULT_FRONTIER_CAP = 200
BLOCK = 2048


class Status(str, Enum):
    DIED = "died"
    TRUNCATED_BY_GENERATION = "truncated_by_generation"
    TRUNCATED_BY_SIZE = "truncated_by_size"


@dataclass
class TreeSample:
    d: int
    h: float
    generation_sizes: list[int]
    status: Status
    died_at: int | None = None
    one_sided: bool = False
    field_values: list[np.ndarray] | None = None
    parents: list[np.ndarray] | None = None

    @property
    def survived(self) -> bool:
        return self.status is not Status.DIED

    @property
    def size(self) -> int:
        return int(sum(self.generation_sizes))


@dataclass
class BlockResult:
    """Per-replica outcome arrays of one simulated block."""

    sizes: np.ndarray          # (reps, simulated generations + 1) generation sizes
    status: np.ndarray         # 0 died, 1 truncated by generation, 2 truncated by size
    last_gen: np.ndarray       # last generation index that was simulated
    total: np.ndarray          # cluster size counted so far
    alive_branches: np.ndarray | None = None
    ball_parents: list[tuple[np.ndarray, np.ndarray]] | None = None
    values: list[tuple[np.ndarray, np.ndarray]] | None = None


_DIED, _TRUNC_GEN, _TRUNC_SIZE = 0, 1, 2
_STATUS = {_DIED: Status.DIED, _TRUNC_GEN: Status.TRUNCATED_BY_GENERATION,
           _TRUNC_SIZE: Status.TRUNCATED_BY_SIZE}


def simulate_block(d: int, h: float, reps: int, rng: np.random.Generator, *,
                   max_generation: int = DEFAULT_K, max_size: int = DEFAULT_MAX_SIZE,
                   frontier_cap: int | None = None, one_sided: bool = False,
                   root_value: float | None = None, track_depth: int = 0,
                   track_branches: bool = False, branch_cap: int | None = None,
                   keep_values: bool = False) -> BlockResult:
    """Grow ``reps`` independent clusters generation by generation.

    A replica stops as ``truncated_by_size`` once its cluster exceeds
    ``max_size`` vertices or its current generation reaches ``frontier_cap``
    vertices. With ``track_branches`` each vertex remembers which root child
    it descends from; ``branch_cap`` then stops a replica once every branch
    still alive has at least that many vertices in the current generation.
    """
    if max_generation < 1 or max_size < 1:
        raise ValueError("max_generation and max_size must be >= 1")
    k_max = max_generation
    status = np.full(reps, -1, dtype=np.int8)
    last_gen = np.zeros(reps, dtype=np.int64)
    if root_value is None:
        root = tree_root_std(d) * rng.standard_normal(reps)
    else:
        root = np.full(reps, float(root_value))
    keep = root >= h
    rep = np.flatnonzero(keep)
    val = root[keep]
    branch = np.full(rep.size, -1, dtype=np.int64)
    total = keep.astype(np.int64)
    size_cols = [total.copy()]
    status[~keep] = _DIED
    ball_parents = [(rep.copy(), np.full(rep.size, -1, dtype=np.int64))] if track_depth > 0 else None
    front_src = np.arange(rep.size)
    values = [(rep.copy(), val.copy())] if keep_values else None
    alive_branches = np.zeros(reps, dtype=np.int64) if track_branches else None
    cstd = tree_child_std(d)

    for k in range(1, k_max + 1):
        if rep.size == 0:
            break
        nchild = d if (k == 1 and not one_sided) else d - 1
        xi = rng.standard_normal((rep.size, nchild))
        child = cstd * xi + (val / (d - 1))[:, None]
        mask = child >= h
        pidx, cidx = np.nonzero(mask)
        new_rep = rep[pidx]
        new_val = child[pidx, cidx]
        if track_branches:
            new_branch = cidx if k == 1 else branch[pidx]
        if ball_parents is not None and k <= track_depth:
            ball_parents.append((new_rep, front_src[pidx]))
        if values is not None:
            values.append((new_rep.copy(), new_val.copy()))
        counts = np.bincount(new_rep, minlength=reps)
        size_cols.append(counts)
        active = np.zeros(reps, dtype=bool)
        active[rep] = True
        last_gen[active] = k
        total += counts
        died = active & (counts == 0)
        status[died] = _DIED
        stop = np.zeros(reps, dtype=bool)
        stop_size = active & (counts > 0) & (total > max_size)
        if frontier_cap is not None:
            stop_size |= active & (counts >= frontier_cap)
        if track_branches and branch_cap is not None and new_rep.size:
            key = new_rep * d + new_branch
            bc = np.bincount(key, minlength=reps * d).reshape(reps, d)
            present = bc > 0
            enough = np.all(~present | (bc >= branch_cap), axis=1)
            stop_size |= active & (counts > 0) & enough
        status[stop_size] = _TRUNC_SIZE
        stop |= stop_size
        if k == k_max:
            reached = active & (counts > 0) & ~stop
            status[reached] = _TRUNC_GEN
            stop |= reached
        if track_branches and new_rep.size:
            done = stop[new_rep]
            if done.any():
                key = new_rep[done] * d + new_branch[done]
                uniq = np.unique(key)
                np.add.at(alive_branches, uniq // d, 1)
        keep_mask = ~stop[new_rep]
        front_src = np.flatnonzero(keep_mask)
        rep = new_rep[keep_mask]
        val = new_val[keep_mask]
        if track_branches:
            branch = new_branch[keep_mask]
    sizes = np.column_stack(size_cols)
    return BlockResult(sizes, status, last_gen, total, alive_branches, ball_parents, values)


def _block_rng(seed: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))


def _iter_blocks(replicas: int, block: int = BLOCK):
    for b, start in enumerate(range(0, replicas, block)):
        yield b, min(block, replicas - start)


def simulate_cluster(d: int, h: float, *, root_value: float | None = None,
                     max_generation: int = DEFAULT_K, max_size: int = DEFAULT_MAX_SIZE,
                     one_sided: bool = False, rng: np.random.Generator,
                     keep_values: bool = False, frontier_cap: int | None = None) -> TreeSample:
    """One realization of the root cluster.

    ``root_value=None`` draws the root from its prior; a number conditions the
    root on that value.
    """
    res = simulate_block(d, h, 1, rng, max_generation=max_generation, max_size=max_size,
                         frontier_cap=frontier_cap, one_sided=one_sided,
                         root_value=root_value, track_depth=max_generation if keep_values else 0,
                         keep_values=keep_values)
    st = _STATUS[int(res.status[0])]
    last = int(res.last_gen[0])
    gens = res.sizes[0, :last + 1].tolist()
    died_at = None
    if st is Status.DIED:
        died_at = 0 if gens[0] == 0 else last
        gens = gens[:died_at + 1]
    vals = parents = None
    if keep_values:
        vals = [v for _, v in res.values[:len(gens)]]
        parents = [p for _, p in res.ball_parents[:len(gens)]]
        if gens[0] == 0:
            parents = []
    return TreeSample(d, h, gens, st, died_at, one_sided, vals, parents)


# -- estimators ------------------------------------------------------------------


@dataclass(frozen=True)
class EtaEstimate:
    h: float
    d: int
    proxy_generation: int
    replicas: int
    point_estimate: float
    std_error: float
    seed: int | None = None

    def as_record(self) -> dict:
        return {"d": self.d, "h": self.h, "K": self.proxy_generation, "replicas": self.replicas,
                "estimate": self.point_estimate, "std_error": self.std_error, "seed": self.seed}


def _binomial(successes: int, replicas: int) -> tuple[float, float]:
    p = successes / replicas
    return p, math.sqrt(p * (1 - p) / replicas)


def estimate_eta(d: int, h: float, K: int = DEFAULT_K, replicas: int = 10_000, seed: int = 0,
                 frontier_cap: int | None = DEFAULT_FRONTIER_CAP,
                 max_size: int = DEFAULT_MAX_SIZE) -> EtaEstimate:
    """Fraction of replicas whose cluster reaches generation K.

    Replicas stopped by a size cap count as survivors.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    surv = 0
    for b, reps in _iter_blocks(replicas):
        res = simulate_block(d, h, reps, _block_rng(seed, b), max_generation=K,
                             max_size=max_size, frontier_cap=frontier_cap)
        surv += int(np.count_nonzero(res.status != _DIED))
    p, se = _binomial(surv, replicas)
    return EtaEstimate(h, d, K, replicas, p, se, seed)


@dataclass(frozen=True)
class LambdaEstimate:
    h: float
    d: int
    K: int
    replicas: int
    surviving: int
    estimate: float
    std_error: float


def estimate_lambda(d: int, h: float, K: int = 16, replicas: int = 2000, seed: int = 0,
                    max_size: int = DEFAULT_MAX_SIZE) -> LambdaEstimate:
    """Growth rate from the least-squares slope of log|Z_k| on k in [K/2, K].

    Only replicas reaching generation K without hitting ``max_size`` enter
    the fit; the standard error comes from per-replica slopes.
    """
    ks = np.arange(K // 2, K + 1)
    logs = []
    for b, reps in _iter_blocks(replicas):
        res = simulate_block(d, h, reps, _block_rng(seed, b), max_generation=K, max_size=max_size)
        ok = res.status == _TRUNC_GEN
        if ok.any():
            logs.append(np.log(res.sizes[ok][:, ks]))
    if not logs:
        raise ValueError(f"no surviving replicas at h={h}")
    y = np.concatenate(logs)
    kc = ks - ks.mean()
    slopes = (y - y.mean(axis=1, keepdims=True)) @ kc / (kc @ kc)
    slope = float(slopes.mean())
    se_slope = float(slopes.std(ddof=1) / math.sqrt(len(slopes))) if len(slopes) > 1 else float("inf")
    lam = math.exp(slope)
    return LambdaEstimate(h, d, K, replicas, len(slopes), lam, lam * se_slope)


@dataclass(frozen=True)
class HStarInterval:
    lower: float
    upper: float
    K: int
    replicas: int
    evaluations: list[tuple[float, float, float]] = field(default_factory=list)


def estimate_h_star(d: int, tol: float = 0.05, K: int = DEFAULT_K, replicas: int = 20_000,
                    seed: int = 0, bracket: tuple[float, float] = (-1.0, 4.0),
                    frontier_cap: int | None = DEFAULT_FRONTIER_CAP) -> HStarInterval:
    """Bisection on h for the event 'eta estimate > 3 standard errors'.

    Returns [lower, upper] with percolation detected at ``lower`` and not at
    ``upper``. The survival proxy over-estimates eta, so the interval is
    biased upward by a term that vanishes as K grows.
    """
    evals = []

    def percolates(h):
        est = estimate_eta(d, h, K, replicas, seed, frontier_cap)
        evals.append((h, est.point_estimate, est.std_error))
        return est.point_estimate > 3 * est.std_error and est.point_estimate > 0

    lo, hi = bracket
    if not percolates(lo) or percolates(hi):
        raise ValueError(f"bracket {bracket} does not straddle the transition")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if percolates(mid):
            lo = mid
        else:
            hi = mid
    return HStarInterval(lo, hi, K, replicas, evals)


@dataclass(frozen=True)
class TailCurve:
    sizes: np.ndarray
    tail: np.ndarray
    replicas: int
    resolved: int

    def log_tail_fit(self, weighted: bool = True) -> tuple[float, float, float]:
        """(slope, intercept, R^2) of log tail against size, over positive entries.

        log of an empirical tail built from c replicas has variance about 1/c,
        so the weighted fit uses the counts as weights; a single large cluster
        then no longer leaves a flat run of count-one entries dominating the fit.
        """
        pos = self.tail > 0
        x = self.sizes[pos].astype(float)
        y = np.log(self.tail[pos])
        if len(x) < 2:
            return float("nan"), float("nan"), float("nan")
        w = self.tail[pos] * self.replicas if weighted else np.ones_like(x)
        slope, intercept = np.polyfit(x, y, 1, w=np.sqrt(w))
        resid = y - (slope * x + intercept)
        ybar = np.average(y, weights=w)
        ss_tot = float((w * (y - ybar) ** 2).sum())
        r2 = 1.0 - float((w * resid ** 2).sum()) / ss_tot if ss_tot > 0 else float("nan")
        return float(slope), float(intercept), r2


def finite_cluster_tail(d: int, h: float, size_grid, replicas: int = 100_000, seed: int = 0,
                        max_size: int | None = None, max_generation: int = 10**6) -> TailCurve:
    """Empirical P(k <= |C| < inf) over ``size_grid``.

    A replica is resolved when its cluster dies out; replicas exceeding
    ``max_size`` (default twice the largest grid size) are treated as
    infinite and never counted in the tail.
    """
    grid = np.asarray(sorted(size_grid), dtype=np.int64)
    cap = max_size if max_size is not None else 2 * int(grid.max())
    finite_sizes = []
    for b, reps in _iter_blocks(replicas, 4 * BLOCK):
        res = simulate_block(d, h, reps, _block_rng(seed, b), max_generation=max_generation,
                             max_size=cap)
        dead = res.status == _DIED
        finite_sizes.append(res.total[dead])
    fs = np.sort(np.concatenate(finite_sizes))
    tail = (len(fs) - np.searchsorted(fs, grid, side="left")) / replicas
    return TailCurve(grid, tail, replicas, len(fs))


@dataclass(frozen=True)
class CoreKernelEstimate:
    k1: float
    k1_se: float
    k2: float
    k2_se: float
    eta: float
    eta_se: float
    replicas: int


def estimate_core_kernel_probs(d: int, h: float, K: int = DEFAULT_K, replicas: int = 20_000,
                               seed: int = 0, branch_cap: int = 50,
                               max_size: int = DEFAULT_MAX_SIZE) -> CoreKernelEstimate:
    """Probabilities that the root is kept and has >= 2 (>= 3) children with
    surviving offspring inside the cluster."""
    two = three = surv = 0
    for b, reps in _iter_blocks(replicas):
        res = simulate_block(d, h, reps, _block_rng(seed, b), max_generation=K, max_size=max_size,
                             track_branches=True, branch_cap=branch_cap)
        alive = res.alive_branches
        surv += int(np.count_nonzero(res.status != _DIED))
        two += int(np.count_nonzero(alive >= 2))
        three += int(np.count_nonzero(alive >= 3))
    k1, k1se = _binomial(two, replicas)
    k2, k2se = _binomial(three, replicas)
    eta, etase = _binomial(surv, replicas)
    return CoreKernelEstimate(k1, k1se, k2, k2se, eta, etase, replicas)


@dataclass(frozen=True)
class BallDistribution:
    probabilities: dict[str, float]
    counts: Counter
    surviving: int
    replicas: int
    k: int
    K: int


def _ball_codes(res: BlockResult, k: int) -> list[str]:
    """Canonical codes of the radius-k cluster balls of surviving replicas."""
    gens = res.ball_parents[:k + 1]
    offsets = np.cumsum([0] + [g[0].size for g in gens])
    rep_all = np.concatenate([g[0] for g in gens])
    par_all = np.concatenate([np.where(g[1] < 0, -1, g[1] + offsets[j - 1] if j else -1)
                              for j, g in enumerate(gens)])
    survived = res.status != _DIED
    order = np.argsort(rep_all, kind="stable")
    local = np.empty(rep_all.size, dtype=np.int64)
    codes = []
    reps_sorted = rep_all[order]
    bounds = np.flatnonzero(np.diff(reps_sorted)) + 1
    for seg in np.split(order, bounds):
        if seg.size == 0 or not survived[rep_all[seg[0]]]:
            continue
        local[seg] = np.arange(seg.size)
        parents = [int(local[p]) if p >= 0 else -1 for p in par_all[seg].tolist()]
        codes.append(tree_code_from_parents(parents))
    return codes


def conditioned_ball_distribution(d: int, h: float, k: int = 2, K: int = DEFAULT_K,
                                  replicas: int = 100_000, seed: int = 0,
                                  frontier_cap: int | None = DEFAULT_FRONTIER_CAP) -> BallDistribution:
    """Law of the radius-k ball of the root cluster given survival to generation K."""
    if k >= K:
        raise ValueError("ball radius must be below the survival proxy generation")
    counts = Counter()
    for b, reps in _iter_blocks(replicas):
        res = simulate_block(d, h, reps, _block_rng(seed, b), max_generation=K,
                             frontier_cap=frontier_cap, track_depth=k)
        counts.update(_ball_codes(res, k))
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no surviving replicas")
    probs = {code: c / total for code, c in counts.items()}
    return BallDistribution(probs, counts, total, replicas, k, K)


def expected_one_sided_generation(d: int, h: float, ell: int, replicas: int = 20_000,
                                  seed: int = 0) -> tuple[float, float]:
    """Monte Carlo mean and standard error of |Z_ell| on the one-sided tree."""
    vals = []
    for b, reps in _iter_blocks(replicas):
        res = simulate_block(d, h, reps, _block_rng(seed, b), max_generation=ell, one_sided=True)
        vals.append(res.sizes[:, ell])
    v = np.concatenate(vals).astype(float)
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))


# -- labelled clusters for couplings ---------------------------------------------


def tree_label_offset(d: int, k: int) -> int:
    """BFS index of the first vertex of generation k in the full tree."""
    if k == 0:
        return 0
    return 1 + d * ((d - 1) ** (k - 1) - 1) // (d - 2)


def labelled_cluster(d: int, h: float, reservoir: GaussianReservoir, max_generation: int,
                     root_value: float | None = None) -> list[dict[int, float]]:
    """Cluster of the root with every tree vertex tied to a fixed reservoir index.

    Generation k is returned as {label: value}, where label is the position of
    the vertex in generation k of the full tree (children of label i are
    i*(d-1)+j for k >= 2 and j for the root). The draw used at a vertex is
    reservoir[offset(k) + label], so two runs with the same reservoir see the
    same noise at every tree vertex.
    """
    if root_value is None:
        root_value = tree_root_std(d) * reservoir[0]
    gens = [{0: float(root_value)} if root_value >= h else {}]
    cstd = tree_child_std(d)
    for k in range(1, max_generation + 1):
        off = tree_label_offset(d, k)
        nxt = {}
        for lab, a in gens[-1].items():
            kids = range(d) if k == 1 else range(lab * (d - 1), (lab + 1) * (d - 1))
            for c in kids:
                v = cstd * reservoir[off + c] + a / (d - 1)
                if v >= h:
                    nxt[c] = v
        gens.append(nxt)
        if not nxt:
            break
    return gens
