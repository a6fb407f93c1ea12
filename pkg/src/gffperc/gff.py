"""Samplers for the zero-average GFF on a finite multigraph and for the GFF
on the d-regular tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, TextIO

import numpy as np
import scipy.sparse as sp

from gffperc.green import (GreenColumns, GreenMatrix, conditional_law, conditional_weights,
                           hitting_profile, laplacian)
from gffperc.multigraph import Multigraph

_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class Field:
    values: np.ndarray
    graph_ref: str = ""

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return len(self.values)

    def level_set(self, h: float) -> np.ndarray:
        return np.flatnonzero(self.values >= h)

    def to_csv(self, fh: TextIO) -> None:
        fh.write("vertex,value\n")
        for i, v in enumerate(self.values.tolist()):
            fh.write(f"{i},{v!r}\n")


class GaussianReservoir:
    """Indexed stream of i.i.d. N(0,1) draws.

    Draw ``i`` lives in block ``i // 1024``, generated from its own child
    seed, so any index can be read without generating the ones before it.
    ``values`` replaces the random stream by a fixed sequence (padded with
    zeros), which is how linear maps are probed with unit vectors.
    """

    def __init__(self, seed: int | None = None, values: Sequence[float] | None = None):
        if (seed is None) == (values is None):
            raise ValueError("give exactly one of seed or values")
        self.seed = seed
        self._fixed = None if values is None else np.asarray(values, dtype=float)
        self._blocks = {}
        self.cursor = 0

    def __getitem__(self, i: int) -> float:
        if i < 0:
            raise IndexError(i)
        if self._fixed is not None:
            return float(self._fixed[i]) if i < len(self._fixed) else 0.0
        b, j = divmod(i, _BLOCK)
        block = self._blocks.get(b)
        if block is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(b,))
            block = np.random.default_rng(ss).standard_normal(_BLOCK)
            self._blocks[b] = block
        return float(block[j])

    def take(self) -> tuple[int, float]:
        """Next unused (index, value)."""
        i = self.cursor
        self.cursor += 1
        return i, self[i]

    def reset(self) -> None:
        self.cursor = 0


def sample_exact(g: Multigraph, green: GreenMatrix, rng: np.random.Generator) -> Field:
    """Centered Gaussian vector with covariance ``green`` (spectral square root).

    Disconnected graphs have no zero-average field; the zero field is returned.
    """
    if not g.is_connected():
        return Field(np.zeros(g.n), "disconnected")
    if green.n != g.n:
        raise ValueError("Green matrix dimension mismatch")
    psi = green.sqrt_factor() @ rng.standard_normal(g.n)
    return Field(psi - psi.mean())


def sample_exact_many(green: GreenMatrix, rng: np.random.Generator, size: int) -> np.ndarray:
    """(size, n) array of independent exact samples."""
    z = rng.standard_normal((size, green.n))
    psi = z @ green.sqrt_factor()
    return psi - psi.mean(axis=1, keepdims=True)


def _block_cg(matvec, b: np.ndarray, rtol: float, maxiter: int) -> np.ndarray:
    """Independent conjugate-gradient runs, one per column of b."""
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.einsum("ij,ij->j", r, r)
    bnorm = np.sqrt(np.einsum("ij,ij->j", b, b))
    bnorm[bnorm == 0] = 1.0
    for _ in range(maxiter):
        if np.all(np.sqrt(rs) <= rtol * bnorm):
            return x
        ap = matvec(p)
        pap = np.einsum("ij,ij->j", p, ap)
        alpha = np.where(pap > 0, rs / np.where(pap > 0, pap, 1.0), 0.0)
        x += p * alpha
        r -= ap * alpha
        rs_new = np.einsum("ij,ij->j", r, r)
        beta = np.where(rs > 0, rs_new / np.where(rs > 0, rs, 1.0), 0.0)
        p = r + p * beta
        rs = rs_new
    raise RuntimeError("conjugate gradient did not converge")


def sample_exact_sparse(g: Multigraph, rng: np.random.Generator, size: int | None = None,
                        rtol: float = 1e-10, maxiter: int = 10_000) -> Field | np.ndarray:
    """Exact zero-average GFF sample without forming G.

    With B the edge incidence matrix, I - P = B B^T / d, so
    psi = (I - P)^+ B xi / sqrt(d) with xi ~ N(0, I_edges) has covariance
    (I - P)^+ (I - P) (I - P)^+ = G. The singular system is solved by CG on
    the mean-zero subspace (the right-hand side already has zero mean).
    """
    if not g.is_connected():
        zero = np.zeros(g.n)
        return Field(zero, "disconnected") if size is None else np.zeros((size, g.n))
    k = 1 if size is None else size
    e = g.edges()
    e = e[e[:, 0] != e[:, 1]]
    m = len(e)
    inc = sp.csr_matrix(
        (np.concatenate([np.ones(m), -np.ones(m)]),
         (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([np.arange(m), np.arange(m)]))),
        shape=(g.n, m))
    xi = rng.standard_normal((m, k))
    rhs = (inc @ xi) / math.sqrt(g.d)
    lap = laplacian(g)
    # a constant shift keeps the operator SPD without moving the mean-zero solution
    op = lambda v: lap @ v + v.mean(axis=0, keepdims=True)
    psi = _block_cg(op, rhs, rtol, maxiter)
    psi -= psi.mean(axis=0, keepdims=True)
    if size is None:
        return Field(psi[:, 0])
    return psi.T


def sequential_prefix(g: Multigraph, green: GreenMatrix | GreenColumns, order: Sequence[int],
                      reservoir: GaussianReservoir, count: int | None = None) -> np.ndarray:
    """Values of the sequential construction on the first ``count`` vertices of ``order``.

    The i-th vertex of ``order`` takes reservoir draw i:
    psi(x_i) = E[psi(x_i) | psi on x_1..x_{i-1}] + xi_i * sqrt(Var(...)).
    """
    order = [int(x) for x in order]
    count = len(order) if count is None else count
    out = np.zeros(count)
    if count == 0:
        return out
    reservoir.reset()
    _, xi = reservoir.take()
    out[0] = math.sqrt(max(green.row(order[0])[order[0]], 0.0)) * xi
    for i in range(1, count):
        prof = hitting_profile(g, order[:i])
        # profile.target is sorted; map back to the assigned values
        pos = {v: j for j, v in enumerate(order[:i])}
        vals = out[[pos[int(a)] for a in prof.target]]
        mean, var = conditional_law(g, green, prof, vals, order[i])
        _, xi = reservoir.take()
        out[i] = mean + xi * math.sqrt(var)
    return out


def sample_sequential(g: Multigraph, green: GreenMatrix, order: Sequence[int],
                      reservoir: GaussianReservoir) -> Field:
    """Full sequential construction; same law as :func:`sample_exact`."""
    order = [int(x) for x in order]
    if sorted(order) != list(range(g.n)):
        raise ValueError("order must be a permutation of the vertices")
    psi = np.zeros(g.n)
    psi[order] = sequential_prefix(g, green, order, reservoir)
    return Field(psi)


def sequential_factor(g: Multigraph, green: GreenMatrix, order: Sequence[int]) -> np.ndarray:
    """Matrix L (vertex x draw) with sample_sequential(...) = L @ xi.

    Row x_i is sum_j w_j * row(x_j) + sqrt(var_i) * e_i with w the conditional
    weights, so L @ L.T reproduces G iff the sequential law is exact.
    """
    order = [int(x) for x in order]
    n = g.n
    lmat = np.zeros((n, n))
    lmat[order[0], 0] = math.sqrt(max(green.values[order[0], order[0]], 0.0))
    for i in range(1, n):
        prof = hitting_profile(g, order[:i])
        y = order[i]
        w = conditional_weights(prof, y)
        var = green.values[y, y] - w @ green.values[y, prof.target]
        lmat[y] = w @ lmat[prof.target]
        lmat[y, i] = math.sqrt(max(var, 0.0))
    return lmat


# -- GFF on the d-regular tree ---------------------------------------------------


def tree_root_std(d: int) -> float:
    return math.sqrt((d - 1) / (d - 2))


def tree_child_std(d: int) -> float:
    return math.sqrt(d / (d - 1))


def tree_gff_root(d: int, rng: np.random.Generator) -> float:
    return tree_root_std(d) * float(rng.standard_normal())


def tree_gff_child(parent_value, xi, d: int):
    """Child value sqrt(d/(d-1)) * xi + parent / (d-1); works elementwise."""
    return tree_child_std(d) * xi + parent_value / (d - 1)


def field_max_abs(f) -> float:
    vals = np.asarray(getattr(f, "values", f))
    return float(np.max(np.abs(vals))) if vals.size else 0.0
