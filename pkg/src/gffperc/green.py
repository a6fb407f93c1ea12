"""Green functions: closed form on the d-regular tree, zero-average Green
matrix of a finite multigraph, hitting profiles and the conditional law of
the zero-average GFF given its values on a vertex set.

The zero-average Green function of the rate-1 continuous-time walk is the
pseudo-inverse of ``I - P`` on mean-zero vectors: integrating
``exp(t(P - I)) - J/n`` over ``t`` gives exactly that operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from gffperc.multigraph import Multigraph

SOLVE_RTOL = 1e-10
DENSE_LIMIT = 4000


class DisconnectedGraphError(ValueError):
    pass


def green_tree(d: int, dist: int) -> float:
    """Green function of simple random walk on the d-regular tree."""
    if d < 3:
        raise ValueError("d must be at least 3")
    if dist < 0:
        raise ValueError("distance must be nonnegative")
    return (d - 1) ** (1 - dist) / (d - 2)


@dataclass(eq=False)
class GreenMatrix:
    values: np.ndarray
    _factor: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def row(self, y: int) -> np.ndarray:
        return self.values[y]

    def sqrt_factor(self) -> np.ndarray:
        """Symmetric square root of G (spectral), cached."""
        if self._factor is None:
            w, v = np.linalg.eigh(self.values)
            w = np.clip(w, 0.0, None)
            self._factor = (v * np.sqrt(w)) @ v.T
        return self._factor


def laplacian(g: Multigraph) -> sp.csr_matrix:
    """I - P with P the multiplicity-weighted transition kernel."""
    return (sp.identity(g.n, format="csr") - g.transition_matrix()).tocsr()


def green_zero_average(g: Multigraph, max_n: int = DENSE_LIMIT) -> GreenMatrix:
    """Dense pseudo-inverse of ``I - P`` restricted to mean-zero vectors."""
    if g.n > max_n:
        raise ValueError(f"dense Green matrix disabled above n={max_n}")
    if not g.is_connected():
        raise DisconnectedGraphError("Green function needs a connected graph")
    n = g.n
    lap = laplacian(g).toarray()
    proj = np.eye(n) - 1.0 / n
    # (L + J/n) is invertible on connected graphs and its inverse minus J/n is L^+
    m = lap + 1.0 / n
    gm = np.linalg.solve(m, proj)
    resid = np.linalg.norm(lap @ gm - proj) / max(np.linalg.norm(proj), 1.0)
    if resid > SOLVE_RTOL:
        raise np.linalg.LinAlgError(f"Green solve residual {resid:.2e} above tolerance")
    gm = 0.5 * (gm + gm.T)
    gm -= gm.mean(axis=1, keepdims=True)
    return GreenMatrix(gm)


class GreenColumns:
    """Selected rows of the zero-average Green matrix from sparse solves.

    Grounding one vertex v0 makes the Laplacian invertible; the solution
    u of the grounded system with u(v0) = 0 satisfies (I - P)u = e_y - 1/n,
    so u minus its mean is row y of G. Rows are cached.
    """

    def __init__(self, g: Multigraph):
        if not g.is_connected():
            raise DisconnectedGraphError("Green function needs a connected graph")
        self.n = g.n
        self._lap = laplacian(g).tocsc()
        self._lu = spla.splu(self._lap[1:, 1:].tocsc())
        self._rows = {}

    def row(self, y: int) -> np.ndarray:
        y = int(y)
        if y not in self._rows:
            rhs = -np.full(self.n, 1.0 / self.n)
            rhs[y] += 1.0
            u = np.zeros(self.n)
            u[1:] = self._lu.solve(rhs[1:])
            resid = np.abs(self._lap @ u - rhs).max()
            if resid > SOLVE_RTOL:
                raise np.linalg.LinAlgError(f"Green solve residual {resid:.2e} above tolerance")
            self._rows[y] = u - u.mean()
        return self._rows[y]


@dataclass(frozen=True, eq=False)
class HittingProfile:
    """Walk functionals for the first hitting time of ``target``.

    ``hit_distribution[x, j]`` is the probability that the walk from ``x``
    enters the target at ``target[j]``.
    """

    target: np.ndarray
    hit_expectation: np.ndarray
    hit_distribution: np.ndarray
    stationary_expectation: float

    def index_of(self) -> dict[int, int]:
        return {int(a): j for j, a in enumerate(self.target)}


def hitting_profile(g: Multigraph, target: Iterable[int]) -> HittingProfile:
    target = np.unique(np.fromiter(target, dtype=np.int64))
    if target.size == 0:
        raise ValueError("target set must be nonempty")
    if target.min() < 0 or target.max() >= g.n:
        raise ValueError("target vertex out of range")
    n = g.n
    in_a = np.zeros(n, dtype=bool)
    in_a[target] = True
    rest = np.flatnonzero(~in_a)
    hit = np.zeros((n, target.size))
    hit[target, np.arange(target.size)] = 1.0
    m = np.zeros(n)
    if rest.size:
        p = g.transition_matrix().tocsr()
        p_rr = p[rest][:, rest]
        p_ra = p[rest][:, target].toarray()
        system = (sp.identity(rest.size, format="csc") - p_rr).tocsc()
        try:
            lu = spla.splu(system)
        except RuntimeError as exc:
            raise DisconnectedGraphError("some vertex cannot reach the target") from exc
        rhs = np.column_stack([p_ra, np.ones(rest.size)])
        sol = lu.solve(rhs)
        resid = np.abs(system @ sol - rhs).max() / max(np.abs(rhs).max(), 1.0)
        if not np.all(np.isfinite(sol)) or resid > SOLVE_RTOL:
            raise DisconnectedGraphError("hitting problem is singular (disconnected graph?)")
        hit[rest] = sol[:, :-1]
        m[rest] = sol[:, -1]
    return HittingProfile(target, m, hit, float(m.mean()))


def _values_on_target(profile: HittingProfile, values) -> np.ndarray:
    if isinstance(values, dict):
        return np.array([values[int(a)] for a in profile.target], dtype=float)
    vals = np.asarray(values, dtype=float)
    if vals.shape != profile.target.shape:
        raise ValueError("values must be indexed like profile.target")
    return vals


def conditional_weights(profile: HittingProfile, y: int) -> np.ndarray:
    """Linear weights w with E[psi(y) | psi on A] = w . psi_A."""
    h = profile.hit_distribution
    if profile.stationary_expectation == 0.0:
        return h[y].copy()
    ratio = profile.hit_expectation[y] / profile.stationary_expectation
    return h[y] - ratio * h.mean(axis=0)


def conditional_law(g: Multigraph, green: GreenMatrix | GreenColumns, profile: HittingProfile, values,
                    y: int) -> tuple[float, float]:
    """Mean and variance of psi(y) given psi on the target set of ``profile``.

    Uses the hitting-time representation: with H the hitting time of A,
    mean = E_y[psi(X_H)] - E_y[H]/E_pi[H] * E_pi[psi(X_H)] and
    var  = G(y,y) - E_y[G(y,X_H)] + E_y[H]/E_pi[H] * E_pi[G(y,X_H)].
    """
    if y in set(profile.target.tolist()):
        raise ValueError(f"vertex {y} lies in the conditioning set")
    if green.n != g.n:
        raise ValueError("Green matrix dimension mismatch")
    vals = _values_on_target(profile, values)
    w = conditional_weights(profile, y)
    mean = float(w @ vals)
    gy = green.row(y)
    var = float(gy[y] - w @ gy[profile.target])
    scale = max(1.0, abs(gy[y]))
    if var < -1e-9 * scale:
        raise ArithmeticError(f"negative conditional variance {var}")
    return mean, max(var, 0.0)


def schur_conditional_law(green: GreenMatrix, target: Iterable[int], values,
                          y: int) -> tuple[float, float]:
    """Gaussian conditioning through the Schur complement of G on A.

    Independent reference for :func:`conditional_law`; A must be a proper
    subset so that G restricted to A is nonsingular.
    """
    a = np.unique(np.fromiter(target, dtype=np.int64))
    vals = np.asarray(values, dtype=float)
    gv = green.values
    g_aa = gv[np.ix_(a, a)]
    g_ya = gv[y, a]
    cho = sla.cho_factor(g_aa)
    mean = float(g_ya @ sla.cho_solve(cho, vals))
    var = float(gv[y, y] - g_ya @ sla.cho_solve(cho, g_ya))
    return mean, max(var, 0.0)


def green_distance_profile(g: Multigraph, green: GreenMatrix, max_dist: int) -> np.ndarray:
    """max |G(x, y)| over pairs at each graph distance 0..max_dist."""
    dist = sp.csgraph.shortest_path(g.adjacency(), unweighted=True, directed=False)
    out = np.zeros(max_dist + 1)
    absg = np.abs(green.values)
    for r in range(max_dist + 1):
        mask = dist == r
        out[r] = absg[mask].max() if mask.any() else np.nan
    return out


def heat_semigroup_green(g: Multigraph, t_max: float | None = None) -> np.ndarray:
    """Numerical time integral of exp(t(P - I)) - J/n (Gauss-Legendre panels).

    The horizon defaults to 40 / gap so the truncated tail is below e^-40.
    Slow; kept as an oracle for the resolvent identity at small n.
    """
    n = g.n
    gen = g.transition_matrix().toarray() - np.eye(n)
    w, v = np.linalg.eigh(0.5 * (gen + gen.T))
    if t_max is None:
        gap = -w[w < -1e-10].max()
        t_max = 40.0 / gap
    nodes, weights = np.polynomial.legendre.leggauss(8)
    # unit-width panels resolve exp(-2t) to machine precision with 8 nodes
    edges = np.linspace(0.0, t_max, max(500, math.ceil(t_max)) + 1)
    total = np.zeros(n)
    for lo, hi in zip(edges[:-1], edges[1:]):
        t = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        total += 0.5 * (hi - lo) * (weights[:, None] * np.exp(np.outer(t, w))).sum(axis=0)
    zero = np.isclose(w, 0.0, atol=1e-10)
    total[zero] = 0.0
    return (v * total) @ v.T
