"""Sliced GW: random directions, projected 1D GW, and the Monte-Carlo average.

For two uniform 1D measures of equal size the optimal coupling of the squared
GW loss is usually one of the two monotone rearrangements (sorted-to-sorted or
sorted-to-reversed), which is what makes slicing cheap. That is not always
true: rare configurations have a strictly better non-monotone permutation.
Below ``EXACT_MAX_N`` points the 1D solvers therefore search all permutations
and only use the monotone candidates above it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EmbeddingSet, SeededRng
from .errors import DimensionMismatch, InvalidInput, SizeMismatch, Unsorted
from .gw_exact import best_permutation

EXACT_MAX_N = 7

ASCENDING = "ascending"
DESCENDING = "descending"
PERMUTATION = "permutation"


@dataclass(frozen=True)
class ProjectionBasis:
    directions: np.ndarray
    seed: int

    @property
    def L(self) -> int:
        return self.directions.shape[0]

    @property
    def d(self) -> int:
        return self.directions.shape[1]


@dataclass(frozen=True)
class Slice1D:
    """Result of one 1D GW solve.

    ``perm[i]`` is the index (into the sorted ``ys``) matched to ``xs[i]``.
    """

    value: float
    matching: str
    perm: np.ndarray


@dataclass
class SgwResult:
    value: float
    per_slice_values: np.ndarray
    basis: ProjectionBasis


def sample_basis(rng: SeededRng | int, L: int, d: int) -> ProjectionBasis:
    """Draw ``L`` directions uniformly on the unit sphere in R^d.

    Each direction is a standard Gaussian vector normalised to unit length.
    Rows with zero norm (which cannot happen in practice) are redrawn.
    The basis seed is taken from ``rng`` so the basis can be regenerated with
    ``sample_basis(basis.seed, L, d)``.
    """
    if L < 1:
        raise InvalidInput(f"L must be >= 1, got {L}")
    if d < 1:
        raise InvalidInput(f"d must be >= 1, got {d}")
    seed = rng if isinstance(rng, (int, np.integer)) else rng.next_seed()
    gen = SeededRng(int(seed))
    dirs = gen.normal((L, d))
    norms = np.linalg.norm(dirs, axis=1)
    while np.any(norms == 0):
        bad = norms == 0
        dirs[bad] = gen.normal((int(bad.sum()), d))
        norms = np.linalg.norm(dirs, axis=1)
    dirs = dirs / norms[:, None]
    dirs.flags.writeable = False
    return ProjectionBasis(dirs, int(seed))


def project(emb: EmbeddingSet | np.ndarray, theta) -> np.ndarray:
    """Sorted inner products of the points with ``theta``."""
    pts = emb.points if isinstance(emb, EmbeddingSet) else np.atleast_2d(np.asarray(emb, float))
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if theta.shape[0] != pts.shape[1]:
        raise DimensionMismatch(f"direction has dimension {theta.shape[0]}, points have {pts.shape[1]}")
    return np.sort(pts @ theta, kind="stable")


def _check_pair(xs, ys):
    xs = np.asarray(xs, dtype=np.float64).ravel()
    ys = np.asarray(ys, dtype=np.float64).ravel()
    if xs.shape != ys.shape:
        raise SizeMismatch(f"1D GW needs equal sizes, got {xs.size} and {ys.size}")
    if xs.size < 1:
        raise InvalidInput("1D GW needs at least one point")
    if np.any(np.diff(xs) < 0) or np.any(np.diff(ys) < 0):
        raise Unsorted("inputs must be sorted ascending")
    return xs, ys


def _naive_cost(xs, ys_matched):
    dx = np.abs(xs[:, None] - xs[None, :])
    dy = np.abs(ys_matched[:, None] - ys_matched[None, :])
    diff = dx - dy
    return float(np.sum(diff * diff)) / xs.size**2


def gw_1d(xs, ys, exact_max_n: int = EXACT_MAX_N) -> Slice1D:
    """GW^2 between two sorted 1D samples of equal size, O(n^2) evaluation.

    Compares the ascending and descending rearrangements (ties go to
    ascending). For ``n <= exact_max_n`` every permutation is searched and a
    non-monotone winner is reported with ``matching == "permutation"``.
    """
    xs, ys = _check_pair(xs, ys)
    n = xs.size
    asc = np.arange(n)
    desc = asc[::-1].copy()
    v_asc = _naive_cost(xs, ys)
    v_desc = _naive_cost(xs, ys[::-1])
    best = Slice1D(v_asc, ASCENDING, asc) if v_asc <= v_desc else Slice1D(v_desc, DESCENDING, desc)
    if n <= exact_max_n and n > 2:
        return _exact_override(xs, ys, best)
    return best


def _exact_override(xs, ys, best: Slice1D) -> Slice1D:
    dx = np.abs(xs[:, None] - xs[None, :])
    dy = np.abs(ys[:, None] - ys[None, :])
    val, perm = best_permutation(dx, dy)
    # only take the permutation when it is strictly better; keeps monotone labels on ties
    if val < best.value - 1e-13 * max(1.0, best.value):
        return Slice1D(val, PERMUTATION, perm)
    return best


def _monotone_cross(x, y):
    """Sum over i<k of (x_k - x_i)(y_k - y_i) using prefix sums."""
    n = x.size
    idx = np.arange(n)
    cx = np.cumsum(x) - x
    cy = np.cumsum(y) - y
    cxy = np.cumsum(x * y) - x * y
    return float(np.sum(idx * x * y - x * cy - y * cx + cxy))


def sgw_fast_slice(xs, ys, exact_max_n: int = EXACT_MAX_N) -> float:
    """Same value as :func:`gw_1d` in O(n) after sorting.

    Expands the square into the two self terms and a cross term; for a
    monotone matching every pairwise difference has a known sign, so the cross
    term reduces to prefix sums.
    """
    xs, ys = _check_pair(xs, ys)
    n = xs.size
    if n <= exact_max_n and n > 2:
        return gw_1d(xs, ys, exact_max_n).value
    # centring is free (translation invariance) and limits cancellation
    x = xs - xs.mean()
    y = ys - ys.mean()
    sx = n * np.dot(x, x) - x.sum() ** 2
    sy = n * np.dot(y, y) - y.sum() ** 2
    asc = _monotone_cross(x, y)
    desc = -_monotone_cross(x, y[::-1])
    best = min(sx + sy - 2.0 * asc, sx + sy - 2.0 * desc)
    return max(2.0 * best / n**2, 0.0)


def _check_sets(X, Y, basis):
    if X.n != Y.n:
        raise SizeMismatch(f"sliced GW needs equal sizes, got {X.n} and {Y.n}")
    if X.d != Y.d or X.d != basis.d:
        raise DimensionMismatch(f"dimensions differ: X={X.d}, Y={Y.d}, basis={basis.d}")


def sgw(X: EmbeddingSet, Y: EmbeddingSet, basis: ProjectionBasis, exact_max_n: int = EXACT_MAX_N) -> SgwResult:
    """Average of the 1D GW^2 values over the directions of ``basis``."""
    _check_sets(X, Y, basis)
    px = np.sort(X.points @ basis.directions.T, axis=0, kind="stable")
    py = np.sort(Y.points @ basis.directions.T, axis=0, kind="stable")
    vals = np.array([gw_1d(px[:, l], py[:, l], exact_max_n).value for l in range(basis.L)])
    return SgwResult(math.fsum(vals) / basis.L, vals, basis)


def sgw_fast(X: EmbeddingSet, Y: EmbeddingSet, basis: ProjectionBasis, exact_max_n: int = EXACT_MAX_N) -> SgwResult:
    """:func:`sgw` through :func:`sgw_fast_slice`; preferred for large ``n``."""
    _check_sets(X, Y, basis)
    px = np.sort(X.points @ basis.directions.T, axis=0, kind="stable")
    py = np.sort(Y.points @ basis.directions.T, axis=0, kind="stable")
    vals = np.array([sgw_fast_slice(px[:, l], py[:, l], exact_max_n) for l in range(basis.L)])
    return SgwResult(math.fsum(vals) / basis.L, vals, basis)


def sgw_value_and_grad(gen: np.ndarray, real: np.ndarray, basis: ProjectionBasis, exact_max_n: int = EXACT_MAX_N):
    """SGW^2 between two point arrays and its gradient w.r.t. ``gen``.

    Per slice the sort orders and the optimal matching are found first and
    then held fixed; the gradient is that of the smooth quadratic objective at
    those discrete choices.

    Returns ``(value, per_slice_values, grad)`` with ``grad`` shaped like ``gen``.
    """
    gen = np.asarray(gen, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    if gen.shape[0] != real.shape[0]:
        raise SizeMismatch(f"sliced GW needs equal sizes, got {gen.shape[0]} and {real.shape[0]}")
    if gen.shape[1] != real.shape[1] or gen.shape[1] != basis.d:
        raise DimensionMismatch(f"dimensions differ: gen={gen.shape[1]}, real={real.shape[1]}, basis={basis.d}")
    n = gen.shape[0]
    theta = basis.directions
    pg = gen @ theta.T  # (n, L)
    order = np.argsort(pg, axis=0, kind="stable")
    ps = np.take_along_axis(pg, order, axis=0).T  # (L, n) sorted
    qs = np.sort(real @ theta.T, axis=0, kind="stable").T

    dx = np.abs(ps[:, :, None] - ps[:, None, :])
    dq = np.abs(qs[:, :, None] - qs[:, None, :])
    dq_rev = dq[:, ::-1, ::-1]
    c_asc = np.sum((dx - dq) ** 2, axis=(1, 2)) / n**2
    c_desc = np.sum((dx - dq_rev) ** 2, axis=(1, 2)) / n**2
    use_desc = c_desc < c_asc
    target = np.where(use_desc[:, None, None], dq_rev, dq)
    vals = np.where(use_desc, c_desc, c_asc)

    if 2 < n <= exact_max_n:
        for l in range(basis.L):
            sl = gw_1d(ps[l], qs[l], exact_max_n)
            if sl.matching == PERMUTATION:
                qm = qs[l][sl.perm]
                target[l] = np.abs(qm[:, None] - qm[None, :])
                vals[l] = sl.value

    sign = np.sign(ps[:, :, None] - ps[:, None, :])
    gs = 4.0 / n**2 * np.sum((dx - target) * sign, axis=2)  # (L, n), sorted order
    gp = np.empty_like(gs)
    np.put_along_axis(gp, order.T, gs, axis=1)
    grad = gp.T @ theta / basis.L
    return math.fsum(vals) / basis.L, vals, grad
