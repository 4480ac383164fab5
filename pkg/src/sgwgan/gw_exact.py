"""Squared Gromov-Wasserstein discrepancy: objective, permutation oracle, entropic solver."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from .core import Coupling, EmbeddingSet, pairwise_distances
from .errors import DimensionMismatch, InvalidInput, NumericalOverflow, SizeMismatch, TooLarge

# (n*m)^2 terms; above this the factorised contraction is used.
QUADRUPLE_SUM_LIMIT = 4_000_000
BRUTEFORCE_CAP = 9


@dataclass
class GwResult:
    value: float
    coupling: Coupling
    iterations: int
    converged: bool
    history: list[float] = field(default_factory=list)
    epsilon: float | None = None
    bias_bound: float | None = None


def _dist(d) -> np.ndarray:
    if isinstance(d, EmbeddingSet):
        return pairwise_distances(d).values
    return np.asarray(d, dtype=np.float64)


def _objective_quadruple(dx, dy, plan):
    total = 0.0
    for i in range(dx.shape[0]):
        diff = dx[i][:, None, None] - dy[None, :, :]  # (k, j, l)
        total += float(np.sum(diff * diff * plan[i][None, :, None] * plan[:, None, :]))
    return total


def _objective_factored(dx, dy, plan):
    p = plan.sum(1)
    q = plan.sum(0)
    dx2 = dx * dx
    dy2 = dy * dy
    cross = np.sum(plan * (dx @ plan @ dy.T))
    return float(p @ dx2 @ p + q @ dy2 @ q - 2.0 * cross)


def gw_objective(dX, dY, plan, method: str = "auto") -> float:
    """Sum over i,k,j,l of ``(dX[i,k] - dY[j,l])**2 * plan[i,j] * plan[k,l]``.

    ``method`` is ``"quadruple"``, ``"factored"`` or ``"auto"`` (quadruple sum
    while ``(n*m)**2 <= QUADRUPLE_SUM_LIMIT``).
    """
    dx, dy = _dist(dX), _dist(dY)
    p = np.asarray(plan, dtype=np.float64)
    if dx.ndim != 2 or dy.ndim != 2 or dx.shape[0] != dx.shape[1] or dy.shape[0] != dy.shape[1]:
        raise DimensionMismatch("distance matrices must be square")
    if p.shape != (dx.shape[0], dy.shape[0]):
        raise DimensionMismatch(f"plan shape {p.shape} does not match ({dx.shape[0]}, {dy.shape[0]})")
    if method == "auto":
        method = "quadruple" if p.size**2 <= QUADRUPLE_SUM_LIMIT else "factored"
    if method == "quadruple":
        val = _objective_quadruple(dx, dy, p)
    elif method == "factored":
        val = _objective_factored(dx, dy, p)
    else:
        raise InvalidInput(f"unknown method {method!r}")
    return max(val, 0.0)


def permutation_costs(dx: np.ndarray, dy: np.ndarray, perms: np.ndarray) -> np.ndarray:
    """Objective of each permutation coupling in ``perms`` (rows are permutations)."""
    n = dx.shape[0]
    dyp = dy[perms[:, :, None], perms[:, None, :]]
    diff = dx[None] - dyp
    return np.einsum("pik,pik->p", diff, diff) / (n * n)


def best_permutation(dx: np.ndarray, dy: np.ndarray, chunk: int = 20000) -> tuple[float, np.ndarray]:
    """Exhaustive minimum over permutations; ties resolve to the lexicographically first."""
    n = dx.shape[0]
    best_val, best_perm = math.inf, None
    it = itertools.permutations(range(n))
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            break
        perms = np.array(block, dtype=np.intp)
        costs = permutation_costs(dx, dy, perms)
        j = int(np.argmin(costs))
        if costs[j] < best_val:
            best_val, best_perm = float(costs[j]), perms[j]
    return best_val, best_perm


def gw_bruteforce(X: EmbeddingSet, Y: EmbeddingSet, cap: int = BRUTEFORCE_CAP) -> GwResult:
    """Permutation-restricted GW^2 by enumerating all ``n!`` permutation couplings."""
    if X.n != Y.n:
        raise SizeMismatch(f"brute force needs equal sizes, got {X.n} and {Y.n}")
    if X.n > cap:
        raise TooLarge(f"n={X.n} exceeds the brute-force cap of {cap}")
    dx = pairwise_distances(X).values
    dy = pairwise_distances(Y).values
    val, perm = best_permutation(dx, dy)
    return GwResult(val, Coupling.from_permutation(perm), math.factorial(X.n), True)


def _lse(m: np.ndarray, axis: int) -> np.ndarray:
    top = m.max(axis=axis, keepdims=True)
    out = np.log(np.exp(m - top).sum(axis=axis, keepdims=True)) + top
    return out.squeeze(axis)


@dataclass
class SinkhornResult:
    plan: np.ndarray
    iterations: int
    error: float
    f: np.ndarray
    g: np.ndarray


def sinkhorn_log(a, b, cost, epsilon, tol=1e-9, max_iter=10000, f=None, g=None) -> SinkhornResult:
    """Log-domain Sinkhorn with epsilon-scaling.

    Potentials ``f, g`` are in cost units and may be passed in as a warm
    start. The regularisation is lowered geometrically from the cost range
    down to ``epsilon`` (skipped on a warm start); only the last stage is
    held to ``tol`` (L1 error on the row marginals, columns are exact after
    each sweep). Newton steps on the dual finish the job if the sweeps stall.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    scale = float(np.abs(cost).max()) if cost.size else 0.0
    if epsilon < 1e-13 * scale:
        # rounding error in (f + g - cost) / epsilon would exceed one unit
        raise NumericalOverflow(f"epsilon={epsilon!r} is below the resolution of a cost of size {scale:.3g}")
    log_a, log_b = np.log(a), np.log(b)
    if f is None or g is None:
        f, g = np.zeros_like(a), np.zeros_like(b)
        eps = max(float(epsilon), float(np.ptp(cost)))
    else:
        # warm start: potentials are already near the target scale
        f, g = f.copy(), g.copy()
        eps = float(epsilon)
    total, err = 0, math.inf
    while True:
        last = eps <= epsilon
        stage_tol = tol if last else max(tol, 1e-5)
        for _ in range(max_iter):
            total += 1
            f = eps * log_a - eps * _lse((g[None, :] - cost) / eps, 1)
            g = eps * log_b - eps * _lse((f[:, None] - cost) / eps, 0)
            if total % 5 == 0:
                plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
                err = float(np.abs(plan.sum(1) - a).sum())
                if err < stage_tol:
                    break
        if last:
            break
        eps = max(float(epsilon), eps * 0.25)
    if err >= tol:
        f, g, steps = _newton_polish(a, b, cost, float(epsilon), f, g, tol)
        total += steps
    plan = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    err = float(np.abs(plan.sum(1) - a).sum() + np.abs(plan.sum(0) - b).sum())
    return SinkhornResult(plan, total, err, f, g)


def _newton_polish(a, b, cost, eps, f, g, tol, max_steps=60):
    """Newton ascent on the entropic dual, gauge fixed by pinning ``g[-1]``.

    Sinkhorn slows to a crawl when epsilon is small against the cost gaps;
    a handful of Newton steps from its output restores tight marginals.
    """
    n, m = a.size, b.size

    def dual(f, g):
        return float(a @ f + b @ g - eps * np.exp((f[:, None] + g[None, :] - cost) / eps).sum())

    cur = dual(f, g)
    steps = 0
    for steps in range(1, max_steps + 1):
        plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
        r, c = plan.sum(1), plan.sum(0)
        grad = np.concatenate([a - r, (b - c)[:-1]])
        if np.abs(grad[:n]).sum() + np.abs(b - c).sum() < tol:
            break
        hess = np.zeros((n + m - 1, n + m - 1))
        hess[:n, :n] = np.diag(r)
        hess[n:, n:] = np.diag(c[:-1])
        hess[:n, n:] = plan[:, :-1]
        hess[n:, :n] = plan[:, :-1].T
        hess /= eps
        hess[np.diag_indices_from(hess)] += 1e-13 * hess.diagonal().max()
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            nf = f + t * step[:n]
            ng = g.copy()
            ng[:-1] += t * step[n:]
            val = dual(nf, ng)
            # near the optimum dual gains fall below rounding; tolerate that
            if val >= cur - 1e-13 * (1.0 + abs(cur)):
                f, g, cur = nf, ng, val
                break
            t *= 0.5
        else:
            break
    return f, g, steps


def default_epsilon(dX) -> float:
    """Scale-adaptive default: ``1e-2 * median(dX**2)`` over off-diagonal entries."""
    dx = _dist(dX)
    off = dx[~np.eye(dx.shape[0], dtype=bool)]
    if off.size == 0:
        return 1e-2
    med = float(np.median(off**2))
    return 1e-2 * med if med > 0 else 1e-2


def _neg_entropy(plan) -> float:
    nz = plan[plan > 0]
    return float(np.sum(nz * np.log(nz)))


def _mds_orders(d: np.ndarray, k: int = 3) -> list[np.ndarray]:
    """Point orders along the leading classical-MDS axes, plus eccentricity order."""
    n = d.shape[0]
    orders = [np.argsort(d.mean(1), kind="stable")]
    if n < 3:
        return orders
    j = np.eye(n) - 1.0 / n
    gram = -0.5 * j @ (d * d) @ j
    w, v = np.linalg.eigh(gram)
    for i in np.argsort(w)[::-1][:k]:
        if w[i] > 1e-12 * max(abs(w).max(), 1e-300):
            orders.append(np.argsort(v[:, i], kind="stable"))
    return orders


def _corner_plan(ox, oy, a, b) -> np.ndarray:
    """North-west-corner coupling after reordering both sides: a vertex of the polytope."""
    plan = np.zeros((a.size, b.size))
    i = j = 0
    ra, rb = a[ox[0]], b[oy[0]]
    while i < a.size and j < b.size:
        t = min(ra, rb)
        plan[ox[i], oy[j]] += t
        ra -= t
        rb -= t
        if ra <= 1e-15:
            i += 1
            ra = a[ox[i]] if i < a.size else 0.0
        if rb <= 1e-15:
            j += 1
            rb = b[oy[j]] if j < b.size else 0.0
    return plan


def swap_descent(dx: np.ndarray, dy: np.ndarray, perm: np.ndarray, max_swaps: int | None = None):
    """Best-improvement pairwise-swap search over permutation couplings.

    Returns ``(perm, value)`` at a swap-local minimum. Each pass evaluates
    every transposition in O(n^3) through a closed-form delta.
    """
    n = dx.shape[0]
    perm = np.asarray(perm, dtype=np.intp).copy()
    limit = n * n if max_swaps is None else max_swaps
    for _ in range(limit):
        bp = dy[np.ix_(perm, perm)]
        m = dx @ bp.T
        dg = np.diag(m)
        # change in n^2 * objective when perm[i] and perm[j] are exchanged
        delta = 4.0 * (dg[:, None] + dg[None, :] - m - m.T - 2.0 * dx * bp)
        np.fill_diagonal(delta, 0.0)
        k = int(np.argmin(delta))
        if delta.flat[k] >= -1e-12 * max(1.0, float(np.abs(m).max())):
            break
        i, j = divmod(k, n)
        perm[i], perm[j] = perm[j], perm[i]
    val = float(np.sum((dx - dy[np.ix_(perm, perm)]) ** 2)) / (n * n)
    return perm, val


def initial_plan(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Deterministic vertex start for the entropic solver.

    Candidate vertices pair eccentricity and MDS-axis orders of both sides
    (each in both directions); with equal sizes every candidate is improved
    by swap descent. The lowest-objective vertex wins.
    """
    n, m = dx.shape[0], dy.shape[0]
    a, b = np.full(n, 1.0 / n), np.full(m, 1.0 / m)
    best_val, best = math.inf, None
    for ox in _mds_orders(dx):
        for oy in _mds_orders(dy):
            for oyy in (oy, oy[::-1]):
                if n == m:
                    perm = np.empty(n, dtype=np.intp)
                    perm[ox] = oyy
                    perm, val = swap_descent(dx, dy, perm)
                    plan = None
                else:
                    plan = _corner_plan(ox, oyy, a, b)
                    val = _objective_factored(dx, dy, plan)
                if val < best_val - 1e-15:
                    best_val = val
                    best = plan if plan is not None else Coupling.from_permutation(perm).plan
    return best


def gw_entropic(
    X,
    Y,
    epsilon: float,
    max_outer: int = 200,
    tol: float = 1e-7,
    sinkhorn_max_iter: int = 50,
) -> GwResult:
    """Entropic GW^2 by alternating linearisation and log-domain Sinkhorn.

    Minimises ``GW(T) + epsilon * sum(T log T)`` over couplings. Starting
    from the vertex picked by :func:`initial_plan`, each outer step solves
    the entropic transport problem on the gradient of the quadratic term at
    the current plan, warm-starting the dual potentials. For Euclidean
    distance matrices the quadratic term is concave on the polytope, so the
    regularised objective recorded in ``history`` never increases; a step
    that would raise it (possible only through floating-point rounding near
    the fixed point) is discarded and ends the iteration.

    ``value`` is the unregularised objective of the final plan (after a
    rounding pass onto the exact marginals). ``bias_bound`` is
    ``epsilon * (sum(T0 log T0) + log(n m))``: the value cannot exceed the
    start vertex's objective by more than this. Non-convergence is reported
    through ``converged``, not raised.
    """
    if not (isinstance(epsilon, (int, float, np.floating)) and epsilon > 0 and math.isfinite(epsilon)):
        raise InvalidInput(f"epsilon must be a positive finite number, got {epsilon!r}")
    dx, dy = _dist(X), _dist(Y)
    n, m = dx.shape[0], dy.shape[0]
    if n < 1 or m < 1:
        raise InvalidInput("need at least one point on each side")
    a = np.full(n, 1.0 / n)
    b = np.full(m, 1.0 / m)
    const = 2.0 * (((dx * dx) @ a)[:, None] + ((dy * dy) @ b)[None, :])
    plan = initial_plan(dx, dy)
    bias = float(epsilon) * (_neg_entropy(plan) + math.log(n * m))
    f = g = None
    history = [_objective_factored(dx, dy, plan) + epsilon * _neg_entropy(plan)]
    converged = False
    it = 0
    with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
        try:
            for it in range(1, max_outer + 1):
                cost = const - 4.0 * dx @ plan @ dy.T
                sk = sinkhorn_log(a, b, cost, epsilon, tol=min(tol, 1e-13), max_iter=sinkhorn_max_iter, f=f, g=g)
                new, f, g = sk.plan, sk.f, sk.g
                if not np.all(np.isfinite(new)) or new.sum() <= 0:
                    raise FloatingPointError
                new = _round_to_marginals(new, a, b)
                change = float(np.linalg.norm(new - plan))
                score = _objective_factored(dx, dy, new) + epsilon * _neg_entropy(new)
                if score > history[-1]:
                    # exact steps never ascend: a rise at rounding level means the
                    # objective is stationary to machine precision
                    converged = change < tol or score - history[-1] <= 1e-12 * (1.0 + abs(score))
                    break
                plan = new
                history.append(score)
                if change < tol:
                    converged = True
                    break
        except (FloatingPointError, NumericalOverflow):
            raise NumericalOverflow(f"Sinkhorn scaling failed at epsilon={epsilon!r}") from None
    # Sinkhorn leaves marginal error around tol; polish so Coupling validates.
    plan = _round_to_marginals(plan, a, b)
    value = gw_objective(dx, dy, plan)
    return GwResult(value, Coupling(plan, a, b), it, converged, history, float(epsilon), bias)


def _round_to_marginals(plan, a, b):
    """Project a near-feasible plan onto the exact transport polytope (Altschuler et al. rounding)."""
    x = np.minimum(a / np.maximum(plan.sum(1), 1e-300), 1.0)
    plan = plan * x[:, None]
    y = np.minimum(b / np.maximum(plan.sum(0), 1e-300), 1.0)
    plan = plan * y[None, :]
    ea = np.maximum(a - plan.sum(1), 0.0)
    eb = np.maximum(b - plan.sum(0), 0.0)
    s = ea.sum()
    if s > 0:
        plan = plan + np.outer(ea, eb) / s
    return plan
