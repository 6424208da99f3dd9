"""Linear assignment and entropic optimal-transport subsolvers."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from .core import ParameterError, Permutation

SINKHORN_MAX_ITER = 2000
SINKHORN_TOL = 1e-7
_SCALING_LIMIT = 1e30
# kernels with dynamic range above exp(30) go straight to the stabilized path
_PLAIN_RANGE = 30.0
_CHECK_EVERY = 10


def assignment_cost(cost, assign) -> float:
    """Correctly rounded ``sum_i cost[i, assign[i]]``."""
    cost = np.asarray(cost, dtype=float)
    return math.fsum(cost[i, j] for i, j in enumerate(assign))


def _check_cost(cost):
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ParameterError("cost must be a matrix")
    m, n = cost.shape
    if m > n:
        raise ParameterError(f"cost has more rows than columns ({m} > {n})")
    if not np.all(np.isfinite(cost)):
        raise ParameterError("cost contains NaN or infinite entries")
    return cost


def hungarian(cost) -> Permutation:
    """Globally optimal injective assignment minimizing the summed cost.

    Rectangular ``m < n`` problems are solved directly; this is equivalent to
    padding with zero-cost dummy rows.
    """
    cost = _check_cost(cost)
    rows, cols = linear_sum_assignment(cost)
    assign = np.empty(cost.shape[0], dtype=int)
    assign[rows] = cols
    return Permutation(tuple(assign), cost.shape[1], assignment_cost(cost, assign))


def brute_force_lap(cost) -> Permutation:
    """Exhaustive search over all injections; a test oracle for small sizes."""
    cost = _check_cost(cost)
    m, n = cost.shape
    if n > 10:
        raise ParameterError("brute_force_lap is limited to n <= 10")
    best, best_val = None, math.inf
    for perm in itertools.permutations(range(n), m):
        val = assignment_cost(cost, perm)
        if val < best_val:
            best, best_val = perm, val
    return Permutation(best, n, best_val)


def entropy(P) -> float:
    """``-sum P log P`` with ``0 log 0 = 0``."""
    P = np.asarray(P, dtype=float)
    nz = P[P > 0]
    return float(-(nz * np.log(nz)).sum())


@dataclass
class TransportPlan:
    pi: np.ndarray
    a: np.ndarray
    b: np.ndarray
    iterations: int = 0
    converged: bool = True
    marginal_error: float = 0.0
    log_domain: bool = False
    f: np.ndarray = None
    g: np.ndarray = None

    def cost(self, C) -> float:
        return float((self.pi * np.asarray(C)).sum())


def _marginal_error(pi, a, b):
    return max(np.abs(pi.sum(axis=1) - a).max(), np.abs(pi.sum(axis=0) - b).max())


def _sinkhorn_scaling(C, a, b, eps, max_iter, tol):
    K = np.exp(-(C - C.min()) / eps)
    u = np.ones_like(a)
    v = np.ones_like(b)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for it in range(1, max_iter + 1):
            u = a / (K @ v)
            v = b / (K.T @ u)
            if (
                not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)))
                or u.max() > _SCALING_LIMIT
                or v.max() > _SCALING_LIMIT
            ):
                return None
            if it % 5 == 0 or it == max_iter:
                err = np.abs(u * (K @ v) - a).max()
                if err <= tol:
                    break
    pi = u[:, None] * K * v[None, :]
    with np.errstate(divide="ignore"):
        return pi, it, eps * np.log(u) + C.min(), eps * np.log(v)


def _sinkhorn_log(C, a, b, eps, max_iter, tol, init=None):
    """Log-stabilized iterations with geometric epsilon annealing.

    Dual potentials ``f, g`` hold the large part of the scalings; the kernel
    is rebuilt from them whenever a residual scaling leaves [1e-30, 1e30].
    Warm-started potentials skip the annealing.
    """
    spread = float(C.max() - C.min())
    if init is None:
        f = np.zeros_like(a)
        g = np.zeros_like(b)
        cur = max(eps, spread)
    else:
        f, g = (np.array(x, dtype=float) for x in init)
        cur = eps
        # refit f to the new cost so the first kernel cannot overflow
        f = cur * np.log(a) - cur * logsumexp((g[None, :] - C) / cur, axis=1)
    it = 0
    lim = np.log(_SCALING_LIMIT)
    while True:
        final = cur <= eps
        stage_tol = tol if final else max(tol, 1e-2 * cur / max(spread, 1e-300))
        stage_budget = max_iter - it if final else min(100, max_iter - it)
        K = np.exp((f[:, None] + g[None, :] - C) / cur)
        u = np.ones_like(a)
        v = np.ones_like(b)
        safe = (u, v)
        k = 0
        while k < stage_budget:
            steps = min(_CHECK_EVERY, stage_budget - k)
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                for _ in range(steps):
                    u = a / (K @ v)
                    v = b / (K.T @ u)
            k += steps
            it += steps
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))) or (
                max(np.abs(np.log(u)).max(), np.abs(np.log(v)).max()) >= lim
            ):
                # scalings left the safe range: absorb the last safe column
                # scaling and take one exact log-domain step
                g = g + cur * np.log(safe[1])
                f = cur * np.log(a) - cur * logsumexp((g[None, :] - C) / cur, axis=1)
                g = cur * np.log(b) - cur * logsumexp((f[:, None] - C) / cur, axis=0)
                K = np.exp((f[:, None] + g[None, :] - C) / cur)
                u = np.ones_like(a)
                v = np.ones_like(b)
                safe = (u, v)
                continue
            safe = (u, v)
            if np.abs(u * (K @ v) - a).max() <= stage_tol:
                break
        f = f + cur * np.log(u)
        g = g + cur * np.log(v)
        if final or it >= max_iter:
            break
        cur = max(eps, cur * 0.5)
    pi = np.exp((f[:, None] + g[None, :] - C) / eps)
    return pi, it, f, g


def sinkhorn(
    cost, a, b, epsilon, max_iter=SINKHORN_MAX_ITER, tol=SINKHORN_TOL, init=None
) -> TransportPlan:
    """Entropic OT plan minimizing ``<pi, cost> - epsilon * H(pi)``.

    Runs plain matrix scaling when the Gibbs kernel is well conditioned and
    otherwise (or once a scaling factor passes 1e30) switches to
    log-stabilized iterations with epsilon annealing.  ``init`` holds dual
    potentials ``(f, g)`` from an earlier solve, with
    ``pi = exp((f_i + g_j - cost_ij) / epsilon)``; they warm-start the
    stabilized iterations.  The returned plan carries its potentials.
    """
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    C = np.asarray(cost, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if C.shape != (a.size, b.size):
        raise ParameterError("cost shape disagrees with marginals")
    if np.any(a < 0) or np.any(b < 0):
        raise ParameterError("marginals must be nonnegative")
    if abs(a.sum() - b.sum()) > 1e-9 * max(1.0, a.sum()):
        raise ParameterError("marginals must carry equal mass")
    if not np.all(np.isfinite(C)):
        raise ParameterError("cost contains NaN or infinite entries")

    # restrict to the support; zero-mass rows/columns carry nothing
    ri = np.flatnonzero(a > 0)
    cj = np.flatnonzero(b > 0)
    Cs, as_, bs = C[np.ix_(ri, cj)], a[ri], b[cj]
    # row/column shifts leave the plan unchanged and shrink the kernel's range
    rshift = Cs.min(axis=1)
    Cs = Cs - rshift[:, None]
    cshift = Cs.min(axis=0)
    Cs = Cs - cshift[None, :]

    log_domain = False
    out = None
    warm = None
    if init is not None:
        f0, g0 = (np.asarray(x, dtype=float) for x in init)
        if f0.shape == a.shape and g0.shape == b.shape and np.all(np.isfinite(f0[ri])) and np.all(np.isfinite(g0[cj])):
            warm = (f0[ri] - rshift, g0[cj] - cshift)
    if warm is None and float(Cs.max() - Cs.min()) / epsilon <= _PLAIN_RANGE:
        out = _sinkhorn_scaling(Cs, as_, bs, epsilon, max_iter, tol)
    if out is None:
        log_domain = True
        out = _sinkhorn_log(Cs, as_, bs, epsilon, max_iter, tol, warm)
    pis, it, fs, gs = out
    pi = np.zeros_like(C)
    pi[np.ix_(ri, cj)] = pis
    f = np.full(a.shape, -np.inf)
    g = np.full(b.shape, -np.inf)
    f[ri] = fs + rshift
    g[cj] = gs + cshift
    err = float(_marginal_error(pi, a, b))
    return TransportPlan(pi, a, b, it, err <= max(tol, 1e-12), err, log_domain, f, g)


def lap_sinkhorn(grad, epsilon, max_iter=SINKHORN_MAX_ITER, tol=SINKHORN_TOL) -> np.ndarray:
    """Entropy-regularized linear assignment over the relaxed polytope.

    Rows carry unit mass; the ``n - m`` units of unused column capacity go to a
    zero-cost slack row, so columns sum to at most one.
    """
    return lap_sinkhorn_plan(grad, epsilon, max_iter, tol)[0]


def lap_sinkhorn_plan(grad, epsilon, max_iter=SINKHORN_MAX_ITER, tol=SINKHORN_TOL, init=None):
    """``lap_sinkhorn`` that also returns the transport plan (with potentials)
    of the padded problem, for warm starts."""
    G = np.asarray(grad, dtype=float)
    m, n = G.shape
    if m > n:
        raise ParameterError(f"gradient has more rows than columns ({m} > {n})")
    if m == n:
        plan = sinkhorn(G, np.ones(m), np.ones(n), epsilon, max_iter, tol, init)
        return round_to_polytope(plan.pi), plan
    C = np.vstack([G, np.zeros((1, n))])
    a = np.concatenate([np.ones(m), [float(n - m)]])
    plan = sinkhorn(C, a, np.ones(n), epsilon, max_iter, tol, init)
    return round_to_polytope(plan.pi[:m]), plan


def round_to_polytope(P) -> np.ndarray:
    """Nearby exactly feasible point: rows sum to one, columns to at most one.

    Overfull rows and columns are scaled down, then each row's deficit is
    spread over the columns' spare capacity proportionally.
    """
    P = np.clip(np.asarray(P, dtype=float), 0.0, None)
    rs = P.sum(axis=1)
    over = rs > 1.0
    P[over] /= rs[over, None]
    cs = P.sum(axis=0)
    over = cs > 1.0
    P[:, over] /= cs[None, over]
    deficit = np.clip(1.0 - P.sum(axis=1), 0.0, None)
    spare = np.clip(1.0 - P.sum(axis=0), 0.0, None)
    if deficit.sum() > 0:
        P += np.outer(deficit, spare) / spare.sum()
    return P


def wasserstein_metric(a, b, E, epsilon, max_iter=SINKHORN_MAX_ITER, tol=SINKHORN_TOL) -> float:
    """Entropic OT cost between two distributions on one node set."""
    plan = sinkhorn(E, a, b, epsilon, max_iter, tol)
    return plan.cost(E)
