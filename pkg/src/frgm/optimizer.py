"""Frank-Wolfe and entropy-regularized approximate Frank-Wolfe over the
relaxed partial-assignment polytope."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import NumericalError, ParameterError, is_feasible
from .lap import hungarian, lap_sinkhorn_plan

log = logging.getLogger(__name__)

MAX_ITER = 100
GAP_TOL = 1e-6
EPS0 = 0.05
_STALL_RTOL = 1e-9
_STALL_WINDOW = 3
_ARMIJO_C = 1e-4
_ARMIJO_SHRINK = 0.5
_ARMIJO_MIN = 1e-10


@dataclass
class Objective:
    """A differentiable function of an assignment matrix.

    ``line_coeffs(P, D)`` may return ``(c0, c1, c2)`` with
    ``f(P + a D) = c0 + c1 a + c2 a^2``; solvers then use exact line search.
    """

    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    line_coeffs: Optional[Callable[[np.ndarray, np.ndarray], tuple]] = None

    def check_gradient(self, P, rng=None, h=1e-6, rtol=1e-4) -> float:
        """Relative error between the analytic directional derivative and a
        central difference along a random zero-row-sum direction."""
        rng = np.random.default_rng(rng)
        D = rng.standard_normal(P.shape)
        D -= D.mean(axis=1, keepdims=True)
        fd = (self.value(P + h * D) - self.value(P - h * D)) / (2 * h)
        an = float((self.gradient(P) * D).sum())
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-12)
        if err > rtol:
            log.warning("gradient check failed: relative error %.3e", err)
        return err


@dataclass
class SolveReport:
    solution: np.ndarray
    objective_trace: list = field(default_factory=list)
    fw_gaps: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    eps_trace: list = field(default_factory=list)
    alphas: list = field(default_factory=list)
    line_coeffs: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def uniform_init(m: int, n: int) -> np.ndarray:
    return np.full((m, n), 1.0 / n)


def line_search(obj: Objective, P, D, f0=None, grad=None) -> float:
    """Step in [0, 1] along ``D``: exact for quadratics, Armijo otherwise."""
    if obj.line_coeffs is not None:
        _, c1, c2 = obj.line_coeffs(P, D)
        if c2 > 0:
            return float(np.clip(-c1 / (2 * c2), 0.0, 1.0))
        return 1.0 if c1 + c2 < 0 else 0.0
    if f0 is None:
        f0 = obj.value(P)
    if grad is None:
        grad = obj.gradient(P)
    slope = float((grad * D).sum())
    if slope >= 0:
        return 0.0
    alpha = 1.0
    while alpha >= _ARMIJO_MIN:
        if obj.value(P + alpha * D) <= f0 + _ARMIJO_C * alpha * slope:
            return alpha
        alpha *= _ARMIJO_SHRINK
    return 0.0


def _stalled(trace) -> bool:
    if len(trace) <= _STALL_WINDOW:
        return False
    recent = trace[-_STALL_WINDOW - 1 :]
    scale = max(abs(recent[-1]), 1e-300)
    return all(abs(recent[i + 1] - recent[i]) / scale < _STALL_RTOL for i in range(_STALL_WINDOW))


def _emit(sink, **rec):
    if sink is None:
        return
    if callable(sink):
        sink(rec)
    else:
        sink.write(json.dumps(rec) + "\n")


def _solve(obj, init, max_iter, gap_tol, direction, trace_sink, check_grad, eps_of):
    P = np.array(init, dtype=float)
    if not is_feasible(P):
        raise ParameterError("initial point is not in the relaxed assignment polytope")
    if check_grad:
        obj.check_gradient(P)
    f = float(obj.value(P))
    rep = SolveReport(solution=P, objective_trace=[f])
    zero_steps = 0
    for k in range(max_iter):
        G = obj.gradient(P)
        if not np.all(np.isfinite(G)):
            raise NumericalError(f"non-finite gradient at iteration {k}", dump=P.copy())
        eps = eps_of(k, G)
        S = direction(G, eps)
        D = S - P
        gap = -float((G * D).sum())
        rep.fw_gaps.append(gap)
        rep.eps_trace.append(eps)
        rep.iterations = k + 1
        if eps is None and gap <= gap_tol:
            rep.converged = True
            _emit(trace_sink, iter=k, f=f, gap=gap, eps=eps, alpha=0.0)
            break
        if obj.line_coeffs is not None:
            rep.line_coeffs.append(tuple(float(c) for c in obj.line_coeffs(P, D)))
        alpha = line_search(obj, P, D, f, G)
        rep.alphas.append(alpha)
        _emit(trace_sink, iter=k, f=f, gap=gap, eps=eps, alpha=alpha)
        if alpha == 0.0:
            zero_steps += 1
            # an entropic direction can fail to descend while eps is still large
            if eps is None or zero_steps >= _STALL_WINDOW:
                rep.converged = True
                break
            continue
        zero_steps = 0
        P_new = P + alpha * D
        f_new = float(obj.value(P_new))
        if f > f_new - 1e-12 * max(1.0, abs(f)) and f_new > f:
            # rounding-level increase from an exact step; keep the old iterate
            f_new, P_new = f, P
        P, f = P_new, f_new
        rep.objective_trace.append(f)
        if eps is not None and gap <= gap_tol and gap >= 0:
            rep.converged = True
            break
        if _stalled(rep.objective_trace):
            rep.converged = True
            break
    rep.solution = P
    return rep


def fw_solve(
    obj: Objective,
    init=None,
    max_iter: int = MAX_ITER,
    gap_tol: float = GAP_TOL,
    trace_sink=None,
    check_grad: bool = False,
    shape=None,
) -> SolveReport:
    """Frank-Wolfe with a Hungarian linear-minimization oracle.

    Stops when the FW gap ``<grad, P - S>`` falls to ``gap_tol``, when the
    objective stops moving (relative change < 1e-9 three times running), or
    after ``max_iter`` iterations.
    """
    if init is None:
        init = uniform_init(*shape)

    def direction(G, _eps):
        return hungarian(G).to_matrix()

    return _solve(obj, init, max_iter, gap_tol, direction, trace_sink, check_grad, lambda k, G: None)


def afw_solve(
    obj: Objective,
    init=None,
    max_iter: int = MAX_ITER,
    eps0: float = EPS0,
    eps_schedule: Optional[Callable[[int], float]] = None,
    gap_tol: float = GAP_TOL,
    trace_sink=None,
    check_grad: bool = False,
    shape=None,
    scale_eps: bool = True,
    sinkhorn_iter: int = 2000,
    sinkhorn_tol: float = 1e-7,
) -> SolveReport:
    """Approximate Frank-Wolfe: the linear subproblem gets an entropy term
    and is solved by Sinkhorn scaling.

    ``eps_schedule(k)`` defaults to ``eps0 / (k + 1)``.  With ``scale_eps`` the
    value is multiplied by ``max|grad|`` so it does not depend on the cost
    scale.  The reported gaps are measured against the entropic direction.
    """
    if init is None:
        init = uniform_init(*shape)
    sched = eps_schedule or (lambda k: eps0 / (k + 1))

    def eps_of(k, G):
        e = float(sched(k))
        if scale_eps:
            e *= max(float(np.abs(G).max()), 1e-12)
        return e

    # consecutive gradients are close, so the previous duals are a good start
    duals = {}

    def direction(G, eps):
        S, plan = lap_sinkhorn_plan(G, eps, sinkhorn_iter, sinkhorn_tol, duals.get("fg"))
        duals["fg"] = (plan.f, plan.g)
        return S

    return _solve(obj, init, max_iter, gap_tol, direction, trace_sink, check_grad, eps_of)


def solve(obj: Objective, shape, solver: str = "fw", **kw) -> SolveReport:
    if solver == "fw":
        kw.pop("eps0", None)
        return fw_solve(obj, shape=shape, **kw)
    if solver == "afw":
        return afw_solve(obj, shape=shape, **kw)
    raise ParameterError(f"unknown solver {solver!r}")
