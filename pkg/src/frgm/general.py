"""General graph matching on function spaces.

Each graph's edge attributes define an inner product on functions over its
nodes.  A soft assignment ``P`` transports graph-2 basis functions onto
graph-1 indices; the first stage makes the transported inner products agree
with graph 1's, the second stage interpolates toward a binary solution using
distances between transported functions and graph-2 basis functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ParameterError, Permutation, complete_adjacency, normalize_edge_attr
from .lap import hungarian, wasserstein_metric
from .optimizer import Objective, SolveReport, solve


@dataclass(frozen=True)
class GeneralProblem:
    """Matching instance built from two symmetric edge-attribute matrices.

    ``E1n``/``E2n`` are the metrics scaled to unit maximum; ``E1hat``/``E2hat``
    their Gaussian maps, used as inner-product Gram matrices.
    """

    E1n: np.ndarray
    E2n: np.ndarray
    E1hat: np.ndarray
    E2hat: np.ndarray
    adj1: np.ndarray
    U: np.ndarray
    alpha1: float = 0.99
    alpha2: float = 0.5
    sigma: float = 0.5

    @classmethod
    def build(cls, E1, E2, U=None, adj1=None, alpha1=0.99, alpha2=0.5, sigma=0.5):
        E1 = np.asarray(E1, dtype=float)
        E2 = np.asarray(E2, dtype=float)
        m, n = E1.shape[0], E2.shape[0]
        if E1.shape != (m, m) or E2.shape != (n, n):
            raise ParameterError("edge-attribute matrices must be square")
        if m > n:
            raise ParameterError(f"graph 1 must not be larger than graph 2 ({m} > {n})")
        for E in (E1, E2):
            if np.any(E < 0) or not np.allclose(E, E.T, atol=1e-10):
                raise ParameterError("edge attributes must be symmetric and nonnegative")
        if not (0 <= alpha1 <= 1 and 0 <= alpha2 <= 1):
            raise ParameterError("alpha1 and alpha2 must lie in [0, 1]")
        U = np.zeros((m, n)) if U is None else np.asarray(U, dtype=float)
        if U.shape != (m, n) or not np.all(np.isfinite(U)):
            raise ParameterError(f"unary matrix must be finite with shape {(m, n)}")
        adj1 = complete_adjacency(m) if adj1 is None else np.asarray(adj1, dtype=float)
        return cls(
            E1n=E1 / E1.max() if E1.max() > 0 else E1,
            E2n=E2 / E2.max() if E2.max() > 0 else E2,
            E1hat=normalize_edge_attr(E1, sigma),
            E2hat=normalize_edge_attr(E2, sigma),
            adj1=adj1,
            U=U,
            alpha1=alpha1,
            alpha2=alpha2,
            sigma=sigma,
        )

    @property
    def shape(self):
        return self.U.shape


def transported_attr(P, E2hat) -> np.ndarray:
    """Inner products of transported basis functions: ``P E2hat P^T``."""
    P = np.asarray(P, dtype=float)
    return P @ np.asarray(E2hat, dtype=float) @ P.T


def _weighted_fit(adj, target, P, E2hat):
    F = P @ E2hat @ P.T
    R = target - F
    M = adj * R
    val = float((M * R).sum())
    grad = -2.0 * (M + M.T) @ P @ E2hat
    return val, grad


def j_ori(prob: GeneralProblem, P):
    """Unary cost plus adjacency-weighted inner-product mismatch."""
    P = np.asarray(P, dtype=float)
    a = prob.alpha1
    pv, pg = _weighted_fit(prob.adj1, prob.E1hat, P, prob.E2hat)
    value = (1 - a) * float((P * prob.U).sum()) + a * pv
    return value, (1 - a) * prob.U + a * pg


def j_int(prob: GeneralProblem, P1star, P, D=None):
    """Distance-to-basis cost plus mismatch against the stage-one transport."""
    P = np.asarray(P, dtype=float)
    if D is None:
        D = function_space_distance(P1star, prob.E2n)
    a = prob.alpha2
    target = transported_attr(P1star, prob.E2hat)
    pv, pg = _weighted_fit(prob.adj1, target, P, prob.E2hat)
    value = (1 - a) * float((P * D).sum()) + a * pv
    return value, (1 - a) * D + a * pg


def function_space_distance(P1star, E2, epsilon=None, kind: str = "wasserstein", E2hat=None):
    """Distance from each transported function to each graph-2 basis function.

    With the Wasserstein metric the second argument is a Dirac, so the optimal
    coupling is forced and the distance reduces to ``(P1star @ E2)[i, j]``.
    ``kind="inner"`` uses the metric induced by the Gram matrix ``E2hat``.
    ``epsilon`` switches to an explicit entropic OT solve per entry.
    """
    P1 = np.asarray(P1star, dtype=float)
    if kind == "wasserstein":
        E2 = np.asarray(E2, dtype=float)
        if epsilon is None:
            return P1 @ E2
        m, n = P1.shape
        D = np.empty((m, n))
        for i in range(m):
            for j in range(n):
                D[i, j] = wasserstein_metric(P1[i], np.eye(n)[j], E2, epsilon)
        return D
    if kind == "inner":
        G = np.asarray(E2 if E2hat is None else E2hat, dtype=float)
        GP = P1 @ G
        quad = np.einsum("ij,ij->i", GP, P1)
        D2 = quad[:, None] - 2.0 * GP + np.diag(G)[None, :]
        return np.sqrt(np.clip(D2, 0.0, None))
    raise ParameterError(f"unknown distance kind {kind!r}")


def _objective(fn):
    return Objective(value=lambda P: fn(P)[0], gradient=lambda P: fn(P)[1])


@dataclass
class MatchResult:
    permutation: Permutation
    stage1: SolveReport
    stage2: SolveReport
    P1: np.ndarray
    P2: np.ndarray
    D: Optional[np.ndarray] = None

    @property
    def assign(self):
        return self.permutation.assign

    @property
    def reports(self):
        return self.stage1, self.stage2


def match_general(prob: GeneralProblem, solver: str = "fw", distance: str = "wasserstein", **solver_opts) -> MatchResult:
    """Two-stage matching followed by Hungarian discretization of the
    stage-two solution (largest soft mass wins)."""
    shape = prob.shape
    rep1 = solve(_objective(lambda P: j_ori(prob, P)), shape, solver, **solver_opts)
    P1 = rep1.solution
    D = function_space_distance(P1, prob.E2n if distance == "wasserstein" else prob.E2hat, kind=distance)
    rep2 = solve(_objective(lambda P: j_int(prob, P1, P, D)), shape, solver, **solver_opts)
    P2 = rep2.solution
    return MatchResult(hungarian(-P2), rep1, rep2, P1, P2, D)
