"""Matching of graphs embedded in Euclidean space.

Stage one preserves edge lengths between ``V1`` and the transported nodes
``P @ V2``.  Stage two smooths the offsets ``P @ V2 - P1 @ V2`` over a sparse
neighbourhood graph while pulling each transported node onto a real node of
``V2``; the stage-two objective is a convex quadratic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    ParameterError,
    Permutation,
    _points,
    build_delaunay_adjacency,
    build_knn_adjacency,
    complete_adjacency,
    laplacian,
    pairwise_distances,
)
from .lap import hungarian
from .optimizer import Objective, SolveReport, solve

_TINY_LENGTH = 1e-12
_SINGLE_CLUSTER_GAP = 0.05


@dataclass(frozen=True)
class EuclideanProblem:
    V1: np.ndarray
    V2: np.ndarray
    adj1: np.ndarray
    U: np.ndarray
    lambda1: float = 0.99
    lambda2: float = 0.5

    def __post_init__(self):
        V1 = np.asarray(_points(self.V1), dtype=float)
        V2 = np.asarray(_points(self.V2), dtype=float)
        m, n = V1.shape[0], V2.shape[0]
        if V1.shape[1] != V2.shape[1]:
            raise ParameterError("point sets have different dimensions")
        if m > n:
            raise ParameterError(f"V1 must not have more points than V2 ({m} > {n})")
        adj = np.asarray(self.adj1, dtype=float)
        if adj.shape != (m, m) or not np.allclose(adj, adj.T) or np.any(np.diag(adj) != 0):
            raise ParameterError("adj1 must be a symmetric m x m matrix with zero diagonal")
        U = np.zeros((m, n)) if self.U is None else np.asarray(self.U, dtype=float)
        if U.shape != (m, n):
            raise ParameterError(f"unary matrix must have shape {(m, n)}")
        if not (0 <= self.lambda1 <= 1 and 0 <= self.lambda2 <= 1):
            raise ParameterError("lambda1 and lambda2 must lie in [0, 1]")
        object.__setattr__(self, "V1", V1)
        object.__setattr__(self, "V2", V2)
        object.__setattr__(self, "adj1", adj)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "_L1", pairwise_distances(V1))

    @property
    def shape(self):
        return self.U.shape

    @classmethod
    def build(cls, V1, V2, U=None, adjacency="complete", lambda1=0.99, lambda2=0.5):
        X1 = _points(V1)
        return cls(X1, _points(V2), make_adjacency(X1, adjacency), U, lambda1, lambda2)


def make_adjacency(X, spec) -> np.ndarray:
    """``"complete"``, ``"delaunay"``, ``{"knn": k}`` or an explicit matrix."""
    X = _points(X)
    if isinstance(spec, str):
        if spec == "complete":
            return complete_adjacency(X.shape[0])
        if spec == "delaunay":
            return build_delaunay_adjacency(X)
        raise ParameterError(f"unknown adjacency {spec!r}")
    if isinstance(spec, dict) and "knn" in spec:
        return build_knn_adjacency(X, int(spec["knn"]))
    A = np.asarray(spec, dtype=float)
    if A.shape != (X.shape[0], X.shape[0]):
        raise ParameterError("explicit adjacency has the wrong shape")
    return A


def j_non(prob: EuclideanProblem, P):
    """Unary cost plus squared edge-length distortion of ``P @ V2``.

    The sum runs over ordered node pairs.  Coincident transported nodes get a
    zero subgradient for the length term.
    """
    P = np.asarray(P, dtype=float)
    lam = prob.lambda1
    X = P @ prob.V2
    ell = pairwise_distances(X)
    L = prob._L1
    R = L - ell
    value = (1 - lam) * float((P * prob.U).sum()) + lam * float((prob.adj1 * R * R).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        W = np.where(ell > _TINY_LENGTH, prob.adj1 * R / ell, 0.0)
    GX = -4.0 * (W.sum(axis=1)[:, None] * X - W @ X)
    return value, (1 - lam) * prob.U + lam * GX @ prob.V2.T


@dataclass(frozen=True)
class SmoothingGraph:
    S: np.ndarray
    L_S: np.ndarray

    @classmethod
    def from_weights(cls, S):
        S = np.asarray(S, dtype=float)
        return cls(S, laplacian(S))


def two_means_threshold(values):
    """Optimal 1D two-cluster split by exhaustive search over sorted cut points.

    Returns ``(threshold, low_mean, high_mean)``; values above ``threshold``
    form the high cluster.  ``None`` when fewer than two values.
    """
    v = np.sort(np.asarray(values, dtype=float))
    k = v.size
    if k < 2:
        return None
    cs = np.cumsum(v)
    cs2 = np.cumsum(v * v)
    best, best_i = np.inf, 1
    for i in range(1, k):
        nl, nr = i, k - i
        sl, sr = cs[i - 1], cs[-1] - cs[i - 1]
        ql, qr = cs2[i - 1], cs2[-1] - cs2[i - 1]
        sse = (ql - sl * sl / nl) + (qr - sr * sr / nr)
        if sse < best - 1e-15:
            best, best_i = sse, i
    return v[best_i - 1], v[:best_i].mean(), v[best_i:].mean()


def build_smoothing_graph(V1, base="delaunay") -> SmoothingGraph:
    """Neighbourhood graph of ``V1`` with its long-edge cluster removed.

    Edge lengths of the base graph (Delaunay in 2D) are split into two
    clusters by 1D k-means and the longer cluster is dropped, unless the two
    cluster means differ by less than 5% of the mean length.
    """
    X = _points(V1)
    if isinstance(base, str) and base == "delaunay" and X.shape[1] != 2:
        base = {"knn": min(6, X.shape[0] - 1)}
    A = make_adjacency(X, base)
    iu = np.triu_indices_from(A, k=1)
    mask = A[iu] > 0
    lengths = pairwise_distances(X)[iu][mask]
    S = A.copy()
    split = two_means_threshold(lengths)
    if split is not None:
        thr, lo, hi = split
        if hi - lo >= _SINGLE_CLUSTER_GAP * lengths.mean():
            drop = np.zeros(A.shape, dtype=bool)
            sel = np.zeros(mask.shape, dtype=bool)
            sel[mask] = lengths > thr
            drop[iu[0][sel], iu[1][sel]] = True
            drop |= drop.T
            S[drop] = 0.0
    S = (S > 0).astype(float)
    return SmoothingGraph.from_weights(S)


def offset_distance(P1star, V1, V2) -> np.ndarray:
    """Euclidean distance from each transported node ``(P1star @ V2)[i]`` to
    each node of ``V2``."""
    X2 = _points(V2)
    return pairwise_distances(np.asarray(P1star, dtype=float) @ X2, X2)


def j_con(prob: EuclideanProblem, smoothing: SmoothingGraph, P1star, P, D=None):
    """Offset-smoothing objective; returns ``(value, gradient)``."""
    P = np.asarray(P, dtype=float)
    if D is None:
        D = offset_distance(P1star, prob.V1, prob.V2)
    lam = prob.lambda2
    Y = (P - P1star) @ prob.V2
    LY = smoothing.L_S @ Y
    value = (1 - lam) * float((P * D).sum()) + lam * float((Y * LY).sum())
    return value, (1 - lam) * D + 2.0 * lam * LY @ prob.V2.T


def j_con_line_coeffs(prob, smoothing, P1star, P, Dir, D):
    """``(c0, c1, c2)`` with ``j_con(P + a Dir) = c0 + c1 a + c2 a^2``."""
    c0, g = j_con(prob, smoothing, P1star, P, D)
    Z = Dir @ prob.V2
    c2 = prob.lambda2 * float((Z * (smoothing.L_S @ Z)).sum())
    return c0, float((g * Dir).sum()), c2


def con_objective(prob, smoothing, P1star, D=None) -> Objective:
    if D is None:
        D = offset_distance(P1star, prob.V1, prob.V2)
    return Objective(
        value=lambda P: j_con(prob, smoothing, P1star, P, D)[0],
        gradient=lambda P: j_con(prob, smoothing, P1star, P, D)[1],
        line_coeffs=lambda P, Dir: j_con_line_coeffs(prob, smoothing, P1star, P, Dir, D),
    )


def non_objective(prob) -> Objective:
    return Objective(value=lambda P: j_non(prob, P)[0], gradient=lambda P: j_non(prob, P)[1])


@dataclass
class EuclideanResult:
    permutation: Permutation
    stage1: SolveReport
    stage2: SolveReport
    P1: np.ndarray
    P2: np.ndarray
    smoothing: SmoothingGraph
    diagnostics: dict = field(default_factory=dict)

    @property
    def assign(self):
        return self.permutation.assign

    @property
    def transformed(self) -> np.ndarray:
        """Transported nodes ``P1 @ V2`` of the stage-one solution."""
        return self.diagnostics["transformed"]


def binarity(P) -> float:
    """Mean over rows of the largest entry; 1 for a permutation."""
    return float(np.asarray(P).max(axis=1).mean())


def match_euclidean(
    prob: EuclideanProblem,
    solver: str = "fw",
    smoothing: Optional[SmoothingGraph] = None,
    smoothing_base="delaunay",
    **solver_opts,
) -> EuclideanResult:
    """Two-stage matching, discretized by Hungarian on ``-P2``.

    From the uniform start every transported node sits at the centroid of
    ``V2``, where the length term has zero subgradient; without a unary term
    the first stage cannot leave that point, so supply ``U`` (for example
    shape-context costs).
    """
    shape = prob.shape
    rep1 = solve(non_objective(prob), shape, solver, **solver_opts)
    P1 = rep1.solution
    if smoothing is None:
        smoothing = build_smoothing_graph(prob.V1, smoothing_base)
    D = offset_distance(P1, prob.V1, prob.V2)
    rep2 = solve(con_objective(prob, smoothing, P1, D), shape, solver, **solver_opts)
    P2 = rep2.solution
    perm = hungarian(-P2)
    diag = {
        "binarity": binarity(P2),
        "binarity_stage1": binarity(P1),
        "stage1_assign": hungarian(-P1).assign,
        "transformed": P1 @ prob.V2,
        "transformed_stage2": P2 @ prob.V2,
        "D": D,
    }
    return EuclideanResult(perm, rep1, rep2, P1, P2, smoothing, diag)
