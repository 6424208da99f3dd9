"""Shared data model: point sets, graph attributes, assignment matrices and
graph-construction helpers."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .delaunay import delaunay_triangles

FEAS_TOL = 1e-8


class ParameterError(ValueError):
    """Raised when an argument is outside its documented domain."""


class DegenerateGeometryError(ValueError):
    """Raised when a point configuration admits no triangulation."""


class NumericalError(ArithmeticError):
    """Raised when an iterate or linear system stops being finite/solvable."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointSet:
    """An ordered set of ``m`` nodes in 2D or 3D."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1:
            raise ParameterError("a point set needs at least one point")
        if pts.shape[1] not in (2, 3):
            raise ParameterError(f"points must be 2D or 3D, got d={pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("point coordinates must be finite")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class GraphAttributes:
    adjacency: np.ndarray
    edge_attr: np.ndarray
    node_attr: Optional[np.ndarray] = None

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=float)
        E = np.asarray(self.edge_attr, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ParameterError("adjacency must be square")
        if E.shape != adj.shape:
            raise ParameterError("edge_attr and adjacency dimensions disagree")
        if np.any(adj < 0) or not np.allclose(adj, adj.T, atol=1e-12):
            raise ParameterError("adjacency must be symmetric and nonnegative")
        if np.any(np.diag(adj) != 0):
            raise ParameterError("adjacency must have a zero diagonal")
        if np.any(E < 0) or not np.allclose(E, E.T, atol=1e-12):
            raise ParameterError("edge_attr must be symmetric and nonnegative")
        object.__setattr__(self, "adjacency", _frozen(adj))
        object.__setattr__(self, "edge_attr", _frozen(E))
        if self.node_attr is not None:
            v = np.atleast_2d(np.asarray(self.node_attr, dtype=float))
            if v.shape[0] != adj.shape[0]:
                raise ParameterError("node_attr row count disagrees with adjacency")
            object.__setattr__(self, "node_attr", _frozen(v))

    @property
    def size(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class Permutation:
    """Injective assignment ``i -> assign[i]`` of ``m`` rows into ``n`` columns."""

    assign: tuple
    n: int
    objective: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        a = tuple(int(j) for j in self.assign)
        if len(set(a)) != len(a):
            raise ParameterError("assignment is not injective")
        if any(j < 0 or j >= self.n for j in a):
            raise ParameterError("assignment index out of range")
        object.__setattr__(self, "assign", a)

    @property
    def m(self) -> int:
        return len(self.assign)

    def to_matrix(self) -> np.ndarray:
        P = np.zeros((self.m, self.n))
        P[np.arange(self.m), list(self.assign)] = 1.0
        return P

    @classmethod
    def from_matrix(cls, P) -> "Permutation":
        P = np.asarray(P)
        return cls(tuple(np.argmax(P, axis=1)), P.shape[1])


def is_feasible(P, tol: float = FEAS_TOL) -> bool:
    """True iff ``P`` lies in the relaxed partial-assignment polytope."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or not np.all(np.isfinite(P)):
        return False
    if P.shape[0] > P.shape[1]:
        return False
    if P.min() < -1e-12 or P.max() > 1 + 1e-12:
        return False
    if np.any(np.abs(P.sum(axis=1) - 1.0) > tol):
        return False
    return bool(np.all(P.sum(axis=0) <= 1.0 + tol))


def pairwise_distances(X, Y=None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Y = X if Y is None else np.asarray(Y, dtype=float)
    diff = X[:, None, :] - Y[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _points(V) -> np.ndarray:
    return V.points if isinstance(V, PointSet) else np.asarray(V, dtype=float)


def build_knn_adjacency(V, k: int, symmetrize: str = "union") -> np.ndarray:
    """0/1 adjacency connecting every node to its ``k`` nearest neighbours.

    ``symmetrize`` is ``"union"`` (edge if either endpoint selects the other)
    or ``"intersection"`` (both must select each other).
    """
    X = _points(V)
    m = X.shape[0]
    if not 1 <= k <= m - 1:
        raise ParameterError(f"k must lie in [1, {m - 1}], got {k}")
    D = pairwise_distances(X)
    np.fill_diagonal(D, np.inf)
    # stable sort keeps ties deterministic (lower index wins)
    nn = np.argsort(D, axis=1, kind="stable")[:, :k]
    A = np.zeros((m, m))
    A[np.repeat(np.arange(m), k), nn.ravel()] = 1.0
    if symmetrize == "union":
        A = np.maximum(A, A.T)
    elif symmetrize == "intersection":
        A = np.minimum(A, A.T)
    else:
        raise ParameterError(f"unknown symmetrization {symmetrize!r}")
    np.fill_diagonal(A, 0.0)
    return A


def build_delaunay_adjacency(V) -> np.ndarray:
    X = _points(V)
    if X.shape[1] != 2:
        raise ParameterError("Delaunay adjacency is only defined for 2D points")
    if X.shape[0] < 3:
        raise ParameterError("Delaunay adjacency needs at least 3 points")
    tris = delaunay_triangles(X)
    m = X.shape[0]
    A = np.zeros((m, m))
    for a, b, c in tris:
        A[a, b] = A[b, a] = 1.0
        A[b, c] = A[c, b] = 1.0
        A[a, c] = A[c, a] = 1.0
    return A


def complete_adjacency(m: int) -> np.ndarray:
    A = np.ones((m, m))
    np.fill_diagonal(A, 0.0)
    return A


def normalize_edge_attr(E, sigma: float) -> np.ndarray:
    """Map a metric matrix to ``exp(-(E / max E)^2 / sigma^2)`` elementwise."""
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    E = np.asarray(E, dtype=float)
    emax = E.max() if E.size else 0.0
    if emax <= 0:
        warnings.warn("edge-attribute matrix is all zeros; returning all-ones", stacklevel=2)
        return np.ones_like(E)
    Z = E / emax
    return np.exp(-(Z * Z) / sigma**2)


def eig_ratio(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ParameterError("eig_ratio expects a square matrix")
    if np.max(np.abs(M - M.T)) > 1e-10:
        raise ParameterError("eig_ratio expects a symmetric matrix")
    w = np.linalg.eigvalsh(M)
    return float(w[0] / w[-1])


def laplacian(S) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return np.diag(S.sum(axis=1)) - S


def as_pointset(V, name: str = "points") -> PointSet:
    return V if isinstance(V, PointSet) else PointSet(np.asarray(V, dtype=float))


def check_pair(P, shape: Sequence[int]):
    P = np.asarray(P, dtype=float)
    if P.shape != tuple(shape):
        raise ParameterError(f"expected matrix of shape {tuple(shape)}, got {P.shape}")
    return P
