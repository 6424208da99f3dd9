"""Deformable matching: alternate Euclidean matching with closed-form fits of
a similarity, affine or Gaussian-RBF nonrigid transform.

Transforms act on row vectors and move ``V1`` toward the correspondence
targets ``Y = P @ V2``.  Every fit minimizes

    J(tau) = tr(Rᵀ (I + lam L1) R)        R = tau(V1) - Y

where ``L1`` is the graph Laplacian of ``adj1``.  This is the squared residual
plus ``lam`` times the distortion of residual differences over the edges of
``adj1`` (each undirected edge counted once).  The nonrigid fit adds
``sigma2 * tr(Wᵀ K W)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .core import (
    NumericalError,
    ParameterError,
    Permutation,
    _points,
    complete_adjacency,
    laplacian,
    pairwise_distances,
)

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.5
DEFAULT_ROUNDS = 10
DISPLACEMENT_TOL = 1e-6
_COND_LIMIT = 1e14


@dataclass(frozen=True)
class Similarity:
    s: float
    R: np.ndarray
    t: np.ndarray
    variant = "similarity"

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        d = R.shape[0]
        if R.shape != (d, d):
            raise ParameterError("R must be square")
        if not np.allclose(R.T @ R, np.eye(d), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ParameterError("R must be a proper rotation")
        if not self.s > 0:
            raise ParameterError("scale must be positive")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(d))
        object.__setattr__(self, "s", float(self.s))

    @classmethod
    def identity(cls, d):
        return cls(1.0, np.eye(d), np.zeros(d))

    def apply(self, V):
        return self.s * V @ self.R + self.t

    def as_affine(self) -> "Affine":
        return Affine(self.s * self.R, self.t)

    def to_dict(self):
        out = {"variant": self.variant, "s": self.s, "R": self.R.tolist(), "t": self.t.tolist()}
        if self.R.shape == (2, 2):
            out["angle"] = float(np.arctan2(self.R[0, 1], self.R[0, 0]))
        return out


@dataclass(frozen=True)
class Affine:
    A: np.ndarray
    t: np.ndarray
    variant = "affine"

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        d = A.shape[0]
        if A.shape != (d, d):
            raise ParameterError("A must be square")
        if abs(np.linalg.det(A)) <= 1e-12:
            raise ParameterError("A must be invertible")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(d))

    def apply(self, V):
        return V @ self.A + self.t

    def as_affine(self) -> "Affine":
        return self

    def to_dict(self):
        return {"variant": self.variant, "A": self.A.tolist(), "t": self.t.tolist()}


@dataclass(frozen=True)
class Nonrigid:
    basis: np.ndarray
    W: np.ndarray
    sigma_w: float
    variant = "nonrigid"

    def __post_init__(self):
        B = _points(self.basis)
        W = np.asarray(self.W, dtype=float)
        if W.shape != B.shape:
            raise ParameterError("W must have the shape of the basis")
        if not self.sigma_w > 0:
            raise ParameterError("sigma_w must be positive")
        object.__setattr__(self, "basis", B)
        object.__setattr__(self, "W", W)

    def apply(self, V):
        return V + gaussian_rbf_kernel(self.basis, self.sigma_w, V) @ self.W

    def to_dict(self):
        return {
            "variant": self.variant,
            "sigma_w": float(self.sigma_w),
            "basis": self.basis.tolist(),
            "W": self.W.tolist(),
        }


Transform = Union[Similarity, Affine, Nonrigid]


@dataclass(frozen=True)
class TransformChain:
    """Transforms applied left to right."""

    steps: tuple = ()

    def apply(self, V):
        for step in self.steps:
            V = step.apply(V)
        return V

    def then(self, tau) -> "TransformChain":
        more = tau.steps if isinstance(tau, TransformChain) else (tau,)
        return TransformChain(self.steps + tuple(more))

    def collapse(self):
        """Single equivalent transform when every step is linear, else self."""
        if not self.steps or any(isinstance(s, Nonrigid) for s in self.steps):
            return self
        if all(isinstance(s, Similarity) for s in self.steps):
            out = self.steps[0]
            for s in self.steps[1:]:
                out = Similarity(out.s * s.s, out.R @ s.R, s.s * out.t @ s.R + s.t)
            return out
        A, t = np.eye(self.steps[0].t.size), np.zeros(self.steps[0].t.size)
        for s in self.steps:
            a = s.as_affine()
            A, t = A @ a.A, t @ a.A + a.t
        return Affine(A, t)

    def to_dict(self):
        c = self.collapse()
        if c is not self:
            return c.to_dict()
        return {"variant": "chain", "steps": [s.to_dict() for s in self.steps]}


def gaussian_rbf_kernel(basis, sigma_w: float, V=None) -> np.ndarray:
    """``K[i, j] = exp(-|basis_j - basis_i|^2 / sigma_w^2)``.

    With ``V`` given, rows index ``V`` and columns the basis.
    """
    if not sigma_w > 0:
        raise ParameterError("sigma_w must be positive")
    B = _points(basis)
    X = B if V is None else np.asarray(V, dtype=float)
    if X.ndim != 2 or X.shape[1] != B.shape[1]:
        raise ParameterError("points and basis differ in dimension")
    D = pairwise_distances(X, B)
    return np.exp(-(D * D) / sigma_w**2)


def apply_transform(tau, V) -> np.ndarray:
    X = np.asarray(V, dtype=float)
    d = _transform_dim(tau)
    if X.ndim != 2 or (d is not None and X.shape[1] != d):
        raise ParameterError("transform and points differ in dimension")
    return tau.apply(X)


def _transform_dim(tau):
    if isinstance(tau, TransformChain):
        return _transform_dim(tau.steps[0]) if tau.steps else None
    if isinstance(tau, Nonrigid):
        return tau.basis.shape[1]
    return tau.t.size


def _fit_inputs(P, V1, V2, adj1, lam):
    X = _points(V1)
    Z = _points(V2)
    P = np.asarray(P, dtype=float)
    m = X.shape[0]
    if P.shape != (m, Z.shape[0]):
        raise ParameterError(f"P must have shape {(m, Z.shape[0])}")
    if lam < 0:
        raise ParameterError("lambda must be nonnegative")
    A = complete_adjacency(m) if adj1 is None else np.asarray(adj1, dtype=float)
    M = np.eye(m) + lam * laplacian(A)
    return X, P @ Z, M


def j_tau(tau, P, V1, V2, adj1=None, lam=DEFAULT_LAMBDA, sigma2: Optional[float] = None) -> float:
    """Fit objective at ``tau``; nonrigid transforms add ``sigma2 tr(Wᵀ K W)``
    (``sigma2`` defaults to :func:`soft_variance`)."""
    X, Y, M = _fit_inputs(P, V1, V2, adj1, lam)
    R = tau.apply(X) - Y
    val = float((R * (M @ R)).sum())
    if isinstance(tau, Nonrigid):
        if sigma2 is None:
            sigma2 = soft_variance(P, V1, V2)
        K = gaussian_rbf_kernel(tau.basis, tau.sigma_w)
        val += sigma2 * float((tau.W * (K @ tau.W)).sum())
    return val


def soft_variance(P, V1, V2) -> float:
    """``(1/mn) sum_ij P_ij |V1_i - V2_j|^2``."""
    P = np.asarray(P, dtype=float)
    D = pairwise_distances(_points(V1), _points(V2))
    return float((P * D * D).sum() / P.size)


def _centered(X, Y):
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    return X - mx, Y - my, mx, my


def fit_similarity(P, V1, V2, adj1=None, lam: float = DEFAULT_LAMBDA) -> Similarity:
    """Closed-form minimizer of the fit objective over ``s V R + t``.

    ``R`` comes from the SVD of the weighted cross-covariance with a
    determinant correction; the scale is a trace ratio; ``t`` aligns the
    centroids.  Needs ``m >= 2``.
    """
    X, Y, M = _fit_inputs(P, V1, V2, adj1, lam)
    if X.shape[0] < 2:
        raise ParameterError("similarity fit needs at least two points")
    Xc, Yc, mx, my = _centered(X, Y)
    C = Xc.T @ M @ Yc
    U, sv, Vt = np.linalg.svd(C)
    d = C.shape[0]
    if sv[0] <= 1e-12 * max(1.0, np.abs(Xc).max() * np.abs(Yc).max()):
        log.warning("rank-deficient cross-covariance; using R = I")
        R = np.eye(d)
    else:
        if d > 1 and sv[d - 2] <= 1e-12 * sv[0]:
            # still optimal, but the rotation about the null directions is arbitrary
            log.warning("rank-deficient cross-covariance; rotation is not unique")
        corr = np.ones(d)
        corr[-1] = np.sign(np.linalg.det(U @ Vt)) or 1.0
        R = U @ np.diag(corr) @ Vt
    den = float((Xc * (M @ Xc)).sum())
    num = float(np.trace(R.T @ C))
    if den <= 0:
        raise ParameterError("source points are all coincident")
    s = num / den
    if not s > 0:
        log.warning("non-positive optimal scale %.3g; clamping", s)
        s = 1e-12
    return Similarity(s, R, my - s * mx @ R)


def fit_affine(P, V1, V2, adj1=None, lam: float = DEFAULT_LAMBDA) -> Affine:
    """Closed-form minimizer over ``V A + t``: a weighted least-squares solve
    on centered coordinates."""
    X, Y, M = _fit_inputs(P, V1, V2, adj1, lam)
    Xc, Yc, mx, my = _centered(X, Y)
    G = Xc.T @ M @ Xc
    if np.linalg.cond(G) > _COND_LIMIT:
        raise NumericalError("source points are degenerate for an affine fit", dump=G)
    A = np.linalg.solve(G, Xc.T @ M @ Yc)
    return Affine(A, my - mx @ A)


def fit_nonrigid(
    P, V1, V2, adj1=None, lam: float = DEFAULT_LAMBDA, sigma_w: Optional[float] = None
) -> Nonrigid:
    """Closed-form RBF weights with basis ``V1``.

    Solves ``(M K + sigma2 I) W = -M (V1 - P V2)`` where ``sigma2`` is the
    soft correspondence variance.
    """
    X, Y, M = _fit_inputs(P, V1, V2, adj1, lam)
    if sigma_w is None:
        sigma_w = default_sigma_w(X)
    K = gaussian_rbf_kernel(X, sigma_w)
    sigma2 = soft_variance(P, X, V2)
    A = M @ K + sigma2 * np.eye(X.shape[0])
    if np.linalg.cond(A) > _COND_LIMIT:
        raise NumericalError("nonrigid system is singular", dump=A)
    W = np.linalg.solve(A, -M @ (X - Y))
    return Nonrigid(X, W, sigma_w)


def default_sigma_w(V) -> float:
    """Half the mean pairwise distance."""
    X = _points(V)
    m = X.shape[0]
    if m < 2:
        return 1.0
    D = pairwise_distances(X)
    val = 0.5 * D.sum() / (m * (m - 1))
    return float(val) if val > 0 else 1.0


FITTERS = {"similarity": fit_similarity, "affine": fit_affine, "nonrigid": fit_nonrigid}


@dataclass
class DeformResult:
    permutation: Permutation
    transform: TransformChain
    transformed: np.ndarray
    P: np.ndarray
    error_trace: list = field(default_factory=list)
    d1: Optional[float] = None
    d2: Optional[float] = None
    rounds: int = 0

    @property
    def assign(self):
        return self.permutation.assign


def _normalizer(X):
    c = X.mean(axis=0)
    scale = float(np.sqrt(((X - c) ** 2).sum(axis=1).mean()))
    if scale <= 0:
        scale = 1.0
    return c, scale


def match_deformable(
    V1,
    V2,
    variant: str = "similarity",
    rounds: int = DEFAULT_ROUNDS,
    lam: float = DEFAULT_LAMBDA,
    sigma_w: Optional[float] = None,
    adjacency="complete",
    solver: str = "fw",
    refit_from_origin: bool = False,
    normalize: bool = True,
    truth: Optional[Sequence[int]] = None,
    **solver_opts,
) -> DeformResult:
    """Alternate FRGM-E matching (rotation-invariant shape-context unary
    cost) with closed-form transform fits.

    Each round matches the current ``tau(V1)`` against ``V2``, fits a step
    transform from the soft stage-two assignment and composes it onto
    ``tau``.  Both sets are centered and scaled to unit RMS radius first and
    the result is mapped back.  ``error_trace`` holds the mean distance from
    ``tau(V1)`` to the matched nodes, or to the true correspondents when
    ``truth`` is given; ``d1``/``d2`` need ``truth``.
    """
    from .euclid import EuclideanProblem, make_adjacency, match_euclidean
    from .features import shape_context_cost

    if variant not in FITTERS:
        raise ParameterError(f"unknown variant {variant!r}")
    if rounds < 1:
        raise ParameterError("rounds must be at least 1")
    X1 = _points(V1)
    X2 = _points(V2)
    if X1.shape[1] != X2.shape[1]:
        raise ParameterError("point sets differ in dimension")
    d = X1.shape[1]
    if d != 2:
        # the unary descriptor is planar; without it matching cannot start
        raise ParameterError("deformable matching needs 2D point sets")
    if normalize:
        c1, sc1 = _normalizer(X1)
        c2, sc2 = _normalizer(X2)
    else:
        c1, sc1, c2, sc2 = np.zeros(d), 1.0, np.zeros(d), 1.0
    pre = Similarity(1.0 / sc1, np.eye(d), -c1 / sc1)
    post = Similarity(sc2, np.eye(d), c2)
    A1 = pre.apply(X1)
    A2 = (X2 - c2) / sc2
    if sigma_w is not None:
        sigma_w = sigma_w / sc1
    fit = FITTERS[variant]
    truth_arr = None if truth is None else np.asarray(truth, dtype=int)

    total = TransformChain()
    cur = A1
    trace = []
    res = None
    for r in range(rounds):
        U = shape_context_cost(cur, A2, rotation_invariant=True)
        prob = EuclideanProblem(cur, A2, make_adjacency(cur, adjacency), U)
        res = match_euclidean(prob, solver=solver, **solver_opts)
        P = res.P2
        base = A1 if refit_from_origin else cur
        kw = {"sigma_w": sigma_w} if variant == "nonrigid" else {}
        step = fit(P, base, A2, prob.adj1, lam, **kw)
        total = TransformChain((step,)) if refit_from_origin else total.then(step)
        new = total.apply(A1)
        moved = float(np.linalg.norm(new - cur, axis=1).mean())
        cur = new
        target = A2[list(res.assign)] if truth_arr is None else A2[truth_arr]
        trace.append(float(np.linalg.norm(cur - target, axis=1).mean()) * sc2)
        if moved < DISPLACEMENT_TOL:
            break
    chain = TransformChain((pre,)).then(total).then(post)
    out = chain.collapse() if variant != "nonrigid" else chain
    transformed = chain.apply(X1)
    P = res.P2
    d1 = d2 = None
    if truth_arr is not None:
        d1 = float(np.linalg.norm(transformed - X2[truth_arr], axis=1).mean())
        d2 = float(np.linalg.norm(X2[list(res.assign)] - X2[truth_arr], axis=1).mean())
    return DeformResult(res.permutation, out, transformed, P, trace, d1, d2, r + 1)
