"""Shape-context node descriptors and unary dissimilarity matrices."""

from __future__ import annotations

import numpy as np

from .core import ParameterError, _points, pairwise_distances

RADIAL_BINS = 5
ANGULAR_BINS = 12
R_INNER = 0.125
R_OUTER = 2.0


def _histograms(X, radial_bins, angular_bins, origin_angle):
    m = X.shape[0]
    if m < 2:
        raise ParameterError("shape context needs at least two points")
    D = pairwise_distances(X)
    off = ~np.eye(m, dtype=bool)
    scale = np.median(D[off])
    if scale <= 0:
        scale = 1.0
    edges = np.logspace(np.log10(R_INNER), np.log10(R_OUTER), radial_bins + 1) * scale
    # points inside the inner / beyond the outer radius fall in the end bins
    rbin = np.clip(np.searchsorted(edges, D, side="right") - 1, 0, radial_bins - 1)
    diff = X[None, :, :] - X[:, None, :]
    theta = np.arctan2(diff[..., 1], diff[..., 0]) - origin_angle[:, None]
    theta = np.mod(theta, 2 * np.pi)
    tbin = np.floor(theta / (2 * np.pi / angular_bins)).astype(int) % angular_bins
    flat = rbin * angular_bins + tbin
    H = np.zeros((m, radial_bins * angular_bins))
    rows = np.broadcast_to(np.arange(m)[:, None], (m, m))
    np.add.at(H, (rows[off], flat[off]), 1.0)
    return H / (m - 1)


def shape_context(V, radial_bins: int = RADIAL_BINS, angular_bins: int = ANGULAR_BINS) -> np.ndarray:
    """Log-polar histograms of relative positions, one row per point.

    Radial edges are log-spaced between 0.125 and 2 times the median pairwise
    distance; rows sum to one.
    """
    X = _check_2d(V)
    return _histograms(X, radial_bins, angular_bins, np.zeros(X.shape[0]))


def rotation_invariant_shape_context(
    V, radial_bins: int = RADIAL_BINS, angular_bins: int = ANGULAR_BINS
) -> np.ndarray:
    """Shape context whose angular origin at each point is the direction to
    the point-set centroid."""
    X = _check_2d(V)
    to_c = X.mean(axis=0) - X
    origin = np.where(
        np.hypot(to_c[:, 0], to_c[:, 1]) > 1e-12, np.arctan2(to_c[:, 1], to_c[:, 0]), 0.0
    )
    return _histograms(X, radial_bins, angular_bins, origin)


def _check_2d(V):
    X = _points(V)
    if X.ndim != 2 or X.shape[1] != 2:
        raise ParameterError("shape context is defined for 2D point sets")
    return X


def unary_cost(F1, F2, kind: str = "chi2", normalize: bool = True) -> np.ndarray:
    """Descriptor dissimilarity matrix, scaled to [0, 1] by its maximum."""
    F1 = np.atleast_2d(np.asarray(F1, dtype=float))
    F2 = np.atleast_2d(np.asarray(F2, dtype=float))
    if F1.shape[1] != F2.shape[1]:
        raise ParameterError("descriptor widths differ")
    U = np.empty((F1.shape[0], F2.shape[0]))
    step = max(1, 2_000_000 // max(1, F2.size))
    for s in range(0, F1.shape[0], step):
        a = F1[s : s + step, None, :]
        b = F2[None, :, :]
        if kind == "chi2":
            U[s : s + step] = 0.5 * ((a - b) ** 2 / (a + b + 1e-12)).sum(axis=2)
        elif kind == "l2":
            U[s : s + step] = np.sqrt(((a - b) ** 2).sum(axis=2))
        else:
            raise ParameterError(f"unknown unary cost kind {kind!r}")
    if normalize:
        mx = U.max()
        if mx > 0:
            U /= mx
    return U


def shape_context_cost(V1, V2, rotation_invariant: bool = False, kind: str = "chi2") -> np.ndarray:
    fn = rotation_invariant_shape_context if rotation_invariant else shape_context
    return unary_cost(fn(V1), fn(V2), kind)
