"""Ratio-test pruning of graph-2 nodes, iterated with Euclidean matching."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import ParameterError, Permutation, _points, pairwise_distances

DEFAULT_K = 2.0
DEFAULT_ROUNDS = 3


def ratio_prune(T_V1, V2, k: float = DEFAULT_K) -> np.ndarray:
    """Sorted indices of ``V2`` nodes that survive the ratio test.

    Node ``j`` survives when some transformed node ``i`` has
    ``d_ij <= k * min_j' d_ij'``.  If fewer than ``m`` survive, the removed
    nodes closest to the transformed set are added back up to ``m``.
    """
    if not k > 1:
        raise ParameterError(f"ratio k must exceed 1, got {k}")
    X = _points(T_V1)
    Y = _points(V2)
    d = pairwise_distances(X, Y)
    nearest = d.min(axis=1, keepdims=True)
    keep = np.any(d <= k * nearest, axis=0)
    m = X.shape[0]
    short = m - int(keep.sum())
    if short > 0:
        removed = np.flatnonzero(~keep)
        closeness = d[:, removed].min(axis=0)
        keep[removed[np.argsort(closeness, kind="stable")[:short]]] = True
    return np.flatnonzero(keep)


def default_matcher(V1, V2, solver: str = "fw", **opts):
    """FRGM-E with shape-context unary cost and complete graph-1 adjacency."""
    from .euclid import EuclideanProblem, match_euclidean
    from .features import shape_context_cost

    U = shape_context_cost(V1, V2)
    return match_euclidean(EuclideanProblem.build(V1, V2, U), solver=solver, **opts)


@dataclass
class RemovalResult:
    kept: np.ndarray
    permutation: Permutation
    kept_trace: list = field(default_factory=list)
    final: object = None

    @property
    def assign(self):
        return self.permutation.assign


def iterative_removal(
    V1,
    V2,
    k: float = DEFAULT_K,
    rounds: int = DEFAULT_ROUNDS,
    matcher: Optional[Callable] = None,
) -> RemovalResult:
    """Alternate matching and ratio pruning, then match on the pruned set.

    ``matcher(V1, V2_sub)`` must return an object with ``transformed`` (the
    soft transported nodes ``P @ V2_sub``) and ``assign``.  The returned
    assignment and kept set index the original ``V2``.
    """
    if rounds < 1:
        raise ParameterError("rounds must be at least 1")
    if not k > 1:
        raise ParameterError(f"ratio k must exceed 1, got {k}")
    X1 = _points(V1)
    X2 = _points(V2)
    matcher = matcher or default_matcher
    kept = np.arange(X2.shape[0])
    trace = [kept.size]
    final = None
    for _ in range(rounds):
        res = matcher(X1, X2[kept])
        sub = ratio_prune(res.transformed, X2[kept], k)
        trace.append(sub.size)
        if sub.size == kept.size:
            # nothing pruned: the last match already is the final one
            final = res
            break
        kept = kept[sub]
    if final is None:
        final = matcher(X1, X2[kept])
    assign = tuple(int(kept[j]) for j in final.assign)
    return RemovalResult(kept, Permutation(assign, X2.shape[0]), trace, final)
