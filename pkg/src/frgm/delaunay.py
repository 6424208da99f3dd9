"""Incremental Bowyer-Watson Delaunay triangulation in the plane.

Points are normalized to the unit box and nudged by a deterministic
index-seeded perturbation of relative size 1e-9, which breaks exact
duplicates and cocircular ties reproducibly.
"""

from __future__ import annotations

import numpy as np

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))
_PERTURB = 1e-9
_SUPER_RADIUS = 1e4


def _orient(p, q, r):
    return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])


def _circumcircle(P, a, b, c):
    ax, ay = P[a]
    bx, by = P[b][0] - ax, P[b][1] - ay
    cx, cy = P[c][0] - ax, P[c][1] - ay
    d = 2.0 * (bx * cy - by * cx)
    b2 = bx * bx + by * by
    c2 = cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    return ax + ux, ay + uy, ux * ux + uy * uy


def perturbed_unit_coords(X):
    """Return normalized, deterministically perturbed copies of ``X``."""
    X = np.asarray(X, dtype=float)
    lo = X.min(axis=0)
    span = float((X.max(axis=0) - lo).max())
    if span == 0.0:
        span = 1.0
    Y = (X - lo) / span
    idx = np.arange(len(Y))
    ang = idx * _GOLDEN_ANGLE
    rad = _PERTURB * (1.0 + (idx % 7) / 7.0)
    return Y + rad[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])


def is_collinear(X, tol=1e-12):
    X = np.asarray(X, dtype=float)
    Y = X - X.mean(axis=0)
    s = np.linalg.svd(Y, compute_uv=False)
    return s[0] == 0.0 or s[1] <= tol * s[0]


def delaunay_triangles(X):
    """Triangles (index triples, counter-clockwise) of the Delaunay triangulation."""
    from .core import DegenerateGeometryError

    X = np.asarray(X, dtype=float)
    n = len(X)
    if n < 3 or is_collinear(X):
        raise DegenerateGeometryError("points are collinear; no triangulation exists")

    Y = perturbed_unit_coords(X)
    sup = np.array(
        [
            [0.5 + _SUPER_RADIUS * np.cos(t), 0.5 + _SUPER_RADIUS * np.sin(t)]
            for t in (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3)
        ]
    )
    P = np.vstack([Y, sup])
    s0 = n

    cap = 8 * n + 16
    tri = np.zeros((cap, 3), dtype=np.int64)
    cen = np.zeros((cap, 2))
    r2 = np.zeros(cap)
    alive = np.zeros(cap, dtype=bool)
    count = 0

    def add(a, b, c):
        nonlocal count, tri, cen, r2, alive, cap
        if _orient(P[a], P[b], P[c]) < 0:
            b, c = c, b
        if count == cap:
            cap *= 2
            tri = np.resize(tri, (cap, 3))
            cen = np.resize(cen, (cap, 2))
            r2 = np.resize(r2, cap)
            alive = np.concatenate([alive, np.zeros(cap - len(alive), dtype=bool)])
        x, y, rr = _circumcircle(P, a, b, c)
        tri[count] = (a, b, c)
        cen[count] = (x, y)
        r2[count] = rr
        alive[count] = True
        count += 1

    add(s0, s0 + 1, s0 + 2)
    for i in range(n):
        p = P[i]
        live = np.flatnonzero(alive[:count])
        d2 = ((cen[live] - p) ** 2).sum(axis=1)
        bad = live[d2 < r2[live]]
        edge_count = {}
        for t in bad:
            a, b, c = tri[t]
            for e in ((a, b), (b, c), (c, a)):
                key = (min(e), max(e))
                edge_count[key] = edge_count.get(key, 0) + 1
        boundary = []
        for t in bad:
            a, b, c = tri[t]
            for e in ((a, b), (b, c), (c, a)):
                if edge_count[(min(e), max(e))] == 1:
                    boundary.append(e)
        alive[bad] = False
        for a, b in boundary:
            add(a, b, i)

    live = np.flatnonzero(alive[:count])
    out = [tuple(int(v) for v in tri[t]) for t in live if max(tri[t]) < n]
    lo = X.min(axis=0)
    span = float((X.max(axis=0) - lo).max()) or 1.0
    return _fill_hull((X - lo) / span, out)


def _fill_hull(Y, tris):
    """Add sliver triangles the finite super-triangle may have cut off, so the
    union of triangles covers the convex hull.

    Orientation is judged on the unperturbed coordinates so that exactly
    collinear hull runs do not gain perturbation-induced slivers.
    """
    while True:
        count = {}
        for a, b, c in tris:
            for e in ((a, b), (b, c), (c, a)):
                key = (min(e), max(e))
                count[key] = count.get(key, 0) + 1
        nxt = {}
        for a, b, c in tris:
            for u, v in ((a, b), (b, c), (c, a)):
                if count[(min(u, v), max(u, v))] == 1:
                    nxt[u] = v
        added = False
        for v, w in list(nxt.items()):
            u = next((k for k, val in nxt.items() if val == v), None)
            if u is None:
                continue
            if _orient(Y[u], Y[v], Y[w]) < -1e-12:
                tris.append((u, w, v))
                added = True
                break
        if not added:
            return tris
