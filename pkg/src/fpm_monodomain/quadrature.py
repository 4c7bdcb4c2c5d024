"""Degree-2 exact quadrature rules on segments, triangles, tetrahedra and cells.

The trial functions are affine per cell, so every integrand appearing in the
operator assembly is at most quadratic (products of two affine shape rows).
Degree-2 rules therefore integrate all cell and facet matrices exactly:

* segments: 2-point Gauss-Legendre,
* triangles: edge-midpoint 3-point rule,
* tetrahedra: 4-point symmetric rule,
* axis-aligned boxes: tensor-product 2-point Gauss.

Polygonal / polyhedral cells are integrated by a centroid fan into triangles
or tetrahedra.
"""

from __future__ import annotations

import numpy as np

_GAUSS2 = 1.0 / np.sqrt(3.0)  # abscissa of the 2-point Gauss rule on [-1, 1]

# barycentric coordinates of the degree-2 tetrahedron rule
_TET_A = 0.5854101966249685
_TET_B = 0.1381966011250105


def segment_rule(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2-point Gauss rule on the segment [a, b]; weights sum to its length."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    mid = 0.5 * (a + b)
    half = 0.5 * (b - a)
    pts = np.vstack([mid - _GAUSS2 * half, mid + _GAUSS2 * half])
    length = np.linalg.norm(b - a)
    wts = np.full(2, 0.5 * length)
    return pts, wts


def triangle_rule(v0, v1, v2) -> tuple[np.ndarray, np.ndarray]:
    """Edge-midpoint rule on a triangle (2D or embedded in 3D), exact to degree 2."""
    v0 = np.asarray(v0, dtype=float)
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    pts = 0.5 * np.vstack([v0 + v1, v1 + v2, v2 + v0])
    area = _simplex_measure(np.vstack([v0, v1, v2]))
    wts = np.full(3, area / 3.0)
    return pts, wts


def tetrahedron_rule(v0, v1, v2, v3) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric 4-point rule on a tetrahedron, exact to degree 2."""
    verts = np.asarray([v0, v1, v2, v3], dtype=float)
    bary = np.full((4, 4), _TET_B)
    np.fill_diagonal(bary, _TET_A)
    pts = bary @ verts
    vol = abs(np.linalg.det(verts[1:] - verts[0])) / 6.0
    wts = np.full(4, vol / 4.0)
    return pts, wts


def box_rule(lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Tensor-product 2-point Gauss rule on an axis-aligned box (any dim)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    dim = lo.size
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    axes = [mid[k] + _GAUSS2 * half[k] * np.array([-1.0, 1.0]) for k in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([g.ravel() for g in grids])
    vol = float(np.prod(hi - lo))
    wts = np.full(pts.shape[0], vol / pts.shape[0])
    return pts, wts


def polygon_rule(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid-fan rule on a simple polygon given by its vertex loop (2D)."""
    verts = np.asarray(vertices, dtype=float)
    centroid = polygon_centroid(verts)
    pts, wts = [], []
    n = len(verts)
    for k in range(n):
        p, w = triangle_rule(centroid, verts[k], verts[(k + 1) % n])
        pts.append(p)
        wts.append(w)
    return np.vstack(pts), np.concatenate(wts)


def planar_polygon_rule(vertices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Centroid-fan rule on a planar polygon embedded in 3D (a facet)."""
    verts = np.asarray(vertices, dtype=float)
    centroid = verts.mean(axis=0)
    pts, wts = [], []
    n = len(verts)
    for k in range(n):
        p, w = triangle_rule(centroid, verts[k], verts[(k + 1) % n])
        pts.append(p)
        wts.append(w)
    return np.vstack(pts), np.concatenate(wts)


def polygon_area(vertices: np.ndarray) -> float:
    """Shoelace area of a simple 2D polygon (positive for CCW loops)."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

def polygon_centroid(vertices: np.ndarray) -> np.ndarray:
    """Area centroid of a simple 2D polygon."""
    v = np.asarray(vertices, dtype=float)
    x, y = v[:, 0], v[:, 1]
    cross = x * np.roll(y, -1) - np.roll(x, -1) * y
    area = 0.5 * np.sum(cross)
    if abs(area) < 1e-300:
        return v.mean(axis=0)
    cx = np.sum((x + np.roll(x, -1)) * cross) / (6.0 * area)
    cy = np.sum((y + np.roll(y, -1)) * cross) / (6.0 * area)
    return np.array([cx, cy])


def _simplex_measure(verts: np.ndarray) -> float:
    """Unsigned measure of the simplex spanned by ``verts`` (triangle in 2D/3D)."""
    e = verts[1:] - verts[0]
    if verts.shape[1] == 2:
        return 0.5 * abs(e[0, 0] * e[1, 1] - e[0, 1] * e[1, 0])
    return 0.5 * float(np.linalg.norm(np.cross(e[0], e[1])))
