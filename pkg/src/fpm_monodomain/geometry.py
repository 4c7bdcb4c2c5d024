"""Point clouds and conforming cell partitions.

The discretization substrate is a cloud of points, each owning one cell of a
conforming, non-overlapping partition of the domain.  Cells exchange fluxes
through shared internal facets; external facets lie on the domain boundary
and carry no flux (zero-flux boundary condition).

Two builders are provided:

* :func:`build_voronoi_partition_2d` clips the Voronoi cell of every point
  against the domain polygon by successive half-plane cuts.  Each cut is
  tagged with the opposing point, so facet adjacency falls out of the
  construction instead of being reverse-engineered from coordinates.
* :func:`build_voxel_partition` creates regular 2D/3D grids of box cells.

General 3D polyhedral partitions are not generated here; they are imported
from files (see :mod:`fpm_monodomain.fileio`).

All coordinates are in cm.  Partitions are immutable after construction
(arrays are write-protected) and safe for concurrent reads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .errors import (
    ConfigError,
    ContractError,
    DegenerateCellError,
    DegenerateGeometryError,
    GeometryError,
)

EXTERNAL = -1  # sentinel in facet_cells[:, 1] for boundary facets

_COINCIDENT_TOL = 1e-12  # cm, duplicate-point detection


@dataclass(frozen=True)
class PointCloud:
    """Scattered points carrying the degrees of freedom, coordinates in cm."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] not in (2, 3):
            raise GeometryError(f"positions must be (n, 2) or (n, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise GeometryError("point coordinates must be finite")
        _check_no_duplicates(pos)
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]


def _check_no_duplicates(pos: np.ndarray) -> None:
    if pos.shape[0] < 2:
        return
    from scipy.spatial import cKDTree

    dist, idx = cKDTree(pos).query(pos, k=2)
    nearest = dist[:, 1]
    if np.any(nearest < _COINCIDENT_TOL):
        i = int(np.argmin(nearest))
        raise DegenerateCellError(
            f"points {i} and {int(idx[i, 1])} coincide within {_COINCIDENT_TOL} cm"
        )


@dataclass(frozen=True)
class Facet:
    """View of one facet: shared internal boundary or external boundary piece."""

    index: int
    kind: str                    # "internal" | "external"
    cells: tuple[int, int]       # (E1, E2); E2 == EXTERNAL on the boundary
    measure: float               # length (2D) or area (3D)
    centroid: np.ndarray
    normal: np.ndarray           # unit, outward from E1
    quad_points: list[tuple[np.ndarray, float]]
    h_e: float                   # distance between owner points (NaN external)


@dataclass(frozen=True)
class Cell:
    """View of one cell of the partition."""

    owner: int
    measure: float
    centroid: np.ndarray
    facets: np.ndarray           # facet indices
    quad_points: list[tuple[np.ndarray, float]]


@dataclass(frozen=True)
class SupportDomain:
    """Center point plus the neighbor points used for its gradient fit."""

    center: int
    neighbors: np.ndarray
    ring_depth: int

    @property
    def m(self) -> int:
        return self.neighbors.size


@dataclass
class CellPartition:
    """Conforming cell partition with facet geometry and quadrature.

    Facet data is stored column-wise; quadrature points are kept in flat
    arrays indexed by `facet_qoffsets` / `cell_qoffsets` (CSR layout).
    """

    points: PointCloud
    domain_measure: float
    # geometry vertices (for export and visualization)
    vertices: np.ndarray                      # (M, dim)
    facet_vertices: list[np.ndarray]          # vertex ids per facet
    # cells
    cell_measure: np.ndarray                  # (n,)
    cell_centroid: np.ndarray                 # (n, dim)
    cell_facet_offsets: np.ndarray            # (n+1,)
    cell_facet_ids: np.ndarray
    cell_qpoints: np.ndarray                  # (sumQc, dim)
    cell_qweights: np.ndarray
    cell_qoffsets: np.ndarray                 # (n+1,)
    # facets
    facet_cells: np.ndarray                   # (F, 2), col 1 == EXTERNAL outside
    facet_measure: np.ndarray
    facet_centroid: np.ndarray
    facet_normal: np.ndarray                  # outward from facet_cells[:, 0]
    facet_h: np.ndarray                       # owner distance, NaN on boundary
    facet_qpoints: np.ndarray
    facet_qweights: np.ndarray
    facet_qoffsets: np.ndarray
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in (
            "vertices", "cell_measure", "cell_centroid", "cell_facet_offsets",
            "cell_facet_ids", "cell_qpoints", "cell_qweights", "cell_qoffsets",
            "facet_cells", "facet_measure", "facet_centroid", "facet_normal",
            "facet_h", "facet_qpoints", "facet_qweights", "facet_qoffsets",
        ):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            setattr(self, name, arr)

    @property
    def n_points(self) -> int:
        return self.points.n

    @property
    def dim(self) -> int:
        return self.points.dim

    @property
    def n_facets(self) -> int:
        return self.facet_cells.shape[0]

    def internal_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] != EXTERNAL)

    def external_facets(self) -> np.ndarray:
        return np.flatnonzero(self.facet_cells[:, 1] == EXTERNAL)

    def facet(self, i: int) -> Facet:
        e1, e2 = (int(c) for c in self.facet_cells[i])
        lo, hi = self.facet_qoffsets[i], self.facet_qoffsets[i + 1]
        qps = [
            (self.facet_qpoints[k], float(self.facet_qweights[k]))
            for k in range(lo, hi)
        ]
        return Facet(
            index=i,
            kind="external" if e2 == EXTERNAL else "internal",
            cells=(e1, e2),
            measure=float(self.facet_measure[i]),
            centroid=self.facet_centroid[i],
            normal=self.facet_normal[i],
            quad_points=qps,
            h_e=float(self.facet_h[i]),
        )

    def cell(self, i: int) -> Cell:
        lo, hi = self.cell_facet_offsets[i], self.cell_facet_offsets[i + 1]
        qlo, qhi = self.cell_qoffsets[i], self.cell_qoffsets[i + 1]
        qps = [
            (self.cell_qpoints[k], float(self.cell_qweights[k]))
            for k in range(qlo, qhi)
        ]
        return Cell(
            owner=i,
            measure=float(self.cell_measure[i]),
            centroid=self.cell_centroid[i],
            facets=self.cell_facet_ids[lo:hi],
            quad_points=qps,
        )

    def adjacency(self) -> list[np.ndarray]:
        """Facet-adjacent point neighbors for every point (first ring)."""
        if "adjacency" in self.notes:
            return self.notes["adjacency"]
        pairs = self.facet_cells[self.internal_facets()]
        nbrs: list[list[int]] = [[] for _ in range(self.n_points)]
        for a, b in pairs:
            nbrs[a].append(int(b))
            nbrs[b].append(int(a))
        out = [np.array(sorted(v), dtype=np.int64) for v in nbrs]
        self.notes["adjacency"] = out
        return out

    def validate(self, rel_tol: float = 1e-9) -> dict:
        """Check conformity invariants; raise GeometryError on violation."""
        metrics = {}
        closure = abs(self.cell_measure.sum() - self.domain_measure)
        metrics["measure_closure_rel"] = closure / max(abs(self.domain_measure), 1e-300)
        if metrics["measure_closure_rel"] > rel_tol:
            raise GeometryError(
                f"cell measures sum to {self.cell_measure.sum()!r}, expected "
                f"{self.domain_measure!r}"
            )
        norms = np.linalg.norm(self.facet_normal, axis=1)
        metrics["max_normal_defect"] = float(np.max(np.abs(norms - 1.0), initial=0.0))
        if metrics["max_normal_defect"] > 1e-12:
            raise GeometryError("facet normals are not unit vectors")
        internal = self.internal_facets()
        if internal.size:
            e1 = self.facet_cells[internal, 0]
            e2 = self.facet_cells[internal, 1]
            d = np.linalg.norm(
                self.points.positions[e2] - self.points.positions[e1], axis=1
            )
            metrics["max_h_defect"] = float(np.max(np.abs(self.facet_h[internal] - d)))
            if metrics["max_h_defect"] > 1e-10 * max(d.max(), 1.0):
                raise GeometryError("facet h_e does not equal the owner distance")
        # quadrature weights close on each facet
        wsum = np.add.reduceat(self.facet_qweights, self.facet_qoffsets[:-1])
        rel = np.abs(wsum - self.facet_measure) / np.maximum(self.facet_measure, 1e-300)
        metrics["max_facet_quad_defect_rel"] = float(rel.max(initial=0.0))
        if metrics["max_facet_quad_defect_rel"] > 1e-10:
            raise GeometryError("facet quadrature weights do not sum to the measure")
        # every internal facet appears in exactly the two incident cells
        counts = np.zeros(self.n_facets, dtype=np.int64)
        np.add.at(counts, self.cell_facet_ids, 1)
        expect = np.where(self.facet_cells[:, 1] == EXTERNAL, 1, 2)
        if not np.array_equal(counts, expect):
            raise GeometryError("facet/cell incidence lists are not conforming")
        return metrics


# ---------------------------------------------------------------------------
# 2D Voronoi partition by tagged half-plane clipping
# ---------------------------------------------------------------------------

def build_voronoi_partition_2d(
    points: PointCloud | np.ndarray, boundary: np.ndarray
) -> CellPartition:
    """Clip every point's Voronoi cell against a simple boundary polygon.

    Each half-plane cut is tagged with the index of the opposing point, so
    internal facets directly know both incident cells.  Normals point from
    the lower-indexed owner toward the higher-indexed one.

    Raises
    ------
    DegenerateCellError
        if two points coincide or a cell clips away entirely.
    GeometryError
        if a point lies outside the polygon or the polygon self-intersects.
    """
    if not isinstance(points, PointCloud):
        points = PointCloud(np.asarray(points, dtype=float))
    if points.dim != 2:
        raise ContractError("build_voronoi_partition_2d requires 2D points")
    poly = np.asarray(boundary, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise GeometryError("boundary must be a polygon with >= 3 vertices")
    if _polygon_self_intersects(poly):
        raise GeometryError("boundary polygon is self-intersecting")
    if quadrature.polygon_area(poly) < 0:
        poly = poly[::-1]  # normalize to counter-clockwise
    scale = float(np.max(poly.max(axis=0) - poly.min(axis=0)))
    eps = 1e-12 * scale
    pos = points.positions
    for i in range(points.n):
        if not _point_in_polygon(pos[i], poly, eps=1e-9 * scale):
            raise GeometryError(f"point {i} at {pos[i]} lies outside the boundary polygon")

    from scipy.spatial import cKDTree

    tree = cKDTree(pos)
    n = points.n
    cell_polys: list[np.ndarray] = []
    cell_tags: list[np.ndarray] = []
    for i in range(n):
        verts, tags = _clip_voronoi_cell(i, pos, poly, tree, eps)
        if len(verts) < 3 or abs(quadrature.polygon_area(verts)) < eps * scale:
            raise DegenerateCellError(f"Voronoi cell of point {i} is degenerate")
        cell_polys.append(verts)
        cell_tags.append(tags)
    return _partition_from_polygons(
        points, cell_polys, cell_tags,
        domain_measure=abs(quadrature.polygon_area(poly)),
        drop_tol=1e-9 * scale,
    )


def _clip_voronoi_cell(i, pos, poly, tree, eps):
    """Half-plane clipping of the boundary polygon down to cell i."""
    verts = [poly[k] for k in range(len(poly))]
    tags = [EXTERNAL] * len(poly)
    xi = pos[i]
    # candidates sorted by distance; a bisector at distance d can only cut the
    # cell while d/2 <= max vertex distance, which shrinks monotonically
    order = tree.query(xi, k=len(pos))[1]
    radius = max(float(np.linalg.norm(v - xi)) for v in verts)
    for j in order:
        j = int(j)
        if j == i:
            continue
        xj = pos[j]
        d = float(np.linalg.norm(xj - xi))
        if 0.5 * d > radius + eps:
            break
        u = (xj - xi) / d
        mid = 0.5 * (xi + xj)
        verts, tags = _clip_halfplane(verts, tags, mid, u, j, eps)
        if len(verts) < 3:
            return np.empty((0, 2)), np.empty(0, dtype=np.int64)
        radius = max(float(np.linalg.norm(v - xi)) for v in verts)
    verts, tags = _drop_short_edges(verts, tags, eps)
    return np.asarray(verts), np.asarray(tags, dtype=np.int64)


def _clip_halfplane(verts, tags, origin, normal, new_tag, eps):
    """Sutherland-Hodgman against {x : (x - origin) . normal <= 0}, keeping tags.

    ``tags[k]`` labels the edge from vertex k to vertex k+1.  Chords created
    by the cut get ``new_tag``.
    """
    out_v: list[np.ndarray] = []
    out_t: list[int] = []
    m = len(verts)
    dist = [float(np.dot(v - origin, normal)) for v in verts]
    for k in range(m):
        a, b = verts[k], verts[(k + 1) % m]
        da, db = dist[k], dist[(k + 1) % m]
        ta = tags[k]
        a_in = da <= eps
        b_in = db <= eps
        if a_in:
            out_v.append(a)
            if b_in:
                out_t.append(ta)
            else:
                t = da / (da - db)
                out_v.append(a + t * (b - a))
                out_t.append(ta)       # a -> crossing keeps the edge tag
                out_t.append(new_tag)  # crossing -> next entry runs on the cut line
        elif b_in:
            t = da / (da - db)
            out_v.append(a + t * (b - a))
            out_t.append(ta)           # crossing -> b continues the original edge
    return out_v, out_t


def _drop_short_edges(verts, tags, eps):
    """Remove zero-length edges left by cuts through existing vertices."""
    kept_v, kept_t = [], []
    m = len(verts)
    for k in range(m):
        nxt = (k + 1) % m
        if np.linalg.norm(verts[nxt] - verts[k]) > eps:
            kept_v.append(verts[k])
            kept_t.append(tags[k])
    # the vertex starting a dropped edge is removed; its incoming edge now
    # ends at the next kept vertex, which is what the loop above produces
    return kept_v, kept_t


def _partition_from_polygons(points, cell_polys, cell_tags, domain_measure, drop_tol):
    """Assemble a CellPartition from per-cell polygons with tagged edges."""
    n = points.n
    pos = points.positions
    cell_measure = np.empty(n)
    cell_centroid = np.empty((n, 2))
    for i, verts in enumerate(cell_polys):
        cell_measure[i] = abs(quadrature.polygon_area(verts))
        cell_centroid[i] = quadrature.polygon_centroid(verts)

    vert_index = _VertexPool(tol=drop_tol * 1e-3)
    facet_vertices: list[np.ndarray] = []
    facet_cells: list[tuple[int, int]] = []
    facet_rows: list[np.ndarray] = []      # (a, b) endpoint coordinates
    cell_facets: list[list[int]] = [[] for _ in range(n)]
    seen: dict[tuple[int, int], int] = {}
    for i, (verts, tags) in enumerate(zip(cell_polys, cell_tags)):
        m = len(verts)
        for k in range(m):
            a, b = verts[k], verts[(k + 1) % m]
            if np.linalg.norm(b - a) <= drop_tol:
                continue
            j = int(tags[k])
            if j == EXTERNAL:
                fid = len(facet_cells)
                facet_cells.append((i, EXTERNAL))
                facet_rows.append(np.vstack([a, b]))
                facet_vertices.append(
                    np.array([vert_index.add(a), vert_index.add(b)])
                )
                cell_facets[i].append(fid)
            else:
                key = (min(i, j), max(i, j))
                if key in seen:
                    cell_facets[i].append(seen[key])
                    continue
                fid = len(facet_cells)
                seen[key] = fid
                e1, e2 = key
                # store endpoints as seen from E1 so the stored normal is E1-outward
                if i == e1:
                    seg = np.vstack([a, b])
                else:
                    seg = np.vstack([b, a])
                facet_cells.append((e1, e2))
                facet_rows.append(seg)
                facet_vertices.append(
                    np.array([vert_index.add(seg[0]), vert_index.add(seg[1])])
                )
                cell_facets[i].append(fid)

    F = len(facet_cells)
    facet_cells_arr = np.array(facet_cells, dtype=np.int64).reshape(F, 2)
    facet_measure = np.empty(F)
    facet_centroid = np.empty((F, 2))
    facet_normal = np.empty((F, 2))
    facet_h = np.full(F, np.nan)
    qp_list, qw_list, qoff = [], [], [0]
    for f in range(F):
        a, b = facet_rows[f]
        e1, e2 = facet_cells_arr[f]
        facet_measure[f] = np.linalg.norm(b - a)
        facet_centroid[f] = 0.5 * (a + b)
        if e2 == EXTERNAL:
            t = (b - a) / facet_measure[f]
            facet_normal[f] = (t[1], -t[0])  # outward of a CCW cell polygon
        else:
            dvec = pos[e2] - pos[e1]
            facet_h[f] = np.linalg.norm(dvec)
            facet_normal[f] = dvec / facet_h[f]
        p, w = quadrature.segment_rule(a, b)
        qp_list.append(p)
        qw_list.append(w)
        qoff.append(qoff[-1] + len(w))

    cq_list, cw_list, coff = [], [], [0]
    for verts in cell_polys:
        p, w = quadrature.polygon_rule(verts)
        cq_list.append(p)
        cw_list.append(np.abs(w))
        coff.append(coff[-1] + len(w))

    offsets = np.zeros(n + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(v) for v in cell_facets])
    part = CellPartition(
        points=points,
        domain_measure=domain_measure,
        vertices=vert_index.array(),
        facet_vertices=facet_vertices,
        cell_measure=cell_measure,
        cell_centroid=cell_centroid,
        cell_facet_offsets=offsets,
        cell_facet_ids=np.concatenate(cell_facets) if n else np.empty(0, np.int64),
        cell_qpoints=np.vstack(cq_list),
        cell_qweights=np.concatenate(cw_list),
        cell_qoffsets=np.array(coff, dtype=np.int64),
        facet_cells=facet_cells_arr,
        facet_measure=facet_measure,
        facet_centroid=facet_centroid,
        facet_normal=facet_normal,
        facet_h=facet_h,
        facet_qpoints=np.vstack(qp_list),
        facet_qweights=np.concatenate(qw_list),
        facet_qoffsets=np.array(qoff, dtype=np.int64),
        notes={"cell_polygons": [v.copy() for v in cell_polys]},
    )
    return part


class _VertexPool:
    """Merge nearly identical vertices into one indexed array."""

    def __init__(self, tol: float):
        self.tol = max(tol, 1e-300)
        self._verts: list[np.ndarray] = []
        self._lookup: dict[tuple, int] = {}

    def add(self, v: np.ndarray) -> int:
        key = tuple(np.round(v / self.tol).astype(np.int64))
        hit = self._lookup.get(key)
        if hit is not None:
            return hit
        idx = len(self._verts)
        self._verts.append(np.asarray(v, dtype=float))
        self._lookup[key] = idx
        return idx

    def array(self) -> np.ndarray:
        if not self._verts:
            return np.empty((0, 2))
        return np.vstack(self._verts)


def _point_in_polygon(p, poly, eps) -> bool:
    """Crossing-number test; points within eps of an edge count as inside."""
    x, y = p
    inside = False
    m = len(poly)
    for k in range(m):
        ax, ay = poly[k]
        bx, by = poly[(k + 1) % m]
        # on-edge check
        ab = np.array([bx - ax, by - ay])
        ap = np.array([x - ax, y - ay])
        L2 = ab @ ab
        t = np.clip((ap @ ab) / L2, 0.0, 1.0) if L2 > 0 else 0.0
        if np.hypot(*(ap - t * ab)) <= eps:
            return True
        if (ay > y) != (by > y):
            xint = ax + (y - ay) * (bx - ax) / (by - ay)
            if x < xint:
                inside = not inside
    return inside


def _polygon_self_intersects(poly) -> bool:
    m = len(poly)
    segs = [(poly[k], poly[(k + 1) % m]) for k in range(m)]
    for a in range(m):
        for b in range(a + 1, m):
            if b == a + 1 or (a == 0 and b == m - 1):
                continue  # adjacent edges share a vertex
            if _segments_intersect(*segs[a], *segs[b]):
                return True
    return False


def _segments_intersect(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


# ---------------------------------------------------------------------------
# regular voxel partitions (2D and 3D)
# ---------------------------------------------------------------------------

def build_voxel_partition(
    counts, spacing, origin=None
) -> tuple[PointCloud, CellPartition]:
    """Regular grid of box cells with points at the voxel centers.

    ``counts`` is the number of voxels per axis (>= 2 each), ``spacing`` the
    voxel edge length per axis in cm.  Internal facets connect axis-adjacent
    voxels, with h_e equal to the spacing along that axis.
    """
    counts = np.asarray(counts, dtype=np.int64)
    dim = counts.size
    if dim not in (2, 3):
        raise ConfigError("counts must have 2 or 3 entries")
    if np.any(counts < 2):
        raise ConfigError(f"need at least 2 voxels per axis, got {counts.tolist()}")
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (dim,)).copy()
    if np.any(spacing <= 0) or not np.all(np.isfinite(spacing)):
        raise ConfigError(f"voxel spacing must be positive, got {spacing.tolist()}")
    origin = (
        np.zeros(dim) if origin is None
        else np.broadcast_to(np.asarray(origin, dtype=float), (dim,)).copy()
    )

    # points at voxel centers, C-order (last axis fastest)
    axes = [origin[a] + spacing[a] * (np.arange(counts[a]) + 0.5) for a in range(dim)]
    grids = np.meshgrid(*axes, indexing="ij")
    pos = np.column_stack([g.ravel() for g in grids])
    points = PointCloud(pos)
    n = points.n

    strides = np.ones(dim, dtype=np.int64)
    for a in range(dim - 2, -1, -1):
        strides[a] = strides[a + 1] * counts[a + 1]

    voxel_volume = float(np.prod(spacing))
    cell_measure = np.full(n, voxel_volume)
    cell_centroid = pos.copy()

    # grid corner vertices
    corner_axes = [origin[a] + spacing[a] * np.arange(counts[a] + 1) for a in range(dim)]
    cgrids = np.meshgrid(*corner_axes, indexing="ij")
    vertices = np.column_stack([g.ravel() for g in cgrids])
    vcounts = counts + 1
    vstrides = np.ones(dim, dtype=np.int64)
    for a in range(dim - 2, -1, -1):
        vstrides[a] = vstrides[a + 1] * vcounts[a + 1]

    idx_grid = np.indices(counts).reshape(dim, -1).T  # (n, dim) voxel indices

    facet_cells_parts = []
    facet_measure_parts = []
    facet_centroid_parts = []
    facet_normal_parts = []
    facet_h_parts = []
    facet_qp_parts = []
    facet_qw_parts = []
    facet_nq_parts = []
    facet_vertex_parts: list[np.ndarray] = []

    def face_vertex_ids(cells_idx, axis, side):
        """Corner vertex ids of the voxel faces normal to ``axis``."""
        base = cells_idx.copy()
        base[:, axis] += side  # 0 = low face, 1 = high face
        tang = [a for a in range(dim) if a != axis]
        if dim == 2:
            t = tang[0]
            v0 = base @ vstrides
            v1 = v0 + vstrides[t]
            return np.stack([v0, v1], axis=1)
        t1, t2 = tang
        v0 = base @ vstrides
        # loop order chosen so the polygon is a proper quad (not a bowtie)
        return np.stack(
            [v0, v0 + vstrides[t1], v0 + vstrides[t1] + vstrides[t2], v0 + vstrides[t2]],
            axis=1,
        )

    def face_quadrature(centers, axis):
        """Tensor 2-pt Gauss on rectangle faces centered at ``centers``."""
        tang = [a for a in range(dim) if a != axis]
        if dim == 2:
            t = tang[0]
            off = np.zeros(dim)
            off[t] = 0.5 * spacing[t] / np.sqrt(3.0)
            qp = np.stack([centers - off, centers + off], axis=1)
            area = spacing[t]
            qw = np.full((len(centers), 2), area / 2.0)
            return qp.reshape(-1, dim), qw.ravel(), 2
        t1, t2 = tang
        o1 = np.zeros(dim)
        o1[t1] = 0.5 * spacing[t1] / np.sqrt(3.0)
        o2 = np.zeros(dim)
        o2[t2] = 0.5 * spacing[t2] / np.sqrt(3.0)
        qp = np.stack(
            [centers - o1 - o2, centers + o1 - o2, centers - o1 + o2, centers + o1 + o2],
            axis=1,
        )
        area = spacing[t1] * spacing[t2]
        qw = np.full((len(centers), 4), area / 4.0)
        return qp.reshape(-1, dim), qw.ravel(), 4

    for axis in range(dim):
        area = voxel_volume / spacing[axis]
        # internal facets between (.., k, ..) and (.., k+1, ..)
        mask = idx_grid[:, axis] < counts[axis] - 1
        lo_cells = np.flatnonzero(mask)
        hi_cells = lo_cells + strides[axis]
        centers = 0.5 * (pos[lo_cells] + pos[hi_cells])
        normal = np.zeros(dim)
        normal[axis] = 1.0
        facet_cells_parts.append(np.stack([lo_cells, hi_cells], axis=1))
        facet_measure_parts.append(np.full(lo_cells.size, area))
        facet_centroid_parts.append(centers)
        facet_normal_parts.append(np.tile(normal, (lo_cells.size, 1)))
        facet_h_parts.append(np.full(lo_cells.size, spacing[axis]))
        qp, qw, nq = face_quadrature(centers, axis)
        facet_qp_parts.append(qp)
        facet_qw_parts.append(qw)
        facet_nq_parts.append(np.full(lo_cells.size, nq))
        facet_vertex_parts.append(face_vertex_ids(idx_grid[lo_cells], axis, 1))
        # external facets on both domain faces normal to this axis
        for side, sgn in ((0, -1.0), (counts[axis] - 1, +1.0)):
            cells_here = np.flatnonzero(idx_grid[:, axis] == side)
            centers = pos[cells_here].copy()
            centers[:, axis] += sgn * 0.5 * spacing[axis]
            normal = np.zeros(dim)
            normal[axis] = sgn
            facet_cells_parts.append(
                np.stack([cells_here, np.full(cells_here.size, EXTERNAL)], axis=1)
            )
            facet_measure_parts.append(np.full(cells_here.size, area))
            facet_centroid_parts.append(centers)
            facet_normal_parts.append(np.tile(normal, (cells_here.size, 1)))
            facet_h_parts.append(np.full(cells_here.size, np.nan))
            qp, qw, nq = face_quadrature(centers, axis)
            facet_qp_parts.append(qp)
            facet_qw_parts.append(qw)
            facet_nq_parts.append(np.full(cells_here.size, nq))
            facet_vertex_parts.append(
                face_vertex_ids(idx_grid[cells_here], axis, 0 if side == 0 else 1)
            )

    facet_cells = np.vstack(facet_cells_parts)
    F = facet_cells.shape[0]
    facet_nq = np.concatenate(facet_nq_parts)
    facet_qoffsets = np.zeros(F + 1, dtype=np.int64)
    facet_qoffsets[1:] = np.cumsum(facet_nq)
    facet_vertices = [row for part in facet_vertex_parts for row in part]

    # cell -> facet incidence
    owners = np.concatenate([facet_cells[:, 0], facet_cells[facet_cells[:, 1] >= 0, 1]])
    fids = np.concatenate(
        [np.arange(F), np.flatnonzero(facet_cells[:, 1] >= 0)]
    )
    order = np.argsort(owners, kind="stable")
    owners, fids = owners[order], fids[order]
    cell_facet_offsets = np.zeros(n + 1, dtype=np.int64)
    np.add.at(cell_facet_offsets, owners + 1, 1)
    cell_facet_offsets = np.cumsum(cell_facet_offsets)

    # cell quadrature: tensor 2-pt Gauss inside each voxel
    half = 0.5 * spacing / np.sqrt(3.0)
    signs = np.indices((2,) * dim).reshape(dim, -1).T * 2 - 1  # (+-1)^dim corners
    offsets = signs * half  # (2^dim, dim)
    cell_qp = (pos[:, None, :] + offsets[None, :, :]).reshape(-1, dim)
    nq_cell = offsets.shape[0]
    cell_qw = np.full(n * nq_cell, voxel_volume / nq_cell)
    cell_qoffsets = np.arange(n + 1, dtype=np.int64) * nq_cell

    partition = CellPartition(
        points=points,
        domain_measure=float(np.prod(counts * spacing)),
        vertices=vertices,
        facet_vertices=facet_vertices,
        cell_measure=cell_measure,
        cell_centroid=cell_centroid,
        cell_facet_offsets=cell_facet_offsets,
        cell_facet_ids=fids,
        cell_qpoints=cell_qp,
        cell_qweights=cell_qw,
        cell_qoffsets=cell_qoffsets,
        facet_cells=facet_cells,
        facet_measure=np.concatenate(facet_measure_parts),
        facet_centroid=np.vstack(facet_centroid_parts),
        facet_normal=np.vstack(facet_normal_parts),
        facet_h=np.concatenate(facet_h_parts),
        facet_qpoints=np.vstack(facet_qp_parts),
        facet_qweights=np.concatenate(facet_qw_parts),
        facet_qoffsets=facet_qoffsets,
        notes={"grid": {"counts": counts.tolist(), "spacing": spacing.tolist(),
                        "origin": origin.tolist()}},
    )
    return points, partition


# ---------------------------------------------------------------------------
# support domains
# ---------------------------------------------------------------------------

def support_at_depth(partition: CellPartition, center: int, depth: int) -> SupportDomain:
    """Neighbors reachable within ``depth`` facet-adjacency hops of ``center``."""
    adjacency = partition.adjacency()
    ring = {center}
    frontier = {center}
    for _ in range(depth):
        nxt = set()
        for p in frontier:
            nxt.update(int(q) for q in adjacency[p])
        frontier = nxt - ring
        ring |= nxt
    ring.discard(center)
    return SupportDomain(
        center=center,
        neighbors=np.array(sorted(ring), dtype=np.int64),
        ring_depth=depth,
    )


def support_rank(partition: CellPartition, support: SupportDomain) -> int:
    """Rank of A^T A for the offset matrix A of this support."""
    pos = partition.points.positions
    A = pos[support.neighbors] - pos[support.center]
    if A.shape[0] == 0:
        return 0
    return int(np.linalg.matrix_rank(A))


def first_ring_support(
    partition: CellPartition, center: int, max_depth: int = 3
) -> SupportDomain:
    """First ring of facet-adjacent points, widened until A^T A has full rank.

    Raises DegenerateGeometryError naming the point if the support is still
    rank-deficient at ``max_depth`` rings.
    """
    dim = partition.dim
    for depth in range(1, max_depth + 1):
        support = support_at_depth(partition, center, depth)
        if support.m >= dim and support_rank(partition, support) == dim:
            return support
    raise DegenerateGeometryError(
        f"support of point {center} is rank-deficient even at ring depth "
        f"{max_depth} ({support.m} neighbors)"
    )
