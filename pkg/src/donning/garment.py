"""Triangle-mesh garment representation.

Holds the sleeve/gown mesh with its feature loops (closed vertex loops marking
openings such as a sleeve end), per-triangle rest areas for deformation
measurement, a normalized geodesic distance field to the active feature, and
the plane/polygon geometry used by the containment test.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import (
    ConfigError,
    DegenerateGeometryError,
    TopologyError,
    UnreachableVertexError,
)

_PLANE_RANK_TOL = 1e-12


def triangle_areas(positions, triangles):
    """Areas of every triangle for the given vertex positions, shape (T,)."""
    a = positions[triangles[:, 0]]
    b = positions[triangles[:, 1]]
    c = positions[triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def points_in_polygon(points, polygon):
    """Winding-number containment test for 2D points against a closed polygon.

    `points` is (M, 2), `polygon` is (N, 2) with an implicit closing edge from
    the last vertex back to the first.  Returns a boolean (M,) mask.  Non-zero
    winding counts as inside, so non-convex loops are handled.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    v0 = polygon
    v1 = np.roll(polygon, -1, axis=0)
    x0, y0 = v0[:, 0][None, :], v0[:, 1][None, :]
    x1, y1 = v1[:, 0][None, :], v1[:, 1][None, :]
    # signed area of (edge, point) triangle: >0 when point is left of the edge
    is_left = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)
    upward = (y0 <= py) & (y1 > py) & (is_left > 0)
    downward = (y0 > py) & (y1 <= py) & (is_left < 0)
    winding = upward.sum(axis=1) - downward.sum(axis=1)
    return winding != 0


def _segments_properly_intersect(p1, p2, q1, q2):
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0


def polygon_self_intersects(polygon):
    """True when any two non-adjacent edges of the closed polygon cross."""
    n = len(polygon)
    edges = [(polygon[i], polygon[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # adjacent through the closing edge
            if _segments_properly_intersect(*edges[i], *edges[j]):
                return True
    return False


@dataclass
class FeatureLoop:
    """Closed loop of mesh vertices approximating a garment opening.

    After :func:`fit_feature_plane` the loop carries its best-fit plane:
    ``plane_point`` (centroid), ``plane_normal`` (unit, oriented from the loop
    toward the garment centroid so it is the insertion direction), an
    orthonormal in-plane ``basis`` (2, 3), and the loop vertices projected to
    plane coordinates in ``polygon2d``.
    """

    vertex_indices: np.ndarray
    plane_point: np.ndarray | None = None
    plane_normal: np.ndarray | None = None
    basis: np.ndarray | None = None
    polygon2d: np.ndarray | None = None

    def __post_init__(self):
        self.vertex_indices = np.asarray(self.vertex_indices, dtype=np.int32)

    @property
    def fitted(self):
        return self.plane_normal is not None

    def project(self, points):
        """World points (M, 3) to plane coordinates (M, 2) of the fitted plane."""
        if not self.fitted:
            raise DegenerateGeometryError("feature plane not fitted")
        return (np.atleast_2d(points) - self.plane_point) @ self.basis.T


def fit_feature_plane(mesh, loop, positions=None):
    """Fit the feature-loop plane and project the loop to a 2D polygon.

    Least-squares plane through the loop's current vertex positions: the plane
    point is their mean and the normal is the smallest-eigenvector of their
    covariance.  The normal sign is chosen to point from the loop toward the
    whole-garment centroid, which for a sleeve is the insertion direction.
    Returns a new fitted ``FeatureLoop``; ``positions`` defaults to the rest
    vertices and may be the current cloth positions.
    """
    if positions is None:
        positions = mesh.vertices
    pts = positions[loop.vertex_indices]
    if len(pts) < 3:
        raise DegenerateGeometryError("feature loop needs at least 3 vertices")
    center = pts.mean(axis=0)
    centered = pts - center
    cov = centered.T @ centered
    evals, evecs = np.linalg.eigh(cov)
    scale = max(evals[2], 1e-30)
    if evals[1] / scale < _PLANE_RANK_TOL:
        raise DegenerateGeometryError("feature loop vertices are collinear or coincident")
    normal = evecs[:, 0]
    e1 = evecs[:, 2]
    garment_center = positions.mean(axis=0)
    if np.dot(normal, garment_center - center) < 0.0:
        normal = -normal
    normal = normal / np.linalg.norm(normal)
    e2 = np.cross(normal, e1)
    e2 /= np.linalg.norm(e2)
    e1 = np.cross(e2, normal)  # re-orthogonalize
    basis = np.vstack([e1, e2])
    polygon2d = centered @ basis.T
    return FeatureLoop(
        vertex_indices=loop.vertex_indices,
        plane_point=center,
        plane_normal=normal,
        basis=basis,
        polygon2d=polygon2d,
    )


class GarmentMesh:
    """Immutable triangle mesh with feature loops and a geodesic field.

    Vertex positions stored here are the rest pose; the cloth solver keeps its
    own deformed copy.  `geodesic` is filled by :func:`build_geodesic_field`
    and holds the normalized intrinsic distance of every vertex to the active
    feature loop (0 on the loop, 1 at the farthest vertex).
    """

    def __init__(self, vertices, triangles, feature_loops, active=0, validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.triangles = np.ascontiguousarray(triangles, dtype=np.int32)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ConfigError("vertices must be (V, 3)")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ConfigError("triangles must be (T, 3)")
        nv = len(self.vertices)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= nv):
            raise TopologyError("triangle index out of range")
        self.rest_areas = triangle_areas(self.vertices, self.triangles)
        if np.any(self.rest_areas <= 0.0):
            bad = np.flatnonzero(self.rest_areas <= 0.0)
            raise DegenerateGeometryError(f"zero-area rest triangles: {bad.tolist()}")
        self.edges, self.edge_rest_lengths = self._build_edges()
        self._edge_set = {(int(i), int(j)) for i, j in self.edges}
        self.bend_pairs, self.bend_rest_lengths = self._build_bend_pairs()
        self.vertex_triangles = self._build_incidence()
        self.features = [self._as_loop(lp) for lp in feature_loops]
        self.active = int(active)
        if not 0 <= self.active < len(self.features):
            raise ConfigError(f"active feature index {active} out of range")
        self.geodesic = None
        if validate:
            self._validate_orientation()
            for loop in self.features:
                self._validate_loop(loop)
        for arr in (self.vertices, self.triangles, self.rest_areas, self.edges,
                    self.edge_rest_lengths, self.bend_pairs, self.bend_rest_lengths):
            arr.flags.writeable = False

    # -- construction helpers -------------------------------------------------

    def _as_loop(self, lp):
        if isinstance(lp, FeatureLoop):
            return lp
        return FeatureLoop(vertex_indices=np.asarray(lp, dtype=np.int32))

    def _build_edges(self):
        tri = self.triangles
        pairs = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        pairs = np.sort(pairs, axis=1)
        edges = np.unique(pairs, axis=0).astype(np.int32)
        lengths = np.linalg.norm(self.vertices[edges[:, 0]] - self.vertices[edges[:, 1]], axis=1)
        return edges, lengths

    def _build_bend_pairs(self):
        """Opposite-vertex pairs across interior edges (distance-style bending)."""
        opposite = {}
        tri = self.triangles
        for t in range(len(tri)):
            i, j, k = (int(v) for v in tri[t])
            for a, b, c in ((i, j, k), (j, k, i), (k, i, j)):
                key = (a, b) if a < b else (b, a)
                opposite.setdefault(key, []).append(c)
        pairs = sorted(
            tuple(sorted(opp)) for opp in opposite.values() if len(opp) == 2
        )
        if not pairs:
            return np.zeros((0, 2), dtype=np.int32), np.zeros(0)
        pairs = np.asarray(pairs, dtype=np.int32)
        lengths = np.linalg.norm(self.vertices[pairs[:, 0]] - self.vertices[pairs[:, 1]], axis=1)
        return pairs, lengths

    def _build_incidence(self):
        lists = [[] for _ in range(len(self.vertices))]
        for t, (i, j, k) in enumerate(self.triangles):
            lists[i].append(t)
            lists[j].append(t)
            lists[k].append(t)
        return [np.asarray(l, dtype=np.int32) for l in lists]

    def _validate_orientation(self):
        tri = self.triangles
        directed = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
        uniq = np.unique(directed, axis=0)
        if len(uniq) != len(directed):
            raise TopologyError("inconsistent triangle orientation (repeated directed edge)")

    def _validate_loop(self, loop):
        idx = loop.vertex_indices
        if len(idx) < 3:
            raise ConfigError("feature loop needs at least 3 vertices")
        if len(set(idx.tolist())) != len(idx):
            raise ConfigError("feature loop repeats a vertex")
        if idx.min() < 0 or idx.max() >= len(self.vertices):
            raise ConfigError("feature loop index out of range")
        for a, b in zip(idx, np.roll(idx, -1)):
            key = (int(min(a, b)), int(max(a, b)))
            if key not in self._edge_set:
                raise TopologyError(f"feature loop vertices {a}->{b} are not a mesh edge")
        fitted = fit_feature_plane(self, loop)
        if polygon_self_intersects(fitted.polygon2d):
            raise DegenerateGeometryError("projected feature polygon self-intersects")

    # -- queries ---------------------------------------------------------------

    @property
    def active_feature(self):
        return self.features[self.active]

    def vertex_normals(self, positions=None):
        """Area-weighted outward vertex normals, shape (V, 3), unit rows."""
        if positions is None:
            positions = self.vertices
        tri = self.triangles
        face = np.cross(
            positions[tri[:, 1]] - positions[tri[:, 0]],
            positions[tri[:, 2]] - positions[tri[:, 0]],
        )  # 2*area-weighted face normals
        normals = np.zeros_like(positions)
        for c in range(3):
            np.add.at(normals, tri[:, c], face)
        norm = np.linalg.norm(normals, axis=1)
        safe = np.where(norm > 0.0, norm, 1.0)
        return normals / safe[:, None]


def triangle_deformation(mesh, cloth_positions):
    """Per-triangle area ratio current/rest, shape (T,); 1 at rest, >=0 always."""
    return triangle_areas(np.asarray(cloth_positions, dtype=float), mesh.triangles) / mesh.rest_areas


def build_geodesic_field(mesh, feature=None):
    """Compute the normalized geodesic field to a feature loop.

    Multi-source shortest path over the mesh edge graph (edge weight =
    Euclidean rest length, sources = loop vertices), normalized by the maximum
    distance.  Loop vertices get exactly 0 and the farthest vertex exactly 1.
    Stores the field on the mesh and returns the mesh.
    """
    if feature is None:
        feature = mesh.active_feature
    nv = len(mesh.vertices)
    e = mesh.edges
    w = mesh.edge_rest_lengths
    graph = csr_matrix(
        (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))),
        shape=(nv, nv),
    )
    dist = dijkstra(graph, directed=False, indices=feature.vertex_indices, min_only=True)
    unreachable = ~np.isfinite(dist)
    if unreachable.any():
        raise UnreachableVertexError(np.flatnonzero(unreachable))
    dmax = dist.max()
    field = dist / dmax if dmax > 0.0 else np.zeros(nv)
    field[feature.vertex_indices] = 0.0
    field.flags.writeable = False
    mesh.geodesic = field
    return mesh


def geodesic_gradient(mesh, vertex_id, positions=None):
    """Unit direction of steepest geodesic descent at a vertex.

    Averages the piecewise-linear field gradient over the incident triangles
    (area weighted), then negates and normalizes so the result points toward
    decreasing field values, i.e. toward the feature.  A zero-magnitude
    average falls back to the unit vector toward the feature centroid.
    Evaluate on deformed cloth by passing current ``positions``.
    """
    if mesh.geodesic is None:
        raise ConfigError("geodesic field not built")
    if positions is None:
        positions = mesh.vertices
    incident = mesh.vertex_triangles[int(vertex_id)]
    if len(incident) == 0:
        raise TopologyError(f"vertex {vertex_id} has no incident triangles")
    g = mesh.geodesic
    accum = np.zeros(3)
    for t in incident:
        i, j, k = mesh.triangles[t]
        x0, x1, x2 = positions[i], positions[j], positions[k]
        n = np.cross(x1 - x0, x2 - x0)
        area2 = np.linalg.norm(n)
        if area2 < 1e-14:
            continue
        nhat = n / area2
        # PL gradient: sum_i g_i (nhat x opposite_edge_i) / (2A)
        grad = (g[i] * np.cross(nhat, x2 - x1) + g[j] * np.cross(nhat, x0 - x2) + g[k] * np.cross(nhat, x1 - x0)) / area2
        accum += (0.5 * area2) * grad
    norm = np.linalg.norm(accum)
    if norm > 1e-12:
        return -accum / norm
    loop = mesh.active_feature
    centroid = positions[loop.vertex_indices].mean(axis=0)
    d = centroid - positions[int(vertex_id)]
    dn = np.linalg.norm(d)
    if dn > 1e-12:
        return d / dn
    # vertex sits on the centroid with a flat field; any fixed direction works
    return np.array([0.0, 0.0, 1.0])


# -- procedural sleeve --------------------------------------------------------


def sleeve_mesh(rings=20, segments=16, radius=0.07, length=0.45, panel=False, panel_rows=5, panel_drop=0.30):
    """Open cylindrical sleeve tube with the feature loop at the z=0 rim.

    The tube runs along +z from the feature rim to the far rim; triangle
    orientation gives outward-facing normals.  With ``panel=True`` a
    rectangular cloth panel hangs from the lower half of the far rim for
    gown-like occlusion; it shares rim vertices so the mesh stays
    edge-connected.
    """
    if rings < 2 or segments < 3:
        raise ConfigError("sleeve needs rings >= 2 and segments >= 3")
    theta = 2.0 * np.pi * np.arange(segments) / segments
    ring_xy = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    zs = np.linspace(0.0, length, rings)
    verts = np.concatenate([np.column_stack([ring_xy, np.full(segments, z)]) for z in zs])
    tris = []
    for r in range(rings - 1):
        for k in range(segments):
            a = r * segments + k
            b = r * segments + (k + 1) % segments
            c = (r + 1) * segments + k
            d = (r + 1) * segments + (k + 1) % segments
            tris.append((a, b, d))
            tris.append((a, d, c))
    loops = [list(range(segments)), list(range((rings - 1) * segments, rings * segments))]
    if panel:
        base = (rings - 1) * segments
        # columns along the lower half of the far rim, in rim order
        cols = [base + k for k in range(segments // 2, segments)] + [base]
        ncols = len(cols)
        col_pos = verts[cols]
        row_step = panel_drop / panel_rows
        panel_ids = [cols]
        vlist = [verts]
        next_id = len(verts)
        for j in range(1, panel_rows + 1):
            row = col_pos + np.array([0.0, -j * row_step, 0.0])
            vlist.append(row)
            panel_ids.append(list(range(next_id, next_id + ncols)))
            next_id += ncols
        verts = np.concatenate(vlist)
        for j in range(panel_rows):
            top, bot = panel_ids[j], panel_ids[j + 1]
            for k in range(ncols - 1):
                a, b = top[k], top[k + 1]
                c, d = bot[k], bot[k + 1]
                # rim row edges a->b already traversed by tube triangles as b->a
                tris.append((a, b, d))
                tris.append((a, d, c))
    return GarmentMesh(verts, np.asarray(tris, dtype=np.int32), loops, active=0)


# -- file formats --------------------------------------------------------------


def write_obj(path, vertices, triangles):
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in vertices]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def load_obj(path):
    verts, tris = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            ids = [int(p.split("/")[0]) - 1 for p in parts[1:]]
            if len(ids) != 3:
                raise ConfigError(f"{path}:{lineno}: only triangle faces are supported")
            tris.append(ids)
    return np.asarray(verts, dtype=float), np.asarray(tris, dtype=np.int32)


def feature_sidecar_path(obj_path):
    p = Path(obj_path)
    return p.with_name(p.stem + ".feature.json")


def save_garment(mesh, obj_path):
    """Write ``<name>.obj`` plus the ``<name>.feature.json`` loop sidecar."""
    write_obj(obj_path, mesh.vertices, mesh.triangles)
    sidecar = {
        "loops": [loop.vertex_indices.tolist() for loop in mesh.features],
        "active": mesh.active,
    }
    feature_sidecar_path(obj_path).write_text(json.dumps(sidecar, indent=1) + "\n")


def load_garment(obj_path):
    """Load an OBJ garment with its feature-loop sidecar and validate both."""
    obj_path = Path(obj_path)
    if not obj_path.exists():
        raise ConfigError(f"garment file not found: {obj_path}")
    sidecar = feature_sidecar_path(obj_path)
    if not sidecar.exists():
        raise ConfigError(f"feature sidecar not found: {sidecar}")
    verts, tris = load_obj(obj_path)
    try:
        meta = json.loads(sidecar.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{sidecar}:{e.lineno}:{e.colno}: {e.msg}") from e
    if "loops" not in meta or "active" not in meta:
        raise ConfigError(f"{sidecar}: expected keys 'loops' and 'active'")
    return GarmentMesh(verts, tris, meta["loops"], active=meta["active"])
