"""Boundary loops, plane fits, planar hulls, camera depth and component filtering."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..errors import EmptyResultError, GeometryError, HullDegenerateError
from .obj import TriMesh

DEFAULT_PLANARITY_TOL = 0.02


def _unit(v: Any) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(arr)
    if norm == 0:
        raise GeometryError("zero-length direction")
    return arr / norm


def plane_basis(normal: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal in-plane axes ``(u, v)`` with ``u x v = normal``."""
    n = _unit(normal)
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    u = _unit(np.cross(helper, n))
    return u, np.cross(n, u)


def planar_coordinates(points: np.ndarray, normal: np.ndarray, origin: np.ndarray) -> np.ndarray:
    """Project 3D points to ``(u, v)`` coordinates of the plane through ``origin``."""
    u, v = plane_basis(normal)
    rel = np.asarray(points, dtype=np.float64) - origin
    return np.column_stack([rel @ u, rel @ v])


def fit_plane(points: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Least-squares plane ``n . x = offset``; returns ``(n, offset, rms distance)``."""
    pts = np.asarray(points, dtype=np.float64)
    centroid = pts.mean(axis=0)
    _, _, vh = np.linalg.svd(pts - centroid)
    normal = vh[-1]
    distances = (pts - centroid) @ normal
    return normal, float(normal @ centroid), float(np.sqrt(np.mean(distances**2)))


def newell_normal(points: np.ndarray) -> np.ndarray:
    """Area vector of a closed polygon (length is twice its area)."""
    pts = np.asarray(points, dtype=np.float64)
    return np.cross(pts, np.roll(pts, -1, axis=0)).sum(axis=0)


# =============================================================================
# Convex hull
# =============================================================================


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return float((a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]))


def convex_hull_planar(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull of 2D points; indices in counter-clockwise order.

    Points on hull edges are not hull vertices.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise HullDegenerateError("need at least three 2D points")
    order = np.lexsort((pts[:, 1], pts[:, 0]))

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and _cross(pts[lower[-2]], pts[lower[-1]], pts[i]) <= 0:
            lower.pop()
        lower.append(int(i))
    upper: list[int] = []
    for i in order[::-1]:
        while len(upper) >= 2 and _cross(pts[upper[-2]], pts[upper[-1]], pts[i]) <= 0:
            upper.pop()
        upper.append(int(i))

    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise HullDegenerateError("points are collinear")
    return np.asarray(hull, dtype=np.int64)


def point_in_convex_polygon(point: np.ndarray, polygon: np.ndarray, tol: float = 1e-9) -> bool:
    """Whether a 2D point lies inside or on a counter-clockwise convex polygon."""
    n = len(polygon)
    return all(_cross(polygon[i], polygon[(i + 1) % n], point) >= -tol for i in range(n))


# =============================================================================
# Discontinuities
# =============================================================================


@dataclass(frozen=True)
class PlanarDiscontinuity:
    """A closed boundary loop that fits a plane ``normal . x = offset``.

    ``normal`` points to the same side as the faces bordering the loop. ``is_hole`` is
    true when the loop runs clockwise around that normal, i.e. it encloses missing
    surface rather than the mesh's outer rim.
    """

    boundary_loop: tuple[int, ...]
    normal: np.ndarray = field(compare=False)
    offset: float
    planarity_rms: float
    area: float
    is_hole: bool

    def points(self, mesh: TriMesh) -> np.ndarray:
        """Loop vertex positions."""
        return mesh.vertices[list(self.boundary_loop)]

    def centroid(self, mesh: TriMesh) -> np.ndarray:
        """Mean loop vertex."""
        return self.points(mesh).mean(axis=0)


def boundary_edges(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Directed edges used by exactly one face, and the face each belongs to."""
    faces = mesh.faces
    if not len(faces):
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    owners = np.tile(np.arange(len(faces)), 3)
    _, inverse, counts = np.unique(
        np.sort(edges, axis=1), axis=0, return_inverse=True, return_counts=True
    )
    single = counts[inverse.reshape(-1)] == 1
    return edges[single], owners[single]


def boundary_loops(mesh: TriMesh) -> list[tuple[list[int], list[int]]]:
    """Chain boundary edges into closed loops; each loop comes with its bordering faces.

    Loops start at their smallest vertex index. Open chains are discarded.
    """
    edges, owners = boundary_edges(mesh)
    successors: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for (a, b), face in zip(edges.tolist(), owners.tolist()):
        successors[a].append((b, face))

    loops = []
    while successors:
        start = min(successors)
        loop, faces = [start], []
        current = start
        closed = False
        while current in successors:
            nxt, face = successors[current].pop(0)
            if not successors[current]:
                del successors[current]
            faces.append(face)
            if nxt == start:
                closed = True
                break
            loop.append(nxt)
            current = nxt
        if closed and len(loop) >= 3:
            loops.append((loop, faces))
    return loops


def detect_discontinuities(
    mesh: TriMesh, planarity_tol: float = DEFAULT_PLANARITY_TOL
) -> list[PlanarDiscontinuity]:
    """Planar boundary loops of ``mesh``, largest area first (empty when watertight)."""
    normals = mesh.face_normals() * mesh.face_areas()[:, None]
    found = []
    for loop, faces in boundary_loops(mesh):
        pts = mesh.vertices[loop]
        normal, offset, rms = fit_plane(pts)
        if rms > planarity_tol:
            continue
        side = normals[faces].sum(axis=0)
        if normal @ side < 0:
            normal, offset = -normal, -offset
        winding = newell_normal(pts)
        found.append(
            PlanarDiscontinuity(
                boundary_loop=tuple(loop),
                normal=normal,
                offset=offset,
                planarity_rms=rms,
                area=float(0.5 * abs(winding @ normal)),
                is_hole=bool(winding @ side < 0),
            )
        )
    found.sort(key=lambda d: (-d.area, d.boundary_loop))
    return found


# =============================================================================
# Camera
# =============================================================================


@dataclass(frozen=True)
class CameraPose:
    """Pinhole viewpoint: position, viewing direction and an up hint."""

    position: tuple[float, float, float]
    forward: tuple[float, float, float] = (1.0, 0.0, 0.0)
    up: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        """Check that forward and up span a frame."""
        f = _unit(self.forward)
        if np.linalg.norm(np.cross(f, _unit(self.up))) < 1e-9:
            raise GeometryError("camera up is parallel to forward")

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal ``(forward, right, up)``."""
        f = _unit(self.forward)
        right = _unit(np.cross(f, _unit(self.up)))
        return f, right, np.cross(right, f)

    def depth(self, points: np.ndarray) -> np.ndarray:
        """Distance of each point along the viewing direction."""
        return (np.asarray(points, dtype=np.float64) - self.position) @ self.axes[0]

    def project(self, points: np.ndarray) -> np.ndarray:
        """Normalized image coordinates ``(right/depth, up/depth)``."""
        f, right, up = self.axes
        rel = np.asarray(points, dtype=np.float64) - self.position
        z = rel @ f
        if np.any(z <= 0):
            raise GeometryError("point behind the camera")
        return np.column_stack([(rel @ right) / z, (rel @ up) / z])

    def move_to_depth(self, points: np.ndarray, depth: float) -> np.ndarray:
        """Slide points along their view rays until their depth equals ``depth``."""
        rel = np.asarray(points, dtype=np.float64) - self.position
        z = rel @ self.axes[0]
        if np.any(z <= 0):
            raise GeometryError("point behind the camera")
        return self.position + rel * (depth / z)[:, None]

    def to_record(self) -> dict[str, list[float]]:
        """JSON-friendly form."""
        return {"position": list(self.position), "forward": list(self.forward), "up": list(self.up)}

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> CameraPose:
        """Inverse of :meth:`to_record`."""
        return cls(
            tuple(record["position"]),  # type: ignore[arg-type]
            tuple(record.get("forward", (1.0, 0.0, 0.0))),  # type: ignore[arg-type]
            tuple(record.get("up", (0.0, 0.0, 1.0))),  # type: ignore[arg-type]
        )


def depth_filter(mesh: TriMesh, depth: float, band: float, view: CameraPose) -> TriMesh:
    """Faces whose centroid view-depth lies within ``band`` of ``depth``."""
    if not band > 0:
        raise ValueError("depth band must be positive")
    keep = np.abs(view.depth(mesh.face_centroids()) - depth) <= band
    if not keep.any():
        raise EmptyResultError(f"no faces within {band} m of depth {depth} m")
    return mesh.select_faces(keep)


def bounding_box(points: np.ndarray) -> tuple[float, float, float, float]:
    """Axis-aligned 2D box ``(xmin, ymin, xmax, ymax)``."""
    lo, hi = points.min(axis=0), points.max(axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


def box_iou(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    """Intersection over union of two 2D boxes."""
    w = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    h = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = w * h
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


# =============================================================================
# Components
# =============================================================================


def face_components(mesh: TriMesh) -> np.ndarray:
    """Connected-component label per face (faces sharing a vertex are connected)."""
    faces = mesh.faces
    if not len(faces):
        return np.zeros(0, dtype=np.int64)
    rows = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2]])
    cols = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0]])
    n = mesh.n_vertices
    graph = coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels[faces[:, 0]]


def remove_loose_components(
    mesh: TriMesh, min_faces: int, keep_tags: tuple[str, ...] = ()
) -> TriMesh:
    """Drop components with fewer than ``min_faces`` faces; tagged faces in ``keep_tags`` stay."""
    if min_faces < 0:
        raise ValueError("min_faces must be non-negative")
    if min_faces == 0 or not mesh.n_faces:
        return mesh
    labels = face_components(mesh)
    sizes = np.bincount(labels)
    keep = sizes[labels] >= min_faces
    if keep_tags:
        keep |= np.array([tag in keep_tags for tag in mesh.face_material])
    if keep.all():
        return mesh
    return mesh.select_faces(keep)
