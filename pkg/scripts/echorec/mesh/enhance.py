"""Echo-guided mesh repair: fill reflective planar holes at the classified depth."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from ..errors import EchoRecError, EmptyResultError, PreconditionViolatedError
from .geometry import (
    DEFAULT_PLANARITY_TOL,
    CameraPose,
    PlanarDiscontinuity,
    bounding_box,
    box_iou,
    convex_hull_planar,
    depth_filter,
    detect_discontinuities,
    face_components,
    fit_plane,
    planar_coordinates,
    point_in_convex_polygon,
    remove_loose_components,
)
from .obj import DEFAULT_MATERIAL, TriMesh

logger = logging.getLogger(__name__)

REFLECTIVE_MATERIALS = ("glass", "mirror")
BACKGROUND_TAG = "background"
WELD_TOL = 1e-9


@dataclass(frozen=True)
class EchoClassification:
    """One frame's classifier output together with the camera pose it was taken from."""

    frame_id: str
    open_closed: str
    probability: float
    depth: float
    material: str
    pose: CameraPose

    def __post_init__(self) -> None:
        """Validate labels, probability and depth."""
        if self.open_closed not in ("open", "closed"):
            raise ValueError(f"open_closed must be 'open' or 'closed', got {self.open_closed!r}")
        if self.material not in ("glass", "mirror", "other"):
            raise ValueError(f"unknown material label {self.material!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if not self.depth > 0:
            raise ValueError("depth must be positive")

    @property
    def fillable(self) -> bool:
        """Closed reflective surfaces are the only ones the repair acts on."""
        return self.open_closed == "closed" and self.material in REFLECTIVE_MATERIALS

    def to_record(self) -> dict[str, Any]:
        """JSON-line form."""
        return {
            "frame_id": self.frame_id,
            "open_closed": self.open_closed,
            "probability": self.probability,
            "depth": self.depth,
            "material": self.material,
            "pose": self.pose.to_record(),
        }

    @classmethod
    def from_record(cls, record: dict[str, Any]) -> EchoClassification:
        """Inverse of :meth:`to_record`."""
        return cls(
            frame_id=str(record["frame_id"]),
            open_closed=str(record["open_closed"]),
            probability=float(record["probability"]),
            depth=float(record["depth"]),
            material=str(record["material"]),
            pose=CameraPose.from_record(record["pose"]),
        )


def load_classifications(path: Path) -> list[EchoClassification]:
    """Read line-delimited classification records, in file order."""
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(EchoClassification.from_record(json.loads(line)))
            except (ValueError, KeyError, TypeError) as e:
                raise ValueError(f"{path}:{line_no}: bad classification record: {e}") from e
    return records


def save_classifications(records: list[EchoClassification], path: Path) -> None:
    """Write one JSON object per line."""
    lines = [json.dumps(r.to_record(), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


@dataclass(frozen=True)
class EnhanceConfig:
    """Repair parameters (meters where dimensional)."""

    overlap_epsilon: float = 0.5
    depth_band: float = 0.25
    simplify_geometry: bool = True
    background_offset: float = 0.3
    min_component_faces: int = 0
    planarity_tol: float = DEFAULT_PLANARITY_TOL

    def __post_init__(self) -> None:
        """Validate ranges."""
        if not 0.0 <= self.overlap_epsilon <= 1.0:
            raise ValueError("overlap_epsilon must lie in [0, 1]")
        if not self.depth_band > 0:
            raise ValueError("depth_band must be positive")
        if self.background_offset < 0 or self.min_component_faces < 0:
            raise ValueError("background_offset and min_component_faces must be non-negative")

    @classmethod
    def from_section(cls, values: dict[str, Any]) -> EnhanceConfig:
        """Build from an ``[enhance]`` config-file section."""
        return cls(**{k: v for k, v in values.items() if k in cls.__dataclass_fields__})


class FilledSurface(NamedTuple):
    """Polygon inserted by :func:`inpaint`, counter-clockwise around ``normal``."""

    polygon: np.ndarray
    normal: np.ndarray
    material: str


class Inpainted(NamedTuple):
    """Repaired mesh and the surface that closed the hole."""

    mesh: TriMesh
    surface: FilledSurface


def inpaint(
    mesh: TriMesh, d: PlanarDiscontinuity, c: EchoClassification, cfg: EnhanceConfig
) -> Inpainted:
    """Close a hole loop with a planar patch at the classified depth.

    With geometry simplification the loop stays where it is: the convex hull of the loop,
    projected along its view rays to depth ``c.depth``, becomes one new polygon joined to
    the loop by a strip of untagged reveal faces. Hull corners already at that depth are
    reused instead of duplicated. Without simplification the loop vertices, and every other
    vertex lying in the hole's plane inside its hull, slide to ``c.depth`` and the loop is
    capped in place.
    """
    if not c.fillable:
        raise PreconditionViolatedError(
            f"frame {c.frame_id}: only closed glass or mirror surfaces are inpainted"
        )
    if cfg.simplify_geometry:
        filled = _fill_with_hull(mesh, d, c)
    else:
        filled = _fill_in_place(mesh, d, c, cfg)
    logger.info(
        "frame %s: filled %d-vertex hole at %.3f m as %s",
        c.frame_id,
        len(d.boundary_loop),
        c.depth,
        c.material,
    )
    return filled


def _facing_plane(points: np.ndarray, pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Plane normal turned toward the camera and the CCW hull of ``points`` around it."""
    normal, _, _ = fit_plane(points)
    if normal @ pose.axes[0] > 0:
        normal = -normal
    coords = planar_coordinates(points, normal, points.mean(axis=0))
    return normal, convex_hull_planar(coords)


def _fill_in_place(
    mesh: TriMesh, d: PlanarDiscontinuity, c: EchoClassification, cfg: EnhanceConfig
) -> Inpainted:
    vertices = mesh.vertices.copy()
    loop = list(d.boundary_loop)
    moving = sorted(set(loop) | set(_in_plane_vertices(mesh, d, cfg.planarity_tol)))
    vertices[moving] = c.pose.move_to_depth(vertices[moving], c.depth)

    loop_pts = vertices[loop]
    normal, hull = _facing_plane(loop_pts, c.pose)

    # The loop runs clockwise around the face normal; the patch reverses it so the
    # shared edges get opposite directions.
    reversed_loop = loop[::-1]
    if len(hull) == len(loop):
        new_vertices = np.zeros((0, 3))
        new_faces = [
            (reversed_loop[0], reversed_loop[i], reversed_loop[i + 1])
            for i in range(1, len(loop) - 1)
        ]
    else:
        center = loop_pts[hull].mean(axis=0)
        center_index = len(vertices)
        new_vertices = center[None, :]
        new_faces = [
            (center_index, reversed_loop[i], reversed_loop[(i + 1) % len(loop)])
            for i in range(len(loop))
        ]

    repaired = TriMesh(vertices, mesh.faces, mesh.uv, list(mesh.face_material))
    repaired = repaired.with_faces(new_vertices, np.asarray(new_faces), c.material)
    return Inpainted(repaired, FilledSurface(loop_pts[hull], normal, c.material))


def _fill_with_hull(mesh: TriMesh, d: PlanarDiscontinuity, c: EchoClassification) -> Inpainted:
    loop = list(d.boundary_loop)
    n = len(loop)
    original = mesh.vertices[loop]
    moved = c.pose.move_to_depth(original, c.depth)
    normal, hull = _facing_plane(moved, c.pose)
    on_hull = {int(i) for i in hull}

    start = min(on_hull)
    order = [(start + k) % n for k in range(n)]
    corner: dict[int, int] = {}
    new_vertices: list[np.ndarray] = []
    for pos in order:
        if pos not in on_hull:
            continue
        if np.linalg.norm(moved[pos] - original[pos]) <= WELD_TOL:
            corner[pos] = loop[pos]
        else:
            corner[pos] = mesh.n_vertices + len(new_vertices)
            new_vertices.append(moved[pos])

    # Each loop edge a->b is joined to the polygon corner at or before a (and to the
    # corner at b when b is itself a hull vertex). Faces collapsing onto welded corners
    # have zero area and are dropped by ``with_faces``.
    strip = []
    anchor = corner[start]
    for k, pos in enumerate(order):
        nxt = order[(k + 1) % n]
        if pos in on_hull:
            anchor = corner[pos]
        a, b = loop[pos], loop[nxt]
        strip.append((b, a, anchor))
        if nxt in on_hull:
            strip.append((b, anchor, corner[nxt]))

    rim = [corner[pos] for pos in order if pos in on_hull][::-1]
    cap = [(rim[0], rim[i], rim[i + 1]) for i in range(1, len(rim) - 1)]

    repaired = mesh.with_faces(np.asarray(new_vertices), np.asarray(strip), DEFAULT_MATERIAL)
    repaired = repaired.with_faces(np.zeros((0, 3)), np.asarray(cap), c.material)
    return Inpainted(repaired, FilledSurface(moved[hull], normal, c.material))


def _in_plane_vertices(mesh: TriMesh, d: PlanarDiscontinuity, tol: float) -> list[int]:
    loop_pts = d.points(mesh)
    origin = loop_pts.mean(axis=0)
    hull_pts = planar_coordinates(loop_pts, d.normal, origin)
    polygon = hull_pts[convex_hull_planar(hull_pts)]
    near = np.flatnonzero(np.abs(mesh.vertices @ d.normal - d.offset) <= tol)
    coords = planar_coordinates(mesh.vertices[near], d.normal, origin)
    return [int(i) for i, p in zip(near, coords) if point_in_convex_polygon(p, polygon)]


def place_background(mesh: TriMesh, surface: FilledSurface, cfg: EnhanceConfig) -> TriMesh:
    """Add a copy of the filled polygon ``background_offset`` behind it, facing the same way."""
    offset = surface.polygon - cfg.background_offset * surface.normal
    base = mesh.n_vertices
    faces = [(base, base + i, base + i + 1) for i in range(1, len(offset) - 1)]
    return mesh.with_faces(offset, np.asarray(faces), BACKGROUND_TAG)


def reflective_patches(mesh: TriMesh) -> list[np.ndarray]:
    """Vertex positions of each connected group of glass or mirror faces."""
    mask = np.array([tag in REFLECTIVE_MATERIALS for tag in mesh.face_material], dtype=bool)
    if not mask.any():
        return []
    patches = mesh.select_faces(mask)
    labels = face_components(patches)
    return [patches.vertices[np.unique(patches.faces[labels == k])] for k in np.unique(labels)]


@dataclass
class EnhanceResult:
    """Outcome of one repair pass."""

    mesh: TriMesh
    filled: list[str] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)


def _off_axis(pose: CameraPose, points: np.ndarray) -> float:
    ray = points.mean(axis=0) - np.asarray(pose.position)
    return float(1.0 - (ray @ pose.axes[0]) / np.linalg.norm(ray))


def _in_view(pose: CameraPose, points: np.ndarray) -> bool:
    return bool(np.all(pose.depth(points) > 0))


def _select_hole(
    mesh: TriMesh, c: EchoClassification, cfg: EnhanceConfig
) -> tuple[PlanarDiscontinuity | None, str]:
    """Hole nearest the view axis on the surface within the depth band, or a skip reason.

    A glass or mirror patch in the band that lies closer to the view axis than every open
    hole means this frame's surface was already filled. When no face lies in the band at all
    the whole mesh is searched.
    """
    pose = c.pose
    try:
        band_surface = depth_filter(mesh, c.depth, cfg.depth_band, pose)
    except EmptyResultError:
        logger.debug(
            "frame %s: no faces within %.2f m of %.2f m, searching the whole mesh",
            c.frame_id,
            cfg.depth_band,
            c.depth,
        )
        band_surface = mesh
    on_surface = {tuple(p) for p in band_surface.vertices.tolist()}

    holes = []
    for d in detect_discontinuities(mesh, cfg.planarity_tol):
        points = d.points(mesh)
        if not d.is_hole or not _in_view(pose, points):
            continue
        if all(tuple(p) in on_surface for p in points.tolist()):
            holes.append(d)

    filled_offsets = [
        _off_axis(pose, points)
        for points in reflective_patches(mesh)
        if _in_view(pose, points)
        and abs(float(pose.depth(points.mean(axis=0)[None, :])[0]) - c.depth) <= cfg.depth_band
    ]
    if not holes:
        return None, "already filled" if filled_offsets else "no discontinuity"
    hole = min(holes, key=lambda d: (_off_axis(pose, d.points(mesh)), -d.area, d.boundary_loop))
    if filled_offsets and min(filled_offsets) <= _off_axis(pose, hole.points(mesh)):
        return None, "already filled"
    return hole, ""


def _overlaps(box: tuple[float, ...], pose: CameraPose, points: np.ndarray, eps: float) -> bool:
    if not _in_view(pose, points):
        return False
    return box_iou(box, bounding_box(pose.project(points))) >= eps


def enhance(
    mesh: TriMesh, classifications: list[EchoClassification], cfg: EnhanceConfig
) -> EnhanceResult:
    """Run the repair loop over time-ordered classifications.

    Loose geometry is filtered first. Each closed glass or mirror classification fills
    the hole nearest its view axis among those on surfaces within ``depth_band`` of the
    classified depth. It is skipped when that hole's projection overlaps the previously
    filled surface, or any existing glass or mirror patch, by ``overlap_epsilon`` or more,
    so a second pass with the same classifications leaves the mesh unchanged. Failures are
    collected, not raised.
    """
    current = remove_loose_components(mesh, cfg.min_component_faces, keep_tags=(BACKGROUND_TAG,))
    result = EnhanceResult(current)
    previous: np.ndarray | None = None

    for c in classifications:
        if not c.fillable:
            result.skipped.append((c.frame_id, f"{c.open_closed}/{c.material}"))
            continue
        try:
            hole, reason = _select_hole(current, c, cfg)
            if hole is None:
                result.skipped.append((c.frame_id, reason))
                continue
            box = bounding_box(c.pose.project(hole.points(current)))
            eps = cfg.overlap_epsilon
            if previous is not None and _overlaps(box, c.pose, previous, eps):
                result.skipped.append((c.frame_id, "overlaps previous discontinuity"))
                continue
            if any(_overlaps(box, c.pose, p, eps) for p in reflective_patches(current)):
                result.skipped.append((c.frame_id, "overlaps filled surface"))
                continue
            filled = inpaint(current, hole, c, cfg)
            current = place_background(filled.mesh, filled.surface, cfg)
            previous = filled.surface.polygon
            result.filled.append(c.frame_id)
        except EchoRecError as e:
            logger.warning("frame %s: %s", c.frame_id, e)
            result.errors.append((c.frame_id, str(e)))

    result.mesh = current
    return result
