"""Triangle meshes and a Wavefront OBJ/MTL subset (v, vt, f, usemtl, mtllib, o)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ObjParseError

logger = logging.getLogger(__name__)

DEFAULT_MATERIAL = "default"
DEGENERATE_AREA = 1e-12

# Diffuse color and opacity per material tag written to the MTL companion.
MTL_APPEARANCE = {
    DEFAULT_MATERIAL: ((0.8, 0.8, 0.8), 1.0),
    "glass": ((0.6, 0.8, 0.9), 0.3),
    "mirror": ((0.9, 0.9, 0.9), 1.0),
    "background": ((0.5, 0.5, 0.5), 1.0),
}


@dataclass
class TriMesh:
    """Vertices in meters, triangle faces, optional per-vertex UVs, a material tag per face."""

    vertices: np.ndarray
    faces: np.ndarray
    uv: np.ndarray | None = None
    face_material: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        """Normalize dtypes and check index ranges."""
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not self.face_material:
            self.face_material = [DEFAULT_MATERIAL] * len(self.faces)
        if len(self.face_material) != len(self.faces):
            raise ValueError("face_material needs one tag per face")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if self.uv is not None:
            self.uv = np.asarray(self.uv, dtype=np.float64).reshape(-1, 2)
            if len(self.uv) != len(self.vertices):
                raise ValueError("uv needs one entry per vertex")

    @property
    def n_vertices(self) -> int:
        """Vertex count."""
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        """Face count."""
        return len(self.faces)

    def copy(self) -> TriMesh:
        """Deep copy."""
        return TriMesh(
            self.vertices.copy(),
            self.faces.copy(),
            None if self.uv is None else self.uv.copy(),
            list(self.face_material),
        )

    def face_areas(self) -> np.ndarray:
        """Area of every triangle."""
        if not len(self.faces):
            return np.zeros(0)
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals by right-hand winding (zero for degenerate faces)."""
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        normals = np.cross(b - a, c - a)
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        return np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 0)

    def face_centroids(self) -> np.ndarray:
        """Mean of each face's corners."""
        return self.vertices[self.faces].mean(axis=1)

    def select_faces(self, keep: np.ndarray) -> TriMesh:
        """Faces where ``keep`` is true, with unreferenced vertices dropped."""
        keep = np.asarray(keep, dtype=bool)
        faces = self.faces[keep]
        used = np.unique(faces)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(used.size)
        return TriMesh(
            self.vertices[used],
            remap[faces],
            None if self.uv is None else self.uv[used],
            [tag for tag, k in zip(self.face_material, keep) if k],
        )

    def drop_degenerate(self) -> TriMesh:
        """Remove zero-area faces (vertices are kept)."""
        keep = self.face_areas() > DEGENERATE_AREA
        if keep.all():
            return self
        return TriMesh(
            self.vertices,
            self.faces[keep],
            self.uv,
            [tag for tag, k in zip(self.face_material, keep) if k],
        )

    def with_faces(self, vertices: np.ndarray, faces: np.ndarray, material: str) -> TriMesh:
        """Append new vertices and faces indexing into the combined vertex array."""
        vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        uv = None
        if self.uv is not None:
            uv = np.vstack([self.uv, np.zeros((len(vertices), 2))])
        merged = TriMesh(
            np.vstack([self.vertices, vertices]),
            np.vstack([self.faces, np.asarray(faces, dtype=np.int64).reshape(-1, 3)]),
            uv,
            list(self.face_material) + [material] * len(faces),
        )
        return merged.drop_degenerate()


def _vertex_index(token: str, count: int, line_no: int) -> int:
    try:
        index = int(token)
    except ValueError as e:
        raise ObjParseError(f"bad index {token!r}", line_no) from e
    if index == 0:
        raise ObjParseError("OBJ indices start at 1", line_no)
    resolved = index - 1 if index > 0 else count + index
    if not 0 <= resolved < count:
        raise ObjParseError(f"index {index} out of range", line_no)
    return resolved


def load_obj(path: Path) -> TriMesh:
    """Parse an OBJ file; polygons are fan-triangulated and degenerate faces dropped."""
    vertices: list[list[float]] = []
    texcoords: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    face_uv: list[tuple[int, ...]] = []
    materials: list[str] = []
    current = DEFAULT_MATERIAL

    with open(path, encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            parts = raw.split("#", 1)[0].split()
            if not parts:
                continue
            keyword, args = parts[0], parts[1:]
            try:
                if keyword == "v":
                    vertices.append([float(a) for a in args[:3]])
                    if len(vertices[-1]) != 3:
                        raise ObjParseError("vertex needs three coordinates", line_no)
                elif keyword == "vt":
                    texcoords.append([float(a) for a in args[:2]] + [0.0] * (2 - len(args[:2])))
                elif keyword == "usemtl":
                    current = args[0] if args else DEFAULT_MATERIAL
                elif keyword == "f":
                    if len(args) < 3:
                        raise ObjParseError("face needs at least three vertices", line_no)
                    refs = [a.split("/") for a in args]
                    corners = [_vertex_index(r[0], len(vertices), line_no) for r in refs]
                    uvs = tuple(
                        _vertex_index(r[1], len(texcoords), line_no) if len(r) > 1 and r[1] else -1
                        for r in refs
                    )
                    if len(corners) > 3:
                        logger.warning(
                            "%s:%d: %d-gon fan-triangulated", path, line_no, len(corners)
                        )
                    for i in range(1, len(corners) - 1):
                        faces.append((corners[0], corners[i], corners[i + 1]))
                        face_uv.append((uvs[0], uvs[i], uvs[i + 1]))
                        materials.append(current)
            except ValueError as e:
                raise ObjParseError(str(e), line_no) from e

    uv = None
    if texcoords:
        uv = np.zeros((len(vertices), 2))
        tex = np.asarray(texcoords)
        for corners, uvs in zip(faces, face_uv):
            for vertex, t in zip(corners, uvs):
                if t >= 0:
                    uv[vertex] = tex[t]

    mesh = TriMesh(
        np.asarray(vertices).reshape(-1, 3), np.asarray(faces).reshape(-1, 3), uv, materials
    )
    cleaned = mesh.drop_degenerate()
    if cleaned.n_faces != mesh.n_faces:
        logger.info("%s: dropped %d degenerate faces", path, mesh.n_faces - cleaned.n_faces)
    return cleaned


def _fmt(value: float) -> str:
    return repr(float(value))


def save_obj(mesh: TriMesh, path: Path, write_mtl: bool = True) -> None:
    """Write an OBJ (and an MTL companion naming every tag in use)."""
    path = Path(path)
    tags = sorted(set(mesh.face_material))
    lines = [f"# echorec mesh: {mesh.n_vertices} vertices, {mesh.n_faces} faces"]
    if write_mtl:
        lines.append(f"mtllib {path.with_suffix('.mtl').name}")
    lines.append(f"o {path.stem}")
    lines += [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
    if mesh.uv is not None:
        lines += [f"vt {_fmt(u)} {_fmt(v)}" for u, v in mesh.uv]

    current = DEFAULT_MATERIAL
    for face, tag in zip(mesh.faces, mesh.face_material):
        if tag != current:
            lines.append(f"usemtl {tag}")
            current = tag
        if mesh.uv is not None:
            lines.append("f " + " ".join(f"{i + 1}/{i + 1}" for i in face))
        else:
            lines.append("f " + " ".join(str(i + 1) for i in face))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    if write_mtl:
        save_mtl(tags, path.with_suffix(".mtl"))


def save_mtl(tags: list[str], path: Path) -> None:
    """Write one ``newmtl`` entry per material tag."""
    lines = []
    for tag in tags:
        color, opacity = MTL_APPEARANCE.get(tag, MTL_APPEARANCE[DEFAULT_MATERIAL])
        lines += [
            f"newmtl {tag}",
            "Kd " + " ".join(f"{c:.3f}" for c in color),
            f"d {opacity:.3f}",
            "",
        ]
    Path(path).write_text("\n".join(lines), encoding="utf-8")
