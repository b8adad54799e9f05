"""Parametric shoebox scenes: materials, panels, rooms and poses.

All types are immutable. Rooms are built from a base material per wall with explicit
rectangular panels (windows, mirrors, doors) cut out of it; the remainder of every wall
is tiled with base-material panels so that panel areas always add up to the wall area.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Literal, Protocol

import numpy as np

from .config import (
    MATERIAL_LIBRARY,
    N_BANDS,
    SPEED_OF_SOUND,
    as_floats,
    as_strings,
    load_config,
    section,
)
from .errors import ConfigError, GeometryError, UnknownMaterialError

PanelState = Literal["open", "closed"]

M2_TO_FT2 = 10.763910416709722
M3_TO_FT3 = 35.31466672148859
M_PER_FT = 0.3048

# wall id -> (normal axis, side, (u axis, v axis))
WALLS: dict[str, tuple[int, int, tuple[int, int]]] = {
    "x0": (0, 0, (1, 2)),
    "x1": (0, 1, (1, 2)),
    "y0": (1, 0, (0, 2)),
    "y1": (1, 1, (0, 2)),
    "z0": (2, 0, (0, 1)),
    "z1": (2, 1, (0, 1)),
}

_TOL = 1e-6


@dataclass(frozen=True)
class MaterialSpec:
    """Acoustic material with one absorption coefficient per octave band."""

    name: str
    absorption: tuple[float, ...]
    transmission: float = 0.0
    is_reflector: bool = False

    def __post_init__(self) -> None:
        """Validate band count and coefficient ranges."""
        if len(self.absorption) != N_BANDS:
            raise GeometryError(f"material {self.name!r} needs {N_BANDS} absorption bands")
        for alpha in self.absorption:
            if not 0.0 <= alpha <= 1.0:
                raise GeometryError(f"material {self.name!r} absorption {alpha} not in [0, 1]")
            if alpha + self.transmission > 1.0 + 1e-12:
                raise GeometryError(f"material {self.name!r}: absorption + transmission > 1")
        if not 0.0 <= self.transmission <= 1.0:
            raise GeometryError(f"material {self.name!r} transmission not in [0, 1]")

    @classmethod
    def from_library(cls, name: str) -> MaterialSpec:
        """Build a material from ``MATERIAL_LIBRARY``."""
        try:
            entry = MATERIAL_LIBRARY[name]
        except KeyError:
            raise UnknownMaterialError(f"unknown material {name!r}") from None
        return cls(
            name=name,
            absorption=tuple(float(a) for a in entry["absorption"]),
            transmission=float(entry["transmission"]),
            is_reflector=bool(entry["is_reflector"]),
        )

    @classmethod
    def uniform(cls, name: str, alpha: float) -> MaterialSpec:
        """Material with the same absorption in every band."""
        return cls(name=name, absorption=(alpha,) * N_BANDS)


@dataclass(frozen=True)
class SurfacePanel:
    """Rectangular piece of one wall with a material and an open/closed state.

    ``rect`` is ``(u0, v0, u1, v1)`` in the wall's own coordinates (see ``WALLS``).
    """

    panel_id: str
    wall: str
    rect: tuple[float, float, float, float]
    corners: np.ndarray = field(compare=False)
    material: MaterialSpec
    state: PanelState = "closed"
    exterior: bool = False

    def __post_init__(self) -> None:
        """Validate the rectangle and its corners."""
        u0, v0, u1, v1 = self.rect
        if u1 - u0 <= 0 or v1 - v0 <= 0:
            raise GeometryError(f"panel {self.panel_id!r} has non-positive area")
        if self.state not in ("open", "closed"):
            raise GeometryError(f"panel {self.panel_id!r} state must be open or closed")
        corners = np.asarray(self.corners, dtype=float)
        normal = np.cross(corners[1] - corners[0], corners[3] - corners[0])
        normal /= np.linalg.norm(normal)
        if np.max(np.abs((corners - corners[0]) @ normal)) > _TOL:
            raise GeometryError(f"panel {self.panel_id!r} corners are not coplanar")

    @property
    def area(self) -> float:
        """Panel area in m²."""
        u0, v0, u1, v1 = self.rect
        return (u1 - u0) * (v1 - v0)

    @property
    def effective_absorption(self) -> np.ndarray:
        """Per-band absorption; an open panel absorbs everything."""
        if self.state == "open":
            return np.ones(N_BANDS)
        return np.asarray(self.material.absorption, dtype=float)

    def contains(self, u: float, v: float, tol: float = _TOL) -> bool:
        """Whether wall coordinates ``(u, v)`` fall on this panel."""
        u0, v0, u1, v1 = self.rect
        return u0 - tol <= u <= u1 + tol and v0 - tol <= v <= v1 + tol


def make_panel(
    panel_id: str,
    wall: str,
    rect: tuple[float, float, float, float],
    dims: tuple[float, float, float],
    material: MaterialSpec,
    state: PanelState = "closed",
    exterior: bool = False,
) -> SurfacePanel:
    """Create a panel, deriving its 3D corners from the wall rectangle."""
    if wall not in WALLS:
        raise GeometryError(f"unknown wall {wall!r}")
    axis, side, (ua, va) = WALLS[wall]
    u0, v0, u1, v1 = rect
    corners = np.zeros((4, 3))
    for row, (u, v) in enumerate(((u0, v0), (u1, v0), (u1, v1), (u0, v1))):
        corners[row, axis] = dims[axis] * side
        corners[row, ua] = u
        corners[row, va] = v
    return SurfacePanel(panel_id, wall, tuple(rect), corners, material, state, exterior)


class Absorber(Protocol):
    """Anything with a volume and a list of absorbing surfaces."""

    @property
    def volume(self) -> float:
        """Enclosed volume in m³."""
        ...

    def surfaces(self) -> Iterator[tuple[float, np.ndarray]]:
        """Yield ``(area m², effective per-band absorption)`` rows."""
        ...


@dataclass(frozen=True)
class ShoeboxRoom:
    """Axis-aligned room spanning ``[0, L] x [0, W] x [0, H]``."""

    dims: tuple[float, float, float]
    panels: tuple[SurfacePanel, ...]
    exterior_noise_level: float = -30.0
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self) -> None:
        """Validate dimensions, panel placement and wall coverage."""
        if any(d <= 0 for d in self.dims):
            raise GeometryError(f"room dimensions must be positive, got {self.dims}")
        if self.speed_of_sound <= 0:
            raise GeometryError("speed of sound must be positive")
        ids = [p.panel_id for p in self.panels]
        if len(set(ids)) != len(ids):
            raise GeometryError("panel ids must be unique")
        seen: dict[str, MaterialSpec] = {}
        for panel in self.panels:
            known = seen.setdefault(panel.material.name, panel.material)
            if known != panel.material:
                raise GeometryError(f"two materials share the name {panel.material.name!r}")
        for wall, (axis, side, (ua, va)) in WALLS.items():
            on_wall = [p for p in self.panels if p.wall == wall]
            for p in on_wall:
                if np.max(np.abs(p.corners[:, axis] - self.dims[axis] * side)) > _TOL:
                    raise GeometryError(f"panel {p.panel_id!r} is off wall {wall}")
                u0, v0, u1, v1 = p.rect
                inside = u0 >= -_TOL and v0 >= -_TOL
                inside = inside and u1 <= self.dims[ua] + _TOL and v1 <= self.dims[va] + _TOL
                if not inside:
                    raise GeometryError(f"panel {p.panel_id!r} extends past wall {wall}")
            wall_area = self.dims[ua] * self.dims[va]
            if abs(sum(p.area for p in on_wall) - wall_area) > _TOL:
                raise GeometryError(f"panels on wall {wall} do not cover it exactly")

    @property
    def volume(self) -> float:
        """Room volume in m³."""
        L, W, H = self.dims
        return L * W * H

    def surfaces(self) -> Iterator[tuple[float, np.ndarray]]:
        """Yield ``(area, effective absorption)`` for every panel."""
        for panel in self.panels:
            yield panel.area, panel.effective_absorption

    @property
    def materials(self) -> tuple[str, ...]:
        """Material names in order of first appearance."""
        return tuple(dict.fromkeys(p.material.name for p in self.panels))

    def panel(self, panel_id: str) -> SurfacePanel:
        """Look a panel up by id."""
        for p in self.panels:
            if p.panel_id == panel_id:
                return p
        raise GeometryError(f"no panel {panel_id!r}")

    def panel_at(self, wall: str, point: np.ndarray) -> SurfacePanel:
        """Panel of ``wall`` containing a point on that wall."""
        _, _, (ua, va) = WALLS[wall]
        # explicit panels are listed before base tiles, so they win on shared edges
        for p in self.panels:
            if p.wall == wall and p.contains(point[ua], point[va]):
                return p
        raise GeometryError(f"point {point} is not on wall {wall}")

    def with_panel(
        self,
        panel_id: str,
        material: MaterialSpec | None = None,
        state: PanelState | None = None,
    ) -> ShoeboxRoom:
        """Copy of the room with one panel's material and/or state replaced."""
        panels = []
        for p in self.panels:
            if p.panel_id == panel_id:
                p = dataclasses.replace(
                    p,
                    material=material if material is not None else p.material,
                    state=state if state is not None else p.state,
                )
            panels.append(p)
        return dataclasses.replace(self, panels=tuple(panels))

    def contains(self, point: np.ndarray) -> bool:
        """Whether a point lies strictly inside the room."""
        point = np.asarray(point, dtype=float)
        return bool(np.all(point > 0) and np.all(point < np.asarray(self.dims)))

    @property
    def has_open_exterior(self) -> bool:
        """Whether any exterior-facing panel is open."""
        return any(p.exterior and p.state == "open" for p in self.panels)


def build_room(
    dims: tuple[float, float, float],
    wall_materials: dict[str, MaterialSpec],
    cutouts: list[SurfacePanel] | None = None,
    exterior_walls: tuple[str, ...] = (),
    exterior_noise_level: float = -30.0,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> ShoeboxRoom:
    """Build a room from per-wall base materials and explicit cut-out panels.

    The uncovered part of each wall is split along the cut-out edges into a grid of
    base-material tiles named ``<wall>.base<n>``.
    """
    cutouts = list(cutouts or [])
    panels: list[SurfacePanel] = list(cutouts)
    for wall, (_, _, (ua, va)) in WALLS.items():
        base = wall_materials[wall]
        own = [p for p in cutouts if p.wall == wall]
        us = sorted({0.0, dims[ua], *(x for p in own for x in (p.rect[0], p.rect[2]))})
        vs = sorted({0.0, dims[va], *(x for p in own for x in (p.rect[1], p.rect[3]))})
        tile = 0
        for u0, u1 in zip(us, us[1:], strict=False):
            for v0, v1 in zip(vs, vs[1:], strict=False):
                if u1 - u0 <= _TOL or v1 - v0 <= _TOL:
                    continue
                cu, cv = (u0 + u1) / 2, (v0 + v1) / 2
                covering = [p for p in own if p.contains(cu, cv, tol=0.0)]
                if len(covering) > 1:
                    raise GeometryError(f"panels overlap on wall {wall}")
                if covering:
                    continue
                panels.append(
                    make_panel(
                        f"{wall}.base{tile}",
                        wall,
                        (u0, v0, u1, v1),
                        dims,
                        base,
                        exterior=wall in exterior_walls,
                    )
                )
                tile += 1
    return ShoeboxRoom(tuple(dims), tuple(panels), exterior_noise_level, speed_of_sound)


def uniform_room(
    dims: tuple[float, float, float], alpha: float, name: str = "uniform"
) -> ShoeboxRoom:
    """Room whose six walls share one frequency-flat material."""
    material = MaterialSpec.uniform(name, alpha)
    return build_room(dims, {wall: material for wall in WALLS})


def open_room(dims: tuple[float, float, float]) -> ShoeboxRoom:
    """Room with every wall open: reproduces free-field propagation."""
    room = uniform_room(dims, 0.0, name="air")
    panels = tuple(dataclasses.replace(p, state="open") for p in room.panels)
    return dataclasses.replace(room, panels=panels)


@dataclass(frozen=True)
class AbsorptionInventory:
    """Volume plus a list of absorbing surfaces that need not tile a shoebox."""

    volume_m3: float
    rows: tuple[tuple[float, MaterialSpec, PanelState], ...]

    @property
    def volume(self) -> float:
        """Volume in m³."""
        return self.volume_m3

    def surfaces(self) -> Iterator[tuple[float, np.ndarray]]:
        """Yield ``(area, effective absorption)`` per inventory row."""
        for area, material, state in self.rows:
            if state == "open":
                yield area, np.ones(N_BANDS)
            else:
                yield area, np.asarray(material.absorption, dtype=float)


@dataclass(frozen=True)
class SourceReceiver:
    """Emitter and microphone positions in metres."""

    source_pos: tuple[float, float, float]
    receiver_pos: tuple[float, float, float]
    vertical_offset: float = 0.07

    def __post_init__(self) -> None:
        """Validate the offset."""
        if self.vertical_offset < 0:
            raise GeometryError("vertical offset must be non-negative")

    @classmethod
    def stacked(cls, position: tuple[float, float, float], offset: float = 0.07) -> SourceReceiver:
        """Receiver placed ``offset`` metres above the source."""
        x, y, z = position
        return cls((x, y, z), (x, y, z + offset), offset)

    def check_inside(self, room: ShoeboxRoom) -> None:
        """Raise if either position is outside the room."""
        for name, pos in (("source", self.source_pos), ("receiver", self.receiver_pos)):
            if not room.contains(np.asarray(pos)):
                raise GeometryError(f"{name} {pos} is not strictly inside the room")


@dataclass(frozen=True)
class Scene:
    """Parsed scene file."""

    name: str
    room: ShoeboxRoom | None = None
    inventory: AbsorptionInventory | None = None
    pose: SourceReceiver | None = None
    target_panel: str | None = None
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def absorber(self) -> Absorber:
        """Inventory if given (analytics only), else the room."""
        if self.inventory is not None:
            return self.inventory
        if self.room is None:
            raise ConfigError(f"scene {self.name!r} defines neither [room] nor [inventory]")
        return self.room


def _materials(config: dict[str, Any]) -> dict[str, MaterialSpec]:
    materials = {name: MaterialSpec.from_library(name) for name in MATERIAL_LIBRARY}
    for name, entry in section(config, "material").items():
        materials[name] = MaterialSpec(
            name=name,
            absorption=tuple(as_floats(entry["absorption"], N_BANDS, f"{name}.absorption")),
            transmission=float(entry.get("transmission", 0.0)),
            is_reflector=bool(entry.get("is_reflector", False)),
        )
    return materials


def _lookup(materials: dict[str, MaterialSpec], name: str) -> MaterialSpec:
    try:
        return materials[name]
    except KeyError:
        raise UnknownMaterialError(f"unknown material {name!r}") from None


def scene_from_config(config: dict[str, Any], name: str = "scene") -> Scene:
    """Build a scene from a parsed config dictionary."""
    materials = _materials(config)
    room = None
    room_cfg = section(config, "room")
    if room_cfg:
        if "dims_ft" in room_cfg:
            dims = tuple(d * M_PER_FT for d in as_floats(room_cfg["dims_ft"], 3, "dims_ft"))
        else:
            dims = tuple(as_floats(room_cfg.get("dims"), 3, "dims"))
        walls_cfg = section(config, "walls")
        default = str(walls_cfg.get("default", "painted"))
        wall_materials = {w: _lookup(materials, str(walls_cfg.get(w, default))) for w in WALLS}
        cutouts = []
        for panel_id, entry in section(config, "panel").items():
            cutouts.append(
                make_panel(
                    panel_id,
                    str(entry["wall"]),
                    tuple(as_floats(entry["rect"], 4, f"{panel_id}.rect")),
                    dims,
                    _lookup(materials, str(entry.get("material", default))),
                    state=str(entry.get("state", "closed")),
                    exterior=bool(entry.get("exterior", False)),
                )
            )
        room = build_room(
            dims,
            wall_materials,
            cutouts,
            exterior_walls=tuple(as_strings(room_cfg.get("exterior_walls", []))),
            exterior_noise_level=float(room_cfg.get("exterior_noise_level", -30.0)),
            speed_of_sound=float(room_cfg.get("speed_of_sound", SPEED_OF_SOUND)),
        )

    inventory = None
    inv_cfg = section(config, "inventory")
    if inv_cfg:
        if "volume_ft3" in inv_cfg:
            volume = float(inv_cfg["volume_ft3"]) / M3_TO_FT3
        else:
            volume = float(inv_cfg["volume_m3"])
        rows = []
        for row_name, entry in inv_cfg.items():
            if not isinstance(entry, dict):
                continue
            if "area_ft2" in entry:
                area = float(entry["area_ft2"]) / M2_TO_FT2
            else:
                area = float(entry["area_m2"])
            material = _lookup(materials, str(entry.get("material", row_name)))
            rows.append((area, material, str(entry.get("state", "closed"))))
        inventory = AbsorptionInventory(volume, tuple(rows))

    pose = None
    pose_cfg = section(config, "pose")
    if pose_cfg:
        offset = float(pose_cfg.get("vertical_offset", 0.07))
        source = tuple(as_floats(pose_cfg["source"], 3, "pose.source"))
        if "receiver" in pose_cfg:
            pose = SourceReceiver(source, tuple(as_floats(pose_cfg["receiver"], 3)), offset)
        else:
            pose = SourceReceiver.stacked(source, offset)
        if room is not None:
            pose.check_inside(room)

    target = section(config, "sweep").get("target_panel")
    return Scene(
        name=str(config.get("name", name)),
        room=room,
        inventory=inventory,
        pose=pose,
        target_panel=str(target) if target is not None else None,
        extra=config,
    )


def load_scene(path: Path) -> Scene:
    """Load a scene description file."""
    return scene_from_config(load_config(path), name=path.stem)
