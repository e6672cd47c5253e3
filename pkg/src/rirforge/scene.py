"""Shoebox room scenes: geometry, materials, source and receiver.

A scene is a rectangular room with its corner at the origin, optional
axis-aligned box obstacles and one material per wall. Materials carry
absorption and scattering coefficients for the six octave bands in
:data:`OCTAVE_BANDS`.

Wall order used everywhere in the package::

    0: x = 0     1: x = Lx
    2: y = 0     3: y = Ly
    4: z = 0 (floor)    5: z = Lz (ceiling)
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

OCTAVE_BANDS = (125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0)
N_BANDS = len(OCTAVE_BANDS)
WALL_NAMES = ("x0", "x1", "y0", "y1", "floor", "ceiling")

DEFAULT_SPEED_OF_SOUND = 343.0
MIN_SOURCE_RECEIVER_DISTANCE = 0.05

Point3 = tuple[float, float, float]


class SceneError(ValueError):
    """Raised for malformed scene documents or violated scene invariants."""


def _point(value: Any, what: str) -> Point3:
    try:
        arr = [float(v) for v in value]
    except (TypeError, ValueError):
        raise SceneError(f"{what} must be a list of 3 numbers") from None
    if len(arr) != 3 or not all(np.isfinite(arr)):
        raise SceneError(f"{what} must be a list of 3 finite numbers")
    return (arr[0], arr[1], arr[2])


def _bands(value: Any, what: str) -> tuple[float, ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value] * N_BANDS
    try:
        arr = tuple(float(v) for v in value)
    except (TypeError, ValueError):
        raise SceneError(f"{what} must be a number or a list of {N_BANDS} numbers") from None
    if len(arr) != N_BANDS:
        raise SceneError(f"{what} must have {N_BANDS} octave-band values, got {len(arr)}")
    return arr


@dataclass(frozen=True)
class SurfaceMaterial:
    """Per-octave-band absorption and scattering coefficients."""

    absorption: tuple[float, ...] = (0.1,) * N_BANDS
    scattering: tuple[float, ...] = (0.1,) * N_BANDS

    def __post_init__(self):
        absorption = _bands(self.absorption, "absorption")
        scattering = _bands(self.scattering, "scattering")
        for name, coeffs in (("absorption", absorption), ("scattering", scattering)):
            if not all(0.0 <= c <= 1.0 for c in coeffs):
                raise SceneError(f"{name} coefficients must lie in [0, 1], got {coeffs}")
        object.__setattr__(self, "absorption", absorption)
        object.__setattr__(self, "scattering", scattering)

    @classmethod
    def uniform(cls, absorption: float, scattering: float = 0.1) -> "SurfaceMaterial":
        return cls((absorption,) * N_BANDS, (scattering,) * N_BANDS)

    def reflection(self) -> np.ndarray:
        """Pressure reflection factor per band, ``sqrt(1 - absorption)``."""
        return np.sqrt(1.0 - np.asarray(self.absorption))

    def to_dict(self) -> dict:
        return {"absorption": list(self.absorption), "scattering": list(self.scattering)}


@dataclass(frozen=True)
class AxisAlignedBox:
    min_corner: Point3
    max_corner: Point3

    def __post_init__(self):
        lo = _point(self.min_corner, "obstacle min")
        hi = _point(self.max_corner, "obstacle max")
        if not all(a < b for a, b in zip(lo, hi)):
            raise SceneError(f"obstacle min corner {lo} must be below max corner {hi} on every axis")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    def contains(self, point: Sequence[float]) -> bool:
        """True if ``point`` lies in the closed box."""
        return all(lo <= p <= hi for p, lo, hi in zip(point, self.min_corner, self.max_corner))

    def intersects_segment(self, a: Sequence[float], b: Sequence[float]) -> bool:
        return segment_intersects_box(a, b, self.min_corner, self.max_corner)


def segment_intersects_box(a, b, lo, hi, eps: float = 1e-12) -> bool:
    """Slab test for the closed segment ``a -> b`` against the box ``[lo, hi]``."""
    a = np.asarray(a, dtype=float)
    d = np.asarray(b, dtype=float) - a
    t0, t1 = 0.0, 1.0
    for axis in range(3):
        if abs(d[axis]) < eps:
            if a[axis] < lo[axis] or a[axis] > hi[axis]:
                return False
            continue
        ta = (lo[axis] - a[axis]) / d[axis]
        tb = (hi[axis] - a[axis]) / d[axis]
        if ta > tb:
            ta, tb = tb, ta
        t0 = max(t0, ta)
        t1 = min(t1, tb)
        if t0 > t1:
            return False
    return True


@dataclass(frozen=True)
class Scene:
    room_dims: Point3
    source: Point3
    receiver: Point3
    surfaces: tuple[SurfaceMaterial, ...] = field(
        default_factory=lambda: (SurfaceMaterial(),) * 6
    )
    obstacles: tuple[AxisAlignedBox, ...] = ()
    obstacle_materials: tuple[SurfaceMaterial, ...] = ()
    speed_of_sound: float = DEFAULT_SPEED_OF_SOUND
    air_absorption_enabled: bool = False

    def __post_init__(self):
        object.__setattr__(self, "room_dims", _point(self.room_dims, "room_dims"))
        object.__setattr__(self, "source", _point(self.source, "source"))
        object.__setattr__(self, "receiver", _point(self.receiver, "receiver"))
        object.__setattr__(self, "surfaces", tuple(self.surfaces))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        materials = tuple(self.obstacle_materials)
        if not materials:
            materials = (SurfaceMaterial(),) * len(self.obstacles)
        object.__setattr__(self, "obstacle_materials", materials)
        self._validate()

    def _validate(self):
        dims = self.room_dims
        if not all(d > 0 for d in dims):
            raise SceneError(f"room_dims must be positive, got {dims}")
        if len(self.surfaces) != 6:
            raise SceneError(f"expected 6 surface materials, got {len(self.surfaces)}")
        if len(self.obstacle_materials) != len(self.obstacles):
            raise SceneError("one material is required per obstacle")
        if not self.speed_of_sound > 0:
            raise SceneError("speed_of_sound must be positive")
        for name, p in (("source", self.source), ("receiver", self.receiver)):
            if not all(0.0 < x < d for x, d in zip(p, dims)):
                raise SceneError(f"{name} outside room: {p} not strictly inside {dims}")
        for i, box in enumerate(self.obstacles):
            if not all(0.0 <= lo and hi <= d for lo, hi, d in zip(box.min_corner, box.max_corner, dims)):
                raise SceneError(f"obstacle {i} not contained in room")
            for name, p in (("source", self.source), ("receiver", self.receiver)):
                if box.contains(p):
                    raise SceneError(f"{name} inside obstacle {i}")
        if self.distance < MIN_SOURCE_RECEIVER_DISTANCE:
            raise SceneError(
                f"source and receiver closer than {MIN_SOURCE_RECEIVER_DISTANCE} m"
            )

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.receiver, self.source)))

    @property
    def volume(self) -> float:
        lx, ly, lz = self.room_dims
        return lx * ly * lz

    @property
    def wall_areas(self) -> np.ndarray:
        lx, ly, lz = self.room_dims
        return np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly])

    def sabine_t60(self, band: int = 0) -> float:
        """Sabine reverberation time ``0.161 V / sum(S_i a_i)`` for one octave band."""
        alpha = np.array([m.absorption[band] for m in self.surfaces])
        sa = float(np.sum(self.wall_areas * alpha))
        if sa <= 0:
            return float("inf")
        return 0.161 * self.volume / sa

    def line_of_sight(self) -> bool:
        return line_of_sight(self)

    def to_dict(self) -> dict:
        doc = {
            "room_dims": list(self.room_dims),
            "source": list(self.source),
            "receiver": list(self.receiver),
            "surfaces": [m.to_dict() for m in self.surfaces],
            "obstacles": [
                {"min": list(b.min_corner), "max": list(b.max_corner), "material": m.to_dict()}
                for b, m in zip(self.obstacles, self.obstacle_materials)
            ],
            "speed_of_sound": self.speed_of_sound,
        }
        if self.air_absorption_enabled:
            doc["air_absorption"] = True
        return doc

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; stable across runs and platforms."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_positions(self, source=None, receiver=None) -> "Scene":
        from dataclasses import replace

        return replace(
            self,
            source=self.source if source is None else source,
            receiver=self.receiver if receiver is None else receiver,
        )


def line_of_sight(scene: Scene) -> bool:
    """True iff the straight segment source -> receiver misses every obstacle."""
    return not any(box.intersects_segment(scene.source, scene.receiver) for box in scene.obstacles)


_TOP_KEYS = {"room_dims", "source", "receiver", "surfaces", "obstacles", "speed_of_sound", "air_absorption"}
_REQUIRED = {"room_dims", "source", "receiver", "surfaces"}
_MATERIAL_KEYS = {"absorption", "scattering"}
_OBSTACLE_KEYS = {"min", "max", "material"}


def _material(doc: Any, what: str) -> SurfaceMaterial:
    if not isinstance(doc, dict):
        raise SceneError(f"{what} must be an object")
    unknown = set(doc) - _MATERIAL_KEYS
    if unknown:
        raise SceneError(f"unknown keys in {what}: {sorted(unknown)}")
    if "absorption" not in doc:
        raise SceneError(f"{what} is missing 'absorption'")
    return SurfaceMaterial(
        _bands(doc["absorption"], f"{what}.absorption"),
        _bands(doc.get("scattering", 0.1), f"{what}.scattering"),
    )


def scene_from_dict(doc: Any) -> Scene:
    """Validate a decoded scene document and build a :class:`Scene`.

    ``surfaces`` is either a list of six material objects (wall order in the
    module docstring) or a single object applied to every wall. Band values
    may be given as one number, which is broadcast to all six bands.
    """
    if not isinstance(doc, dict):
        raise SceneError("scene document must be an object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise SceneError(f"unknown keys in scene document: {sorted(unknown)}")
    missing = _REQUIRED - set(doc)
    if missing:
        raise SceneError(f"scene document is missing {sorted(missing)}")

    surfaces_doc = doc["surfaces"]
    if isinstance(surfaces_doc, dict):
        surfaces = (_material(surfaces_doc, "surfaces"),) * 6
    elif isinstance(surfaces_doc, list):
        if len(surfaces_doc) != 6:
            raise SceneError(f"surfaces must list 6 materials, got {len(surfaces_doc)}")
        surfaces = tuple(_material(m, f"surfaces[{i}]") for i, m in enumerate(surfaces_doc))
    else:
        raise SceneError("surfaces must be an object or a list of 6 objects")

    obstacles, materials = [], []
    obstacles_doc = doc.get("obstacles", [])
    if not isinstance(obstacles_doc, list):
        raise SceneError("obstacles must be a list")
    for i, ob in enumerate(obstacles_doc):
        if not isinstance(ob, dict):
            raise SceneError(f"obstacles[{i}] must be an object")
        unknown = set(ob) - _OBSTACLE_KEYS
        if unknown:
            raise SceneError(f"unknown keys in obstacles[{i}]: {sorted(unknown)}")
        if "min" not in ob or "max" not in ob:
            raise SceneError(f"obstacles[{i}] needs 'min' and 'max'")
        obstacles.append(AxisAlignedBox(_point(ob["min"], f"obstacles[{i}].min"), _point(ob["max"], f"obstacles[{i}].max")))
        materials.append(_material(ob["material"], f"obstacles[{i}].material") if "material" in ob else SurfaceMaterial())

    c = doc.get("speed_of_sound", DEFAULT_SPEED_OF_SOUND)
    if isinstance(c, bool) or not isinstance(c, (int, float)):
        raise SceneError("speed_of_sound must be a number")
    air = doc.get("air_absorption", False)
    if not isinstance(air, bool):
        raise SceneError("air_absorption must be true or false")

    return Scene(
        room_dims=_point(doc["room_dims"], "room_dims"),
        source=_point(doc["source"], "source"),
        receiver=_point(doc["receiver"], "receiver"),
        surfaces=surfaces,
        obstacles=tuple(obstacles),
        obstacle_materials=tuple(materials),
        speed_of_sound=float(c),
        air_absorption_enabled=air,
    )


def parse_scene(text: str) -> Scene:
    """Parse a JSON scene document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"scene document is not valid JSON: {exc}") from None
    return scene_from_dict(doc)


def serialize_scene(scene: Scene) -> str:
    return json.dumps(scene.to_dict(), indent=2, sort_keys=True)


def load_scene(path) -> Scene:
    with open(path, encoding="utf-8") as f:
        return parse_scene(f.read())
