"""Procedural car-like shapes with analytic signed fields.

Four body styles: estateback (E), notchback (N), fastback with smooth
underbody (FS) and fastback with detailed underbody (FD). Each shape is a
rounded-box body blended with a tapered cabin, cut by a rear slant plane
and four wheel arches; FD adds a corrugation band along the floor.

Cars are built in raw model units sized to fit the unit ball, then meshed
and renormalized so downstream consumers always see unit-sphere geometry.
The field is the ground truth: it is not an exact distance function after
blending, and the codec treats its values, not true distances, as targets.

Category bands are deliberately skewed: estates are taller and boxier
(larger frontal area, wider cabin), fastbacks share one band whether or
not the underbody is detailed, and notchbacks match fastbacks except for
the trunk. The aero oracle downstream leans on exactly this structure.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import InvalidParams
from .geometry import (
    ScalarField3,
    TriMesh,
    Transform,
    marching_cubes,
    normalize_to_unit_sphere,
)

CATEGORIES = ("E", "N", "FS", "FD")

CATEGORY_NAMES = {
    "E": "estateback",
    "N": "notchback",
    "FS": "fastback-smooth",
    "FD": "fastback-detailed",
}

# slant bands in degrees per category
SLANT_BANDS = {"E": (5.0, 15.0), "N": (20.0, 35.0),
               "FS": (20.0, 35.0), "FD": (20.0, 35.0)}

DEFAULT_RESOLUTION = 64

# corrugation constants for detailed underbodies
_CORR_AMP = 0.01
_CORR_WAVES = 6.0
_CORR_FADE = 0.05


@dataclass(frozen=True)
class CarParams:
    category: str
    length: float
    width: float
    height: float
    cabin_taper: float
    rear_slant_deg: float
    trunk_len: float
    ground_clearance: float
    underbody_detail: bool
    jitter: tuple[float, ...] = ()

    def validate(self) -> None:
        if self.category not in CATEGORIES:
            raise InvalidParams(f"unknown category {self.category!r}")
        if not (self.length > self.width > self.ground_clearance > 0):
            raise InvalidParams(
                "need length > width > ground_clearance > 0, got "
                f"{self.length} / {self.width} / {self.ground_clearance}"
            )
        if not (5.0 <= self.rear_slant_deg <= 75.0):
            raise InvalidParams(
                f"rear slant {self.rear_slant_deg} outside [5, 75] degrees")
        lo, hi = SLANT_BANDS[self.category]
        if not (lo <= self.rear_slant_deg <= hi):
            raise InvalidParams(
                f"category {self.category} needs slant in [{lo}, {hi}] deg, "
                f"got {self.rear_slant_deg}")
        if not 0.0 <= self.cabin_taper <= 1.0:
            raise InvalidParams("cabin_taper outside [0, 1]")
        if self.underbody_detail != (self.category == "FD"):
            raise InvalidParams(
                "underbody_detail must be set exactly for category FD")
        if self.category == "N":
            if self.trunk_len <= 0:
                raise InvalidParams("notchback needs trunk_len > 0")
        elif self.trunk_len != 0.0:
            raise InvalidParams(
                f"category {self.category} must have trunk_len = 0")
        if self.height <= 0:
            raise InvalidParams("height must be positive")

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "length": self.length,
            "width": self.width,
            "height": self.height,
            "cabin_taper": self.cabin_taper,
            "rear_slant_deg": self.rear_slant_deg,
            "trunk_len": self.trunk_len,
            "ground_clearance": self.ground_clearance,
            "underbody_detail": self.underbody_detail,
            "jitter": list(self.jitter),
        }

    @staticmethod
    def from_dict(d: dict) -> "CarParams":
        return CarParams(
            category=d["category"], length=d["length"], width=d["width"],
            height=d["height"], cabin_taper=d["cabin_taper"],
            rear_slant_deg=d["rear_slant_deg"], trunk_len=d["trunk_len"],
            ground_clearance=d["ground_clearance"],
            underbody_detail=d["underbody_detail"],
            jitter=tuple(d.get("jitter", ())),
        )


def params_id(params: CarParams) -> str:
    """Stable content id: category plus a digest of the parameter record."""
    payload = json.dumps(params.to_dict(), sort_keys=True).encode()
    return f"{params.category}-{hashlib.sha256(payload).hexdigest()[:16]}"


@dataclass
class ShapeRecord:
    id: str
    params: CarParams
    field: ScalarField3
    mesh: TriMesh
    transform: Transform
    resolution: int
    sketch_ids: list[str] = dc_field(default_factory=list)
    latent_id: str | None = None


def _rounded_box(p, center, half, radius):
    q = np.abs(p - center) - (np.asarray(half) - radius)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
    inside = np.minimum(np.max(q, axis=1), 0.0)
    return outside + inside - radius


def _smooth_min(a, b, k=0.05):
    h = np.clip(0.5 + 0.5 * (b - a) / k, 0.0, 1.0)
    return b * (1.0 - h) + a * h - k * h * (1.0 - h)


def make_field(params: CarParams) -> ScalarField3:
    """Analytic signed field for one car, negative inside.

    Composition order: body and cabin blend smoothly, the slant plane cuts
    either the cabin alone (notchback) or the blended union (estate and
    fastbacks), wheel arches are subtracted, and detailed underbodies get
    an additive corrugation that is identically zero above a low band.
    """
    params.validate()
    L, W, H = params.length, params.width, params.height
    gc = params.ground_clearance
    theta = np.radians(params.rear_slant_deg)

    z_gnd = -H / 2 + gc
    z_roof = H / 2
    z_belt = z_gnd + 0.55 * (z_roof - z_gnd)

    body_center = np.array([0.0, 0.0, (z_gnd + z_belt) / 2])
    body_half = np.array([L / 2, W / 2, (z_belt - z_gnd) / 2])

    cab_front = -L / 2 + 0.28 * L
    overhang = 0.10 * L
    cab_rear = L / 2 - overhang - params.trunk_len
    cab_halfw = (W / 2) * (1.0 - 0.35 * params.cabin_taper)
    cab_zlo = z_belt - 0.05
    cabin_center = np.array([(cab_front + cab_rear) / 2, 0.0,
                             (cab_zlo + z_roof) / 2])
    cabin_half = np.array([(cab_rear - cab_front) / 2, cab_halfw,
                           (z_roof - cab_zlo) / 2])

    sin_t, cos_t = np.sin(theta), np.cos(theta)
    if params.category == "N":
        hinge_x = cab_rear - 0.02
    elif params.category == "E":
        hinge_x = L / 2 - 0.12 * L
    else:
        hinge_x = L / 2 - (z_roof - z_belt) / np.tan(theta)

    wheel_r = 1.2 * gc
    wheel_zc = z_gnd - 0.25 * gc
    wheel_xs = (-L / 2 + 0.22 * L, L / 2 - 0.22 * L)

    detailed = params.underbody_detail
    corr_period = L / _CORR_WAVES
    corr_ztop = z_gnd + 0.16 * (z_roof - z_gnd)

    def fn(p):
        body = _rounded_box(p, body_center, body_half, 0.04)
        cabin = _rounded_box(p, cabin_center, cabin_half, 0.03)
        slant = cos_t * (p[:, 2] - z_roof) + sin_t * (p[:, 0] - hinge_x)
        if params.category == "N":
            f = _smooth_min(body, np.maximum(cabin, slant))
        else:
            f = np.maximum(_smooth_min(body, cabin), slant)
        for wx in wheel_xs:
            arch = np.sqrt((p[:, 0] - wx) ** 2
                           + (p[:, 2] - wheel_zc) ** 2) - wheel_r
            f = np.maximum(f, -arch)
        if detailed:
            ramp = np.clip((corr_ztop - p[:, 2]) / _CORR_FADE, 0.0, 1.0)
            f = f + _CORR_AMP * np.cos(2 * np.pi * p[:, 0] / corr_period) * ramp
        return f

    bound = 1.05
    if detailed:
        bound += _CORR_AMP * (2 * np.pi / corr_period + 1.0 / _CORR_FADE)
    return ScalarField3(fn, lipschitz_bound=bound,
                        name=f"car {params_id(params)}")


def _draw_params(category: str, u: np.ndarray) -> CarParams:
    length = 1.15 + 0.15 * u[0]
    width = 0.42 + 0.10 * u[1]
    if category == "E":
        height = 0.44 + 0.06 * u[2]
        taper = 0.10 + 0.20 * u[3]
    else:
        height = 0.38 + 0.06 * u[2]
        taper = 0.65 + 0.25 * u[3]
    lo, hi = SLANT_BANDS[category]
    slant = lo + (hi - lo) * u[4]
    trunk = (0.16 + 0.08 * u[5]) * length if category == "N" else 0.0
    clearance = 0.05 + 0.02 * u[6]
    return CarParams(
        category=category, length=length, width=width, height=height,
        cabin_taper=taper, rear_slant_deg=slant, trunk_len=trunk,
        ground_clearance=clearance, underbody_detail=(category == "FD"),
        jitter=tuple(float(x) for x in u),
    )


def sample_params(per_category: int, seed: int = 0) -> list[CarParams]:
    """Deterministic parameter draws, grouped by category in fixed order."""
    if per_category < 1:
        raise ValueError("per_category must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for category in CATEGORIES:
        for _ in range(per_category):
            out.append(_draw_params(category, rng.random(8)))
    return out


def build_record(params: CarParams,
                 resolution: int = DEFAULT_RESOLUTION) -> ShapeRecord:
    """Mesh the raw field, renormalize to the unit sphere, wrap the field
    in the same transform so field and mesh stay consistent."""
    raw_field = make_field(params)
    raw_mesh = marching_cubes(raw_field, resolution)
    mesh, tf = normalize_to_unit_sphere(raw_mesh)

    def normalized(p):
        return tf.scale * raw_field(tf.invert(p))

    norm_field = ScalarField3(normalized,
                              lipschitz_bound=raw_field.lipschitz_bound,
                              name=raw_field.name)
    return ShapeRecord(id=params_id(params), params=params, field=norm_field,
                       mesh=mesh, transform=tf, resolution=resolution)


def sample_dataset(per_category: int, seed: int = 0,
                   resolution: int = DEFAULT_RESOLUTION) -> list[ShapeRecord]:
    return [build_record(p, resolution)
            for p in sample_params(per_category, seed)]


def _march_hits(field: ScalarField3, origins: np.ndarray,
                direction: np.ndarray, max_travel: float) -> np.ndarray:
    """Sphere-trace along one shared direction; True where a ray hits."""
    bound = max(field.lipschitz_bound, 1e-6)
    pos = origins.copy()
    travel = np.zeros(len(pos))
    hit = np.zeros(len(pos), dtype=bool)
    alive = np.ones(len(pos), dtype=bool)
    for _ in range(256):
        if not alive.any():
            break
        vals = field(pos[alive])
        newly_hit = vals < 1e-4
        idx = np.flatnonzero(alive)
        hit[idx[newly_hit]] = True
        alive[idx[newly_hit]] = False
        step = np.maximum(vals[~newly_hit] / bound, 2e-4)
        rest = idx[~newly_hit]
        pos[rest] += step[:, None] * direction
        travel[rest] += step
        done = travel[rest] > max_travel
        alive[rest[done]] = False
    return hit


def frontal_area(field: ScalarField3, extent: float = 0.55,
                 grid: int = 128) -> float:
    """Silhouette integration along the driving axis on a grid^2 raster.

    The window must cover the whole cross-section; 0.55 leaves margin for
    the widest parameter draws in raw model units.
    """
    half_px = extent / grid
    axis = np.linspace(-extent + half_px, extent - half_px, grid)
    yy, zz = np.meshgrid(axis, axis, indexing="ij")
    origins = np.stack([np.full(yy.size, -1.0), yy.ravel(), zz.ravel()],
                       axis=1)
    hits = _march_hits(field, origins, np.array([1.0, 0.0, 0.0]), 2.0)
    pixel_area = (2 * extent / grid) ** 2
    return float(hits.sum()) * pixel_area


def describe(params: CarParams) -> dict:
    """Summary record feeding the aero oracle."""
    params.validate()
    return {
        "id": params_id(params),
        "category": params.category,
        "frontal_area": frontal_area(make_field(params)),
        "rear_slant_deg": params.rear_slant_deg,
        "cabin_taper": params.cabin_taper,
        "underbody_detail": params.underbody_detail,
    }


def manifest_rows(records: list[ShapeRecord],
                  stl_paths: dict[str, str] | None = None,
                  sketch_paths: dict[str, list[str]] | None = None) -> list[dict]:
    """Manifest array: {id, category, params, stl_path, sketch_paths}."""
    rows = []
    for rec in records:
        rows.append({
            "id": rec.id,
            "category": rec.params.category,
            "params": rec.params.to_dict(),
            "stl_path": (stl_paths or {}).get(rec.id),
            "sketch_paths": (sketch_paths or {}).get(rec.id, []),
        })
    return rows
