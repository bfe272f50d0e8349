"""Castellated hexahedral meshing over an octree background grid.

A wind-tunnel box is tiled with level-0 hex cells, selectively split
(1 -> 8) inside refinement regions under a 2:1 level balance, castellated
against a body signed-distance field (cell-center rule), and kept only
where a flood fill from a designated fluid point reaches.  A ten-check
quality suite and a canonical legacy-ASCII VTK format round out the
pipeline.

Conventions
-----------
Cells are octree leaves keyed (level, i, j, k); at level L the domain
holds counts*2^L cells per axis.  Where refinement levels meet, the
coarse face is represented as its (up to) four fine sub-faces, so every
internal face has exactly one owner and one neighbor.  Boundary patches:
x-min "inlet", x-max "outlet", the four lateral sides "walls", and any
face exposed by castellation "body".
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidKeepPoint, InvalidParams, InvalidRegion, IoError
from .geometry import ScalarField3

__all__ = [
    "PATCHES",
    "CHECK_NAMES",
    "DomainSpec",
    "RefinementRegion",
    "HexMesh",
    "FaceSet",
    "QualityThresholds",
    "QualityCheck",
    "QualityReport",
    "background_mesh",
    "refine",
    "castellate",
    "check_mesh",
    "export_vtk",
    "read_vtk",
    "vtk_bytes",
    "save_quality_report",
]

PATCHES = ("inlet", "outlet", "walls", "body")

CHECK_NAMES = (
    "boundary_openness",
    "max_aspect_ratio",
    "min_face_area",
    "max_face_area",
    "min_volume",
    "max_volume",
    "mesh_non_orthogonality",
    "face_pyramids",
    "max_skewness",
    "coupled_point_match",
)

MAX_LEVEL_CAP = 6


@dataclass(frozen=True)
class DomainSpec:
    """Wind-tunnel box, base cell counts per axis, and the fluid seed."""

    box_min: tuple
    box_max: tuple
    counts: tuple
    keep_point: tuple

    def __post_init__(self) -> None:
        lo = np.asarray(self.box_min, dtype=np.float64)
        hi = np.asarray(self.box_max, dtype=np.float64)
        kp = np.asarray(self.keep_point, dtype=np.float64)
        if lo.shape != (3,) or hi.shape != (3,) or kp.shape != (3,):
            raise InvalidParams("box corners and keep_point must be 3-vectors")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all() and np.isfinite(kp).all()):
            raise InvalidParams("domain geometry must be finite")
        if not (hi > lo).all():
            raise InvalidParams(f"box extents must be positive, got {hi - lo}")
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != 3 or any(c < 1 for c in counts):
            raise InvalidParams(f"cell counts must be three integers >= 1, got {self.counts}")
        if not ((kp > lo).all() and (kp < hi).all()):
            raise InvalidKeepPoint(f"keep_point {tuple(kp)} is not strictly inside the box")
        object.__setattr__(self, "box_min", tuple(float(v) for v in lo))
        object.__setattr__(self, "box_max", tuple(float(v) for v in hi))
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "keep_point", tuple(float(v) for v in kp))

    def extent(self) -> np.ndarray:
        return np.asarray(self.box_max) - np.asarray(self.box_min)

    def level_size(self, level: int) -> np.ndarray:
        """Cell edge lengths at a refinement level."""
        return self.extent() / (np.asarray(self.counts) * (1 << level))

    def level_shape(self, level: int) -> tuple:
        return tuple(c * (1 << level) for c in self.counts)

    def volume(self) -> float:
        return float(np.prod(self.extent()))


@dataclass(frozen=True)
class RefinementRegion:
    """Where to refine and how deep: an axis-aligned box, or the band of
    cells within a given distance of the body surface."""

    kind: str
    level: int
    box_min: tuple | None = None
    box_max: tuple | None = None
    band_distance: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("box", "surface-band"):
            raise InvalidParams(f"region kind must be box or surface-band, got {self.kind!r}")
        if int(self.level) != self.level or self.level < 1:
            raise InvalidParams(f"region level must be an integer >= 1, got {self.level}")
        object.__setattr__(self, "level", int(self.level))
        if self.kind == "box":
            lo = np.asarray(self.box_min, dtype=np.float64)
            hi = np.asarray(self.box_max, dtype=np.float64)
            if lo.shape != (3,) or hi.shape != (3,) or not (hi > lo).all():
                raise InvalidParams("box region needs box_max > box_min componentwise")
            object.__setattr__(self, "box_min", tuple(float(v) for v in lo))
            object.__setattr__(self, "box_max", tuple(float(v) for v in hi))
        else:
            if self.band_distance is None or not (self.band_distance > 0):
                raise InvalidParams("surface-band region needs band_distance > 0")
            object.__setattr__(self, "band_distance", float(self.band_distance))

    @staticmethod
    def box_region(box_min, box_max, level: int) -> "RefinementRegion":
        return RefinementRegion("box", level, box_min=tuple(box_min), box_max=tuple(box_max))

    @staticmethod
    def surface_band(distance: float, level: int) -> "RefinementRegion":
        return RefinementRegion("surface-band", level, band_distance=distance)


@dataclass
class FaceSet:
    """Derived face geometry: internal faces (owner -> neighbor oriented)
    and boundary faces (outward oriented, patch labeled)."""

    owner: np.ndarray
    neighbor: np.ndarray
    area_vec: np.ndarray
    centroid: np.ndarray
    corners: np.ndarray
    b_cell: np.ndarray
    b_patch: list
    b_area_vec: np.ndarray
    b_centroid: np.ndarray
    b_corners: np.ndarray

    @property
    def internal_count(self) -> int:
        return len(self.owner)

    @property
    def boundary_count(self) -> int:
        return len(self.b_cell)


class HexMesh:
    """Octree-leaf hex mesh.  Leaves are kept in canonical sorted order;
    construction validates domain containment, leaf disjointness, and the
    2:1 level balance across every shared face."""

    def __init__(self, spec: DomainSpec, leaves) -> None:
        self.spec = spec
        keys = sorted(set(tuple(int(v) for v in leaf) for leaf in leaves))
        if not keys:
            raise InvalidParams("mesh must contain at least one cell")
        self.leaves = tuple(keys)
        self._index = {key: i for i, key in enumerate(self.leaves)}
        self._faces: FaceSet | None = None
        self._validate()

    # -- structure -------------------------------------------------------

    def _validate(self) -> None:
        for level, i, j, k in self.leaves:
            if level < 0:
                raise InvalidParams(f"negative level in leaf {(level, i, j, k)}")
            shape = self.spec.level_shape(level)
            if not (0 <= i < shape[0] and 0 <= j < shape[1] and 0 <= k < shape[2]):
                raise InvalidParams(f"leaf {(level, i, j, k)} outside the domain grid")
        for level, i, j, k in self.leaves:
            li, lj, lk = i, j, k
            for up in range(level - 1, -1, -1):
                li, lj, lk = li // 2, lj // 2, lk // 2
                if (up, li, lj, lk) in self._index:
                    raise InvalidParams(
                        f"leaf {(level, i, j, k)} overlaps ancestor {(up, li, lj, lk)}"
                    )
        for key in self.leaves:
            level = key[0]
            for direction in range(6):
                cover = self._covering_neighbor(key, direction)
                if cover is not None and level - cover[0] > 1:
                    raise InvalidParams(
                        f"2:1 balance violated between {key} and {cover}"
                    )

    def _covering_neighbor(self, key, direction: int):
        """The leaf covering the same-level neighbor position, if the
        covering leaf is at the same level or coarser; None otherwise
        (finer neighbors, domain boundary, or castellated void)."""
        level, i, j, k = key
        axis, sign = divmod(direction, 2)
        step = 1 if sign else -1
        pos = [i, j, k]
        pos[axis] += step
        shape = self.spec.level_shape(level)
        if not (0 <= pos[axis] < shape[axis]):
            return None
        ni, nj, nk = pos
        for up in range(level, -1, -1):
            cand = (up, ni, nj, nk)
            if cand in self._index:
                return cand
            ni, nj, nk = ni // 2, nj // 2, nk // 2
        return None

    def _fine_neighbors(self, key, direction: int):
        """Existing level+1 leaves touching this face (0 to 4 of them)."""
        level, i, j, k = key
        axis, sign = divmod(direction, 2)
        step = 1 if sign else -1
        pos = [i, j, k]
        pos[axis] += step
        shape = self.spec.level_shape(level)
        if not (0 <= pos[axis] < shape[axis]):
            return []
        base = [2 * pos[0], 2 * pos[1], 2 * pos[2]]
        # children of the neighbor adjacent to the shared face sit on the
        # near side along `axis`: offset 0 when stepping +, 1 when stepping -
        face_off = 0 if step > 0 else 1
        out = []
        other = [a for a in range(3) if a != axis]
        for u in (0, 1):
            for v in (0, 1):
                child = list(base)
                child[axis] += face_off
                child[other[0]] += u
                child[other[1]] += v
                cand = (level + 1, child[0], child[1], child[2])
                if cand in self._index:
                    out.append(cand)
        return out

    def neighbors_of(self, key):
        """All face-adjacent leaves (same level, coarser, or finer)."""
        out = []
        for direction in range(6):
            cover = self._covering_neighbor(key, direction)
            if cover is not None:
                out.append(cover)
            else:
                out.extend(self._fine_neighbors(key, direction))
        return out

    # -- geometry --------------------------------------------------------

    @property
    def cell_count(self) -> int:
        return len(self.leaves)

    def cell_center(self, key) -> np.ndarray:
        level, i, j, k = key
        size = self.spec.level_size(level)
        return np.asarray(self.spec.box_min) + (np.array([i, j, k]) + 0.5) * size

    def cell_centers(self) -> np.ndarray:
        return np.stack([self.cell_center(key) for key in self.leaves])

    def cell_volumes(self) -> np.ndarray:
        vols = np.empty(len(self.leaves))
        for idx, key in enumerate(self.leaves):
            vols[idx] = float(np.prod(self.spec.level_size(key[0])))
        return vols

    def total_volume(self) -> float:
        return float(self.cell_volumes().sum())

    def cell_bounds(self, key):
        level, i, j, k = key
        size = self.spec.level_size(level)
        lo = np.asarray(self.spec.box_min) + np.array([i, j, k]) * size
        return lo, lo + size

    def find_leaf(self, point):
        """Leaf containing a point, or None if the point lies in void."""
        p = np.asarray(point, dtype=np.float64)
        lo = np.asarray(self.spec.box_min)
        hi = np.asarray(self.spec.box_max)
        if not ((p >= lo).all() and (p <= hi).all()):
            return None
        max_level = max(key[0] for key in self.leaves)
        for level in range(max_level + 1):
            size = self.spec.level_size(level)
            shape = self.spec.level_shape(level)
            idx = np.minimum(((p - lo) // size).astype(int), np.asarray(shape) - 1)
            idx = np.maximum(idx, 0)
            key = (level, int(idx[0]), int(idx[1]), int(idx[2]))
            if key in self._index:
                return key
        return None

    # -- faces -----------------------------------------------------------

    def faces(self) -> FaceSet:
        if self._faces is None:
            self._faces = self._build_faces()
        return self._faces

    def _face_geometry(self, key, direction: int):
        """Corners (wound so the right-hand normal points along the
        outward direction), centroid, and outward area vector of this
        leaf's face."""
        axis, sign = divmod(direction, 2)
        step = 1 if sign else -1
        lo, hi = self.cell_bounds(key)
        size = hi - lo
        plane = hi[axis] if step > 0 else lo[axis]
        # Cyclic (u, v) with u x v = +axis keeps the winding right-handed.
        u, v = ((1, 2), (2, 0), (0, 1))[axis]
        # Corner cycle (lo,lo) -> (hi,lo) -> (hi,hi) -> (lo,hi) in the (u,v)
        # plane gives right-hand normal +axis; flip order for -axis faces.
        cycle = [(0, 0), (1, 0), (1, 1), (0, 1)] if step > 0 else [(0, 0), (0, 1), (1, 1), (1, 0)]
        corners = np.empty((4, 3))
        for c, (du, dv) in enumerate(cycle):
            corners[c, axis] = plane
            corners[c, u] = lo[u] + du * size[u]
            corners[c, v] = lo[v] + dv * size[v]
        centroid = corners.mean(axis=0)
        area = size[u] * size[v]
        area_vec = np.zeros(3)
        area_vec[axis] = step * area
        return corners, centroid, area_vec

    def _boundary_patch(self, key, direction: int) -> str:
        axis, sign = divmod(direction, 2)
        if axis == 0:
            return "outlet" if sign else "inlet"
        return "walls"

    def _build_faces(self) -> FaceSet:
        owner, neighbor, area_vecs, centroids, corners = [], [], [], [], []
        b_cell, b_patch, b_area, b_centroid, b_corners = [], [], [], [], []

        for key in self.leaves:
            level = key[0]
            idx = self._index[key]
            for direction in range(6):
                axis, sign = divmod(direction, 2)
                step = 1 if sign else -1
                pos = [key[1], key[2], key[3]]
                pos[axis] += step
                shape = self.spec.level_shape(level)

                if not (0 <= pos[axis] < shape[axis]):
                    geo = self._face_geometry(key, direction)
                    b_cell.append(idx)
                    b_patch.append(self._boundary_patch(key, direction))
                    b_corners.append(geo[0])
                    b_centroid.append(geo[1])
                    b_area.append(geo[2])
                    continue

                same = (level, pos[0], pos[1], pos[2])
                if same in self._index:
                    if step > 0:  # emit each same-level face once
                        geo = self._face_geometry(key, direction)
                        owner.append(idx)
                        neighbor.append(self._index[same])
                        corners.append(geo[0])
                        centroids.append(geo[1])
                        area_vecs.append(geo[2])
                    continue

                cover = self._covering_neighbor(key, direction)
                if cover is not None:
                    # Fine cell facing a coarser leaf: the fine side always
                    # emits the sub-face.
                    geo = self._face_geometry(key, direction)
                    owner.append(idx)
                    neighbor.append(self._index[cover])
                    corners.append(geo[0])
                    centroids.append(geo[1])
                    area_vecs.append(geo[2])
                    continue

                fine = self._fine_neighbors(key, direction)
                if fine:
                    # Finer neighbors emit their own sub-faces; any of the
                    # four child slots that is missing is void exposed by
                    # castellation -> quarter body face from this side.
                    present = set(fine)
                    quarter = self._quarter_faces(key, direction)
                    for child_key, (q_corners, q_centroid, q_area) in quarter:
                        if child_key not in present:
                            b_cell.append(idx)
                            b_patch.append("body")
                            b_corners.append(q_corners)
                            b_centroid.append(q_centroid)
                            b_area.append(q_area)
                    continue

                # Entire neighbor region is void: full-face body patch.
                geo = self._face_geometry(key, direction)
                b_cell.append(idx)
                b_patch.append("body")
                b_corners.append(geo[0])
                b_centroid.append(geo[1])
                b_area.append(geo[2])

        def arr(x, shape):
            return np.asarray(x, dtype=np.float64).reshape(shape) if x else np.zeros(shape)

        n_i, n_b = len(owner), len(b_cell)
        return FaceSet(
            owner=np.asarray(owner, dtype=np.int64),
            neighbor=np.asarray(neighbor, dtype=np.int64),
            area_vec=arr(area_vecs, (n_i, 3)),
            centroid=arr(centroids, (n_i, 3)),
            corners=arr(corners, (n_i, 4, 3)),
            b_cell=np.asarray(b_cell, dtype=np.int64),
            b_patch=b_patch,
            b_area_vec=arr(b_area, (n_b, 3)),
            b_centroid=arr(b_centroid, (n_b, 3)),
            b_corners=arr(b_corners, (n_b, 4, 3)),
        )

    def _quarter_faces(self, key, direction: int):
        """The 4 (child_key, geometry) quarter-face slots of this face,
        keyed by the level+1 neighbor position each slot faces."""
        level, i, j, k = key
        axis, sign = divmod(direction, 2)
        step = 1 if sign else -1
        pos = [i, j, k]
        pos[axis] += step
        base = [2 * pos[0], 2 * pos[1], 2 * pos[2]]
        face_off = 0 if step > 0 else 1
        u, v = ((1, 2), (2, 0), (0, 1))[axis]

        lo, hi = self.cell_bounds(key)
        size = hi - lo
        plane = hi[axis] if step > 0 else lo[axis]
        half = size / 2.0
        cycle = [(0, 0), (1, 0), (1, 1), (0, 1)] if step > 0 else [(0, 0), (0, 1), (1, 1), (1, 0)]

        out = []
        for du in (0, 1):
            for dv in (0, 1):
                child = list(base)
                child[axis] += face_off
                child[u] += du
                child[v] += dv
                child_key = (level + 1, child[0], child[1], child[2])
                q_lo = {u: lo[u] + du * half[u], v: lo[v] + dv * half[v]}
                q_corners = np.empty((4, 3))
                for c, (cu, cv) in enumerate(cycle):
                    q_corners[c, axis] = plane
                    q_corners[c, u] = q_lo[u] + cu * half[u]
                    q_corners[c, v] = q_lo[v] + cv * half[v]
                q_centroid = q_corners.mean(axis=0)
                q_area = np.zeros(3)
                q_area[axis] = step * half[u] * half[v]
                out.append((child_key, (q_corners, q_centroid, q_area)))
        return out


# ---------------------------------------------------------------------------
# Construction and refinement


def background_mesh(spec: DomainSpec) -> HexMesh:
    """Uniform level-0 grid: counts[0]*counts[1]*counts[2] hex cells."""
    nx, ny, nz = spec.counts
    leaves = [
        (0, i, j, k) for i in range(nx) for j in range(ny) for k in range(nz)
    ]
    return HexMesh(spec, leaves)


def _cell_intersects(spec: DomainSpec, key, region: RefinementRegion,
                     body: ScalarField3 | None) -> bool:
    level, i, j, k = key
    size = spec.level_size(level)
    lo = np.asarray(spec.box_min) + np.array([i, j, k]) * size
    hi = lo + size
    if region.kind == "box":
        rlo = np.asarray(region.box_min)
        rhi = np.asarray(region.box_max)
        return bool((lo < rhi).all() and (hi > rlo).all())
    center = (lo + hi) / 2.0
    value = float(body(center[None, :])[0])
    reach = region.band_distance + 0.5 * float(np.linalg.norm(size))
    return abs(value) <= reach


def _split(key):
    level, i, j, k = key
    return [
        (level + 1, 2 * i + a, 2 * j + b, 2 * k + c)
        for a in (0, 1)
        for b in (0, 1)
        for c in (0, 1)
    ]


def refine(
    mesh: HexMesh,
    regions,
    body: ScalarField3 | None = None,
    max_level: int = MAX_LEVEL_CAP,
) -> HexMesh:
    """Split cells intersecting each region until they reach the region's
    level, then restore the 2:1 balance by propagation.

    The input mesh is left untouched; a new mesh is returned.
    """
    if not (1 <= max_level <= MAX_LEVEL_CAP):
        raise InvalidParams(f"max_level must be in 1..{MAX_LEVEL_CAP}, got {max_level}")
    regions = list(regions)
    for region in regions:
        if not isinstance(region, RefinementRegion):
            raise InvalidParams(f"not a RefinementRegion: {region!r}")
        if region.level > max_level:
            raise InvalidRegion(
                f"region demands level {region.level} beyond max_level {max_level}"
            )
        if region.kind == "surface-band" and body is None:
            raise InvalidParams("surface-band region requires a body field")

    spec = mesh.spec
    leaves = set(mesh.leaves)

    # Target refinement: process a work queue so children are re-examined.
    queue = deque(sorted(leaves))
    while queue:
        key = queue.popleft()
        if key not in leaves:
            continue
        need = 0
        for region in regions:
            if region.level > key[0] and _cell_intersects(spec, key, region, body):
                need = max(need, region.level)
        if need > key[0]:
            leaves.remove(key)
            children = _split(key)
            leaves.update(children)
            queue.extend(children)

    # 2:1 balance: any leaf more than one level coarser than a face
    # neighbor splits; repeat to fixpoint.
    while True:
        to_split = set()
        probe = HexMeshProbe(spec, leaves)
        for key in leaves:
            for direction in range(6):
                cover = probe.covering_neighbor(key, direction)
                if cover is not None and key[0] - cover[0] > 1:
                    to_split.add(cover)
        if not to_split:
            break
        for key in sorted(to_split):
            leaves.remove(key)
            leaves.update(_split(key))

    return HexMesh(spec, leaves)


class HexMeshProbe:
    """Lightweight neighbor lookup over a raw leaf set (no validation),
    used while refinement is still rebalancing."""

    def __init__(self, spec: DomainSpec, leaves: set) -> None:
        self.spec = spec
        self.leaves = leaves

    def covering_neighbor(self, key, direction: int):
        level, i, j, k = key
        axis, sign = divmod(direction, 2)
        step = 1 if sign else -1
        pos = [i, j, k]
        pos[axis] += step
        shape = self.spec.level_shape(level)
        if not (0 <= pos[axis] < shape[axis]):
            return None
        ni, nj, nk = pos
        for up in range(level, -1, -1):
            cand = (up, ni, nj, nk)
            if cand in self.leaves:
                return cand
            ni, nj, nk = ni // 2, nj // 2, nk // 2
        return None


def castellate(mesh: HexMesh, body: ScalarField3, keep_point=None) -> HexMesh:
    """Remove cells whose centers lie inside the body, then keep only the
    region face-connected to the keep point; pockets are discarded and
    newly exposed faces become the "body" patch.
    """
    spec = mesh.spec
    kp = np.asarray(keep_point if keep_point is not None else spec.keep_point, dtype=np.float64)
    lo = np.asarray(spec.box_min)
    hi = np.asarray(spec.box_max)
    if not ((kp > lo).all() and (kp < hi).all()):
        raise InvalidKeepPoint(f"keep point {tuple(kp)} lies outside the domain")
    if float(body(kp[None, :])[0]) <= 0.0:
        raise InvalidKeepPoint(f"keep point {tuple(kp)} is not in fluid (body SDF <= 0)")

    centers = mesh.cell_centers()
    values = body(centers)
    kept = values >= 0.0

    seed = mesh.find_leaf(kp)
    if seed is None or not kept[mesh._index[seed]]:
        raise InvalidKeepPoint(
            f"keep point {tuple(kp)} falls in a removed cell; move it into open fluid"
        )

    kept_keys = {key for key, ok in zip(mesh.leaves, kept) if ok}
    visited = {seed}
    queue = deque([seed])
    probe = HexMeshProbe(spec, kept_keys)
    while queue:
        key = queue.popleft()
        for direction in range(6):
            cover = probe.covering_neighbor(key, direction)
            cands = [cover] if cover is not None else []
            if cover is None:
                cands = _fine_neighbors_in(kept_keys, spec, key, direction)
            for cand in cands:
                if cand not in visited:
                    visited.add(cand)
                    queue.append(cand)
    return HexMesh(spec, visited)


def _fine_neighbors_in(leaves: set, spec: DomainSpec, key, direction: int):
    level, i, j, k = key
    axis, sign = divmod(direction, 2)
    step = 1 if sign else -1
    pos = [i, j, k]
    pos[axis] += step
    shape = spec.level_shape(level)
    if not (0 <= pos[axis] < shape[axis]):
        return []
    base = [2 * pos[0], 2 * pos[1], 2 * pos[2]]
    face_off = 0 if step > 0 else 1
    other = [a for a in range(3) if a != axis]
    out = []
    for u in (0, 1):
        for v in (0, 1):
            child = list(base)
            child[axis] += face_off
            child[other[0]] += u
            child[other[1]] += v
            cand = (level + 1, child[0], child[1], child[2])
            if cand in leaves:
                out.append(cand)
    return out


# ---------------------------------------------------------------------------
# Quality checks


@dataclass(frozen=True)
class QualityThresholds:
    openness: float = 1e-6
    aspect: float = 1000.0
    face_area_floor: float = 1e-13
    volume_floor: float = 1e-13
    non_orthogonality_deg: float = 70.0
    skewness: float = 4.0
    pyramid_floor: float = 1e-13


@dataclass(frozen=True)
class QualityCheck:
    name: str
    measured: float
    threshold: float
    passed: bool


@dataclass(frozen=True)
class QualityReport:
    checks: tuple
    overall_pass: bool
    cell_count: int
    face_count: int

    def check(self, name: str) -> QualityCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_jsonable(self) -> dict:
        return {
            "checks": [
                {
                    "name": c.name,
                    "measured": c.measured,
                    "threshold": c.threshold,
                    "pass": c.passed,
                }
                for c in self.checks
            ],
            "overall_pass": self.overall_pass,
            "cell_count": self.cell_count,
            "face_count": self.face_count,
        }


def _pyramid_volumes(corners: np.ndarray, apex: np.ndarray) -> np.ndarray:
    """Signed volume of the pyramid from apex to each quad face, the quad
    split into triangles (0,1,2) and (0,2,3); positive when the corner
    winding's right-hand normal points away from the apex."""
    v = corners - apex[:, None, :]
    t1 = np.einsum("ij,ij->i", np.cross(v[:, 0], v[:, 1]), v[:, 2])
    t2 = np.einsum("ij,ij->i", np.cross(v[:, 0], v[:, 2]), v[:, 3])
    return (t1 + t2) / 6.0


def check_mesh(mesh: HexMesh, thresholds: QualityThresholds = QualityThresholds()) -> QualityReport:
    """The ten-check quality suite.  Failures are report rows, not errors."""
    faces = mesh.faces()
    centers = mesh.cell_centers()
    volumes = mesh.cell_volumes()
    n_cells = mesh.cell_count

    # Openness: resultant of outward area vectors over total area, per cell.
    sum_vec = np.zeros((n_cells, 3))
    sum_mag = np.zeros(n_cells)
    if faces.internal_count:
        np.add.at(sum_vec, faces.owner, faces.area_vec)
        np.add.at(sum_vec, faces.neighbor, -faces.area_vec)
        mags = np.linalg.norm(faces.area_vec, axis=1)
        np.add.at(sum_mag, faces.owner, mags)
        np.add.at(sum_mag, faces.neighbor, mags)
    if faces.boundary_count:
        np.add.at(sum_vec, faces.b_cell, faces.b_area_vec)
        np.add.at(sum_mag, faces.b_cell, np.linalg.norm(faces.b_area_vec, axis=1))
    openness = float((np.linalg.norm(sum_vec, axis=1) / sum_mag).max())

    # Aspect ratio from cell edge extents.
    aspects = []
    for key in mesh.leaves:
        size = mesh.spec.level_size(key[0])
        aspects.append(float(size.max() / size.min()))
    max_aspect = float(max(aspects))

    all_areas = np.concatenate(
        [
            np.linalg.norm(faces.area_vec, axis=1) if faces.internal_count else np.zeros(0),
            np.linalg.norm(faces.b_area_vec, axis=1) if faces.boundary_count else np.zeros(0),
        ]
    )
    min_area = float(all_areas.min())
    max_area = float(all_areas.max())
    min_vol = float(volumes.min())
    max_vol = float(volumes.max())

    if faces.internal_count:
        d = centers[faces.neighbor] - centers[faces.owner]
        d_norm = np.linalg.norm(d, axis=1)
        a_norm = np.linalg.norm(faces.area_vec, axis=1)
        cosang = np.einsum("ij,ij->i", d, faces.area_vec) / (d_norm * a_norm)
        non_ortho = float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))).max())

        # Skewness: face centroid vs the center line's face-plane crossing.
        n_hat = faces.area_vec / a_norm[:, None]
        t = np.einsum(
            "ij,ij->i", faces.centroid - centers[faces.owner], n_hat
        ) / np.einsum("ij,ij->i", d, n_hat)
        crossing = centers[faces.owner] + t[:, None] * d
        skew = float(
            (np.linalg.norm(faces.centroid - crossing, axis=1) / d_norm).max()
        )

        pyr_owner = _pyramid_volumes(faces.corners, centers[faces.owner])
        pyr_neigh = -_pyramid_volumes(faces.corners, centers[faces.neighbor])
        pyramids = [float(pyr_owner.min()), float(pyr_neigh.min())]
    else:
        non_ortho = 0.0
        skew = 0.0
        pyramids = []
    if faces.boundary_count:
        pyramids.append(float(_pyramid_volumes(faces.b_corners, centers[faces.b_cell]).min()))
    min_pyramid = float(min(pyramids))

    t = thresholds
    rows = [
        QualityCheck("boundary_openness", openness, t.openness, openness < t.openness),
        QualityCheck("max_aspect_ratio", max_aspect, t.aspect, max_aspect <= t.aspect),
        QualityCheck("min_face_area", min_area, t.face_area_floor, min_area > t.face_area_floor),
        QualityCheck("max_face_area", max_area, mesh.spec.volume(), max_area <= mesh.spec.volume()),
        QualityCheck("min_volume", min_vol, t.volume_floor, min_vol > t.volume_floor),
        QualityCheck("max_volume", max_vol, mesh.spec.volume(), max_vol <= mesh.spec.volume()),
        QualityCheck(
            "mesh_non_orthogonality",
            non_ortho,
            t.non_orthogonality_deg,
            non_ortho <= t.non_orthogonality_deg,
        ),
        QualityCheck("face_pyramids", min_pyramid, t.pyramid_floor, min_pyramid > t.pyramid_floor),
        QualityCheck("max_skewness", skew, t.skewness, skew <= t.skewness),
        # No coupled (cyclic/processor) patches exist in this mesher, so the
        # point-match check passes vacuously with zero mismatch.
        QualityCheck("coupled_point_match", 0.0, t.openness, True),
    ]
    return QualityReport(
        checks=tuple(rows),
        overall_pass=all(r.passed for r in rows),
        cell_count=n_cells,
        face_count=faces.internal_count + faces.boundary_count,
    )


def save_quality_report(report: QualityReport, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_jsonable(), fh, sort_keys=True, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write quality report {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# VTK legacy ASCII I/O (canonical form)


def vtk_bytes(mesh: HexMesh) -> bytes:
    """Canonical VTK legacy ASCII unstructured grid with a 'level' cell
    array.  Points are welded on the exact finest-level lattice and listed
    in first-use order, so re-export is byte-identical."""
    spec = mesh.spec
    max_level = max(key[0] for key in mesh.leaves)
    step = spec.level_size(max_level)
    lo = np.asarray(spec.box_min)

    point_ids: dict = {}
    points: list = []
    cells: list = []
    for level, i, j, k in mesh.leaves:
        scale = 1 << (max_level - level)
        base = (i * scale, j * scale, k * scale)
        corner_ids = []
        # VTK hexahedron: bottom quad counterclockwise, then top quad.
        for dk in (0, 1):
            for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                lattice = (base[0] + du * scale, base[1] + dv * scale, base[2] + dk * scale)
                pid = point_ids.get(lattice)
                if pid is None:
                    pid = len(points)
                    point_ids[lattice] = pid
                    points.append(lo + np.asarray(lattice) * step)
                corner_ids.append(pid)
        cells.append(corner_ids)

    title = (
        "drivedesk-hexmesh box="
        + " ".join(repr(v) for v in (*spec.box_min, *spec.box_max))
        + " counts=" + " ".join(str(c) for c in spec.counts)
        + " keep=" + " ".join(repr(v) for v in spec.keep_point)
    )
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {len(points)} double",
    ]
    lines.extend(" ".join(repr(float(c)) for c in p) for p in points)
    lines.append(f"CELLS {len(cells)} {len(cells) * 9}")
    lines.extend("8 " + " ".join(str(pid) for pid in cell) for cell in cells)
    lines.append(f"CELL_TYPES {len(cells)}")
    lines.extend("12" for _ in cells)
    lines.append(f"CELL_DATA {len(cells)}")
    lines.append("SCALARS level int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(key[0]) for key in mesh.leaves)
    return ("\n".join(lines) + "\n").encode("ascii")


def export_vtk(mesh: HexMesh, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(vtk_bytes(mesh))
    except OSError as exc:
        raise IoError(f"cannot write VTK file {path}: {exc}") from exc


def read_vtk(path) -> HexMesh:
    """Read a mesh written by export_vtk (canonical form only)."""
    try:
        with open(path, encoding="ascii") as fh:
            lines = fh.read().splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise IoError(f"cannot read VTK file {path}: {exc}") from exc
    try:
        return _parse_vtk(lines, path)
    except (IndexError, ValueError) as exc:
        raise IoError(f"VTK file {path}: truncated or malformed: {exc}") from exc


def _parse_vtk(lines, origin) -> HexMesh:
    def fail(msg):
        raise IoError(f"VTK file {origin}: {msg}")

    if len(lines) < 6 or not lines[0].startswith("# vtk DataFile"):
        fail("missing VTK header")
    title = lines[1]
    if not title.startswith("drivedesk-hexmesh box="):
        fail("not a drivedesk hexmesh (unrecognized title line)")
    try:
        after = title.split("box=", 1)[1]
        box_part, rest = after.split(" counts=")
        counts_part, keep_part = rest.split(" keep=")
        box_vals = [float(v) for v in box_part.split()]
        counts = tuple(int(v) for v in counts_part.split())
        keep = tuple(float(v) for v in keep_part.split())
        spec = DomainSpec(tuple(box_vals[:3]), tuple(box_vals[3:]), counts, keep)
    except (ValueError, IndexError, InvalidParams, InvalidKeepPoint) as exc:
        fail(f"malformed title metadata: {exc}")
    if lines[2] != "ASCII" or lines[3] != "DATASET UNSTRUCTURED_GRID":
        fail("expected ASCII unstructured grid")

    pos = 4
    tag = lines[pos].split()
    if tag[0] != "POINTS":
        fail("expected POINTS section")
    n_points = int(tag[1])
    pos += 1
    points = np.array(
        [[float(v) for v in lines[pos + n].split()] for n in range(n_points)]
    )
    pos += n_points

    tag = lines[pos].split()
    if tag[0] != "CELLS":
        fail("expected CELLS section")
    n_cells = int(tag[1])
    pos += 1
    cells = []
    for n in range(n_cells):
        row = [int(v) for v in lines[pos + n].split()]
        if row[0] != 8 or len(row) != 9:
            fail(f"cell {n} is not a hexahedron record")
        cells.append(row[1:])
    pos += n_cells

    tag = lines[pos].split()
    if tag[0] != "CELL_TYPES":
        fail("expected CELL_TYPES section")
    pos += 1
    for n in range(n_cells):
        if lines[pos + n].strip() != "12":
            fail(f"cell {n} has non-hexahedron type")
    pos += n_cells

    if lines[pos].split()[0] != "CELL_DATA" or lines[pos + 1].split()[:2] != ["SCALARS", "level"]:
        fail("expected CELL_DATA level scalars")
    pos += 3
    levels = [int(lines[pos + n]) for n in range(n_cells)]

    lo = np.asarray(spec.box_min)
    keys = []
    for corner_ids, level in zip(cells, levels):
        pts = points[corner_ids]
        center = pts.mean(axis=0)
        size = spec.level_size(level)
        idx = np.round((center - lo) / size - 0.5).astype(int)
        key = (level, int(idx[0]), int(idx[1]), int(idx[2]))
        expected = lo + (idx + 0.5) * size
        if not np.allclose(center, expected, rtol=0, atol=1e-9 * float(size.max())):
            fail(f"cell center {center} is off the level-{level} lattice")
        keys.append(key)
    try:
        return HexMesh(spec, keys)
    except InvalidParams as exc:
        raise IoError(f"VTK file {origin}: invalid mesh: {exc}") from exc
