"""Triangle meshes in unit-sphere model units, plus ASCII STL round-trip."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..errors import InvalidGeometry, IoError

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class Transform:
    """Normalization map y = (x - translation) * scale."""

    scale: float
    translation: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.translation) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) / self.scale + self.translation


class TriMesh:
    """Indexed triangle soup.

    vertices: (V, 3) float64. triangles: (T, 3) int64 indices into vertices.
    Both arrays may be empty (a field with no zero crossing meshes to nothing).
    """

    __slots__ = ("vertices", "triangles")

    def __init__(self, vertices, triangles):
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise InvalidGeometry("triangle index out of range")
        self.vertices = v
        self.triangles = t

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_corners(self) -> np.ndarray:
        """(T, 3, 3) corner positions."""
        return self.vertices[self.triangles]

    def triangle_areas(self) -> np.ndarray:
        c = self.triangle_corners()
        cross = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def validate(self) -> None:
        """Raise InvalidGeometry on empty input or degenerate triangles."""
        if self.is_empty:
            raise InvalidGeometry("empty mesh")
        areas = self.triangle_areas()
        if areas.min() <= DEGENERATE_AREA:
            raise InvalidGeometry(
                f"degenerate triangle, area {areas.min():.3e}"
            )

    def directed_edges(self) -> np.ndarray:
        """(3T, 2) directed edges in winding order."""
        t = self.triangles
        return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])

    def boundary_edge_count(self) -> int:
        """Edges not shared by exactly two triangles."""
        e = np.sort(self.directed_edges(), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return int((counts != 2).sum())

    def is_watertight(self) -> bool:
        """Every undirected edge shared by exactly 2 triangles, with
        opposite winding (orientable closed surface)."""
        if self.is_empty:
            return False
        d = self.directed_edges()
        # opposite winding means no directed edge repeats
        _, dcounts = np.unique(d, axis=0, return_counts=True)
        if dcounts.max() > 1:
            return False
        return self.boundary_edge_count() == 0

    def euler_characteristic(self) -> int:
        e = np.sort(self.directed_edges(), axis=1)
        n_edges = len(np.unique(e, axis=0))
        n_verts = len(np.unique(self.triangles))
        return n_verts - n_edges + len(self.triangles)


def normalize_to_unit_sphere(mesh: TriMesh) -> tuple[TriMesh, Transform]:
    """Center on the bounding-box midpoint and scale so max vertex norm is 1."""
    if mesh.is_empty:
        raise InvalidGeometry("cannot normalize an empty mesh")
    v = mesh.vertices
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = float(np.linalg.norm(v - center, axis=1).max())
    if radius == 0.0:
        raise InvalidGeometry("mesh collapses to a point")
    tf = Transform(scale=1.0 / radius, translation=center)
    return TriMesh(tf.apply(v), mesh.triangles), tf


def _canonical_triangle_order(mesh: TriMesh) -> np.ndarray:
    """Row order keyed on corner coordinates, not vertex indices.

    Two meshes describing the same set of triangles — even after the
    vertex table was renumbered, e.g. by an STL round trip — sort to
    the same sequence, so surface sampling sees identical geometry.
    """
    key = mesh.triangle_corners().reshape(len(mesh), 9)
    return np.lexsort(key.T[::-1])


def sample_surface(mesh: TriMesh, n: int, seed: int = 0) -> np.ndarray:
    """n points drawn area-uniformly from the surface, bit-deterministic.

    Triangles are visited in canonical (sorted) order so a permutation of
    the triangle list — or a renumbering of the vertex table — yields the
    same point set.
    """
    if mesh.is_empty:
        raise InvalidGeometry("cannot sample an empty mesh")
    order = _canonical_triangle_order(mesh)
    corners = mesh.triangle_corners()[order]
    areas = mesh.triangle_areas()[order]
    total = areas.sum()
    if total <= 0:
        raise InvalidGeometry("zero-area mesh")
    rng = np.random.default_rng(seed)
    cum = np.cumsum(areas)
    picks = np.searchsorted(cum, rng.random(n) * total, side="right")
    picks = np.minimum(picks, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))[:, None]
    r2 = rng.random(n)[:, None]
    a, b, c = (corners[picks, i] for i in range(3))
    return (1 - r1) * a + r1 * (1 - r2) * b + r1 * r2 * c


def chamfer_distance(a: TriMesh, b: TriMesh, samples: int = 20000,
                     seed: int = 0) -> float:
    """Symmetric mean nearest-point distance between sampled surfaces.

    Both meshes are sampled with the same seed, so the metric is exactly
    symmetric and exactly zero for identical meshes.
    """
    if a.is_empty or b.is_empty:
        raise InvalidGeometry("chamfer distance needs two non-empty meshes")
    pa = sample_surface(a, samples, seed)
    pb = sample_surface(b, samples, seed)
    d_ab = cKDTree(pb).query(pa, k=1)[0]
    d_ba = cKDTree(pa).query(pb, k=1)[0]
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def _fmt(x: float) -> str:
    # repr of a python float is the shortest string that round-trips,
    # which is what makes write -> read -> write byte-identical
    return repr(float(x))


def stl_bytes(mesh: TriMesh, name: str = "drivedesk") -> bytes:
    """ASCII STL, one solid per file, facets in triangle order."""
    corners = mesh.triangle_corners()
    normals = np.cross(corners[:, 1] - corners[:, 0],
                       corners[:, 2] - corners[:, 0])
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        normals = np.where(lengths > 0, normals / lengths, 0.0)
    lines = [f"solid {name}"]
    for tri, nrm in zip(corners, normals):
        lines.append(
            f"  facet normal {_fmt(nrm[0])} {_fmt(nrm[1])} {_fmt(nrm[2])}"
        )
        lines.append("    outer loop")
        for v in tri:
            lines.append(f"      vertex {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    return ("\n".join(lines) + "\n").encode("ascii")


def write_stl(mesh: TriMesh, path, name: str = "drivedesk") -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(stl_bytes(mesh, name))
    except OSError as exc:
        raise IoError(f"cannot write STL to {path}: {exc}") from exc


def read_stl(path) -> TriMesh:
    """Parse ASCII STL; vertices welded on exact coordinate equality."""
    try:
        with open(path, "rb") as fh:
            text = fh.read().decode("ascii")
    except OSError as exc:
        raise IoError(f"cannot read STL from {path}: {exc}") from exc
    return parse_stl(text)


def parse_stl(text: str) -> TriMesh:
    vert_ids: dict[tuple[float, float, float], int] = {}
    vertices: list[tuple[float, float, float]] = []
    triangles: list[list[int]] = []
    current: list[int] = []
    for raw in text.splitlines():
        parts = raw.split()
        if not parts:
            continue
        if parts[0] == "vertex":
            if len(parts) != 4:
                raise IoError(f"malformed vertex record: {raw!r}")
            key = (float(parts[1]), float(parts[2]), float(parts[3]))
            idx = vert_ids.get(key)
            if idx is None:
                idx = len(vertices)
                vert_ids[key] = idx
                vertices.append(key)
            current.append(idx)
        elif parts[0] == "endfacet":
            if len(current) != 3:
                raise IoError("facet without exactly 3 vertices")
            triangles.append(current)
            current = []
    if current:
        raise IoError("unterminated facet")
    if not vertices:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.array(vertices, dtype=np.float64),
                   np.array(triangles, dtype=np.int64))
