"""Marching cubes over [-1,1]^3 with a constructed 256-case table.

The per-case triangulations are not transcribed from a reference listing;
they are derived at import time. For each sign pattern the surface's
intersection with every cube face is reduced to chords between crossing
edges, chords are stitched into closed loops, and each loop is fanned into
triangles. Faces with diagonally opposite inside corners are ambiguous;
they are always resolved the same way (the inside corners stay separated),
so the two cells sharing a face agree on its chords and the global mesh is
watertight whenever the surface is closed and clear of the grid boundary.

Two details keep that watertightness exact rather than approximate:

* Corner classification is strict: a corner is inside iff its value < 0,
  so exact zeros count as outside everywhere and no cell pair disagrees.
* Each loop is fanned from an apex chosen so that no fan diagonal lies in
  a cube face. A diagonal inside a shared face would coincide with the
  neighboring cell's geometry and produce an edge used four times; an
  apex with no such diagonal exists for every loop of every case (checked
  exhaustively at import).
"""
from __future__ import annotations

import numpy as np

from .fields import ScalarField3
from .trimesh import TriMesh

# corner k has offsets CORNERS[k]; bit k of a case index means "inside"
CORNERS = np.array([
    (0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0),
    (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1),
], dtype=np.int64)

EDGES = [
    (0, 1), (1, 2), (2, 3), (3, 0),
    (4, 5), (5, 6), (6, 7), (7, 4),
    (0, 4), (1, 5), (2, 6), (3, 7),
]

# cyclic corner order per face; consecutive corners are cube edges
FACES = [
    (0, 1, 2, 3),   # z = 0
    (4, 5, 6, 7),   # z = 1
    (0, 1, 5, 4),   # y = 0
    (3, 2, 6, 7),   # y = 1
    (0, 3, 7, 4),   # x = 0
    (1, 2, 6, 5),   # x = 1
]

_EDGE_BY_CORNERS = {frozenset(pair): i for i, pair in enumerate(EDGES)}

# keep interpolated vertices off the grid corners so triangle areas stay
# above the degeneracy floor even when the surface grazes a corner
EDGE_T_MIN = 1e-3


def _face_chords(inside: list[bool], face: tuple[int, ...]) -> list[tuple[int, int]]:
    edge_ids = [_EDGE_BY_CORNERS[frozenset((face[i], face[(i + 1) % 4]))]
                for i in range(4)]
    pat = [inside[c] for c in face]
    k = sum(pat)
    if k in (0, 4):
        return []
    if k in (1, 3):
        t = pat.index(True) if k == 1 else pat.index(False)
        return [(edge_ids[(t - 1) % 4], edge_ids[t])]
    idx = [i for i, p in enumerate(pat) if p]
    if idx in ([0, 1], [1, 2], [2, 3], [0, 3]):
        t = 3 if idx == [0, 3] else idx[0]
        return [(edge_ids[(t - 1) % 4], edge_ids[(t + 1) % 4])]
    # diagonal pattern: always keep the two inside corners separated
    t0, t1 = idx
    return [(edge_ids[(t0 - 1) % 4], edge_ids[t0]),
            (edge_ids[(t1 - 1) % 4], edge_ids[t1])]


def _loops_from_chords(chords: list[tuple[int, int]]) -> list[list[int]]:
    adj: dict[int, list[int]] = {}
    for a, b in chords:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    for v, nb in adj.items():
        assert len(nb) == 2, f"crossing edge {v} has degree {len(nb)}"
    loops = []
    seen: set[int] = set()
    for start in sorted(adj):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        prev, cur = start, min(adj[start])
        while cur != start:
            loop.append(cur)
            seen.add(cur)
            a, b = adj[cur]
            prev, cur = cur, (b if a == prev else a)
        loops.append(loop)
    return loops


_EDGE_FACES = [
    frozenset(fi for fi, face in enumerate(FACES)
              if a in face and b in face
              and (abs(face.index(a) - face.index(b)) in (1, 3)))
    for a, b in EDGES
]


def _rotate_to_clean_apex(loop: list[int]) -> list[int]:
    """Start the loop at a vertex whose fan diagonals avoid all faces."""
    n = len(loop)
    if n == 3:
        return loop
    for a in range(n):
        ok = True
        for i in range(n):
            if i == a or (i - a) % n == 1 or (a - i) % n == 1:
                continue
            if _EDGE_FACES[loop[a]] & _EDGE_FACES[loop[i]]:
                ok = False
                break
        if ok:
            return loop[a:] + loop[:a]
    raise AssertionError(f"no clean fan apex for loop {loop}")


def _orient_loop(loop: list[int], inside: list[bool]) -> list[int]:
    """Order the loop so its vector area points toward the outside."""
    mids = {e: 0.5 * (CORNERS[EDGES[e][0]] + CORNERS[EDGES[e][1]])
            for e in loop}
    verts = [mids[e] for e in loop]
    normal = np.zeros(3)
    for i in range(len(verts)):
        normal += np.cross(verts[i], verts[(i + 1) % len(verts)])
    score = 0.0
    for e in loop:
        a, b = EDGES[e]
        outward = (CORNERS[b] - CORNERS[a]) if inside[a] else (CORNERS[a] - CORNERS[b])
        score += float(normal @ outward)
    assert abs(score) > 1e-9, f"degenerate orientation score on loop {loop}"
    return loop if score > 0 else loop[::-1]


def _build_tri_table() -> list[np.ndarray]:
    table = []
    for case in range(256):
        inside = [(case >> k) & 1 == 1 for k in range(8)]
        chords: list[tuple[int, int]] = []
        for face in FACES:
            chords.extend(_face_chords(inside, face))
        tris = []
        for loop in _loops_from_chords(chords):
            loop = _rotate_to_clean_apex(_orient_loop(loop, inside))
            for i in range(1, len(loop) - 1):
                tris.append((loop[0], loop[i], loop[i + 1]))
        table.append(np.array(tris, dtype=np.int64).reshape(-1, 3))
    return table


TRI_TABLE = _build_tri_table()

# local edge -> (axis of travel, offset of its low corner)
EDGE_AXIS = np.empty(12, dtype=np.int64)
EDGE_OFFSET = np.empty((12, 3), dtype=np.int64)
for _e, (_a, _b) in enumerate(EDGES):
    _lo = np.minimum(CORNERS[_a], CORNERS[_b])
    _diff = CORNERS[_a] != CORNERS[_b]
    EDGE_AXIS[_e] = int(np.flatnonzero(_diff)[0])
    EDGE_OFFSET[_e] = _lo


def _eval_grid(field: ScalarField3, axis: np.ndarray) -> np.ndarray:
    p = len(axis)
    yz = np.stack(np.meshgrid(axis, axis, indexing="ij"), axis=-1).reshape(-1, 2)
    values = np.empty((p, p, p), dtype=np.float64)
    pts = np.empty((len(yz), 3), dtype=np.float64)
    pts[:, 1:] = yz
    for i, x in enumerate(axis):
        pts[:, 0] = x
        values[i] = field(pts).reshape(p, p)
    return values


def marching_cubes(field: ScalarField3, resolution: int) -> TriMesh:
    """Extract the zero level set on a resolution^3 cell grid over [-1,1]^3.

    All-positive or all-negative fields yield an empty mesh, not an error.
    """
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    r = resolution
    axis = np.linspace(-1.0, 1.0, r + 1)
    values = _eval_grid(field, axis)
    return _extract(values, axis)


def _extract(values: np.ndarray, axis: np.ndarray) -> TriMesh:
    p = len(axis)
    r = p - 1
    inside = values < 0.0
    cases = np.zeros((r, r, r), dtype=np.int16)
    for bit, (dx, dy, dz) in enumerate(CORNERS):
        cases |= inside[dx:dx + r, dy:dy + r, dz:dz + r].astype(np.int16) << bit

    active = (cases != 0) & (cases != 255)
    if not active.any():
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    cells = np.argwhere(active)
    cell_cases = cases[active]

    order = np.argsort(cell_cases, kind="stable")
    cells = cells[order]
    cell_cases = cell_cases[order]
    splits = np.flatnonzero(np.diff(cell_cases)) + 1
    groups = np.split(np.arange(len(cells)), splits)

    chunks = []
    for grp in groups:
        case = int(cell_cases[grp[0]])
        local = TRI_TABLE[case]            # (t, 3) local edge ids
        if len(local) == 0:
            continue
        sub = cells[grp]                   # (m, 3)
        base = sub[:, None, None, :] + EDGE_OFFSET[local][None]   # (m, t, 3, 3)
        ax = EDGE_AXIS[local][None]                               # (1, t, 3)
        lin = ((ax * p + base[..., 0]) * p + base[..., 1]) * p + base[..., 2]
        chunks.append(lin.reshape(-1, 3))
    edge_tris = np.concatenate(chunks)

    uniq, tri_idx = np.unique(edge_tris, return_inverse=True)
    triangles = tri_idx.reshape(-1, 3)

    ax_id, rem = np.divmod(uniq, p * p * p)
    ix, rem = np.divmod(rem, p * p)
    iy, iz = np.divmod(rem, p)
    v_lo = values[ix, iy, iz]
    v_hi = values[ix + (ax_id == 0), iy + (ax_id == 1), iz + (ax_id == 2)]
    t = np.clip(v_lo / (v_lo - v_hi), EDGE_T_MIN, 1.0 - EDGE_T_MIN)

    h = axis[1] - axis[0]
    verts = np.stack([axis[ix], axis[iy], axis[iz]], axis=1)
    verts[np.arange(len(uniq)), ax_id] += t * h
    return TriMesh(verts, triangles)
