"""Isosurface extraction from voxel occupancy, plus mesh utilities.

Marching cubes over the lattice of voxel centers. The 256-entry case
table is generated at import time by walking each cube face: crossings on
a face's edge cycle (traversed counterclockwise as seen from outside the
cube) are paired entry-to-next-exit, which both orients every surface
loop consistently (triangles wind counterclockwise seen from outside the
occupied region) and resolves the ambiguous saddle faces the same way on
both sides of a shared face, so meshes are watertight by construction.
Saddle faces cut off the inside corners (diagonally occupied corners stay
disconnected).

A cube corner c in [0, 8) sits at offset ((c >> 0) & 1, (c >> 1) & 1,
(c >> 2) & 1) along (x, y, z); a corner is inside when its value is
strictly above the iso level. Vertices interpolate linearly along
crossed edges and are shared between cells through global edge keys.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as _expit

from .errors import ContractError, DomainError, MeshFormatError
from .geometry import AxisAlignedBox
from .volumes import ObjectVolume

_CORNER_OFFSETS = np.array([[c & 1, (c >> 1) & 1, (c >> 2) & 1] for c in range(8)])

# the 12 cube edges as corner pairs (lower corner first along the edge axis)
_EDGES: list[tuple[int, int]] = []
for _a in range(8):
    for _bit in range(3):
        _b = _a | (1 << _bit)
        if _b != _a and (_a, _b) not in _EDGES:
            _EDGES.append((_a, _b))
_EDGES.sort()
_EDGE_ID = {e: i for i, e in enumerate(_EDGES)}
_EDGE_AXIS = [int(np.flatnonzero(_CORNER_OFFSETS[b] - _CORNER_OFFSETS[a])[0])
              for a, b in _EDGES]


def _face_cycles():
    """Corner cycles of the 6 faces, counterclockwise from outside."""
    cycles = []
    for axis in range(3):
        for side in (0, 1):
            u, w = (axis + 1) % 3, (axis + 2) % 3
            cyc = []
            for uu, ww in ((0, 0), (1, 0), (1, 1), (0, 1)):
                off = [0, 0, 0]
                off[axis] = side
                off[u] = uu
                off[w] = ww
                cyc.append(off[0] | (off[1] << 1) | (off[2] << 2))
            if side == 0:
                cyc.reverse()  # outward normal flips, keep CCW from outside
            cycles.append(cyc)
    return cycles


_FACE_CYCLES = _face_cycles()


def _case_triangles(config: int) -> list[tuple[int, int, int]]:
    inside = [(config >> c) & 1 for c in range(8)]
    # directed surface segments on each face: entry edge -> next exit edge
    segments = {}
    for cyc in _FACE_CYCLES:
        crossings = []
        for j in range(4):
            a, b = cyc[j], cyc[(j + 1) % 4]
            if inside[a] and not inside[b]:
                crossings.append(("exit", _EDGE_ID[(min(a, b), max(a, b))]))
            elif not inside[a] and inside[b]:
                crossings.append(("entry", _EDGE_ID[(min(a, b), max(a, b))]))
        n = len(crossings)
        for j, (kind, edge) in enumerate(crossings):
            if kind != "entry":
                continue
            for step in range(1, n):
                kind2, edge2 = crossings[(j + step) % n]
                if kind2 == "exit":
                    segments[edge] = edge2
                    break
    # chain segments into closed loops, then fan-triangulate
    triangles = []
    remaining = dict(segments)
    while remaining:
        start = min(remaining)
        loop = [start]
        nxt = remaining.pop(start)
        while nxt != start:
            loop.append(nxt)
            nxt = remaining.pop(nxt)
        for i in range(1, len(loop) - 1):
            triangles.append((loop[0], loop[i], loop[i + 1]))
    return triangles


_CASE_TABLE = [_case_triangles(cfg) for cfg in range(256)]


@dataclass
class TriangleMesh:
    """Indexed triangle list; faces wind counterclockwise seen from outside."""

    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray     # (F, 3) int64

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise ContractError("face indices out of range")


def marching_cubes(values: np.ndarray, iso: float,
                   box: AxisAlignedBox | None = None) -> TriangleMesh:
    """Extract the iso-surface of a scalar grid.

    values is (D, H, W) indexed (z, y, x); lattice points sit at the voxel
    centers of `box` (or at integer (x, y, z) coordinates when box is
    None). Inside means strictly greater than iso.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 3 or min(v.shape) < 2:
        raise ContractError(f"values must be (D, H, W) with every dim >= 2, got {v.shape}")
    d, h, w = v.shape
    if box is not None:
        cell = box.size() / np.array([w, h, d], dtype=np.float64)
        origin = box.min_corner + 0.5 * cell
    else:
        cell = np.ones(3)
        origin = np.zeros(3)

    inside = v > iso
    cfg = np.zeros((d - 1, h - 1, w - 1), dtype=np.uint8)
    for c in range(8):
        dx, dy, dz = c & 1, (c >> 1) & 1, (c >> 2) & 1
        cfg |= (inside[dz:dz + d - 1, dy:dy + h - 1, dx:dx + w - 1]
                .astype(np.uint8) << c)
    active = np.argwhere((cfg != 0) & (cfg != 255))

    vert_ids: dict[tuple[int, int, int, int], int] = {}
    positions: list[np.ndarray] = []
    faces: list[tuple[int, int, int]] = []

    def vertex_on_edge(edge: int, base_xyz) -> int:
        a, b = _EDGES[edge]
        axis = _EDGE_AXIS[edge]
        ga = base_xyz + _CORNER_OFFSETS[a]
        key = (axis, int(ga[0]), int(ga[1]), int(ga[2]))
        found = vert_ids.get(key)
        if found is not None:
            return found
        gb = base_xyz + _CORNER_OFFSETS[b]
        fa = v[ga[2], ga[1], ga[0]]
        fb = v[gb[2], gb[1], gb[0]]
        t = np.clip((iso - fa) / (fb - fa), 0.0, 1.0)
        pos = origin + cell * (ga + t * (gb - ga))
        vert_ids[key] = len(positions)
        positions.append(pos)
        return vert_ids[key]

    for iz, iy, ix in active:
        base = np.array([ix, iy, iz])
        for e0, e1, e2 in _CASE_TABLE[cfg[iz, iy, ix]]:
            faces.append((vertex_on_edge(e0, base),
                          vertex_on_edge(e1, base),
                          vertex_on_edge(e2, base)))

    if not positions:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(np.array(positions), np.array(faces, dtype=np.int64))


def extract_mesh(volume: ObjectVolume, iso: float = 0.5) -> TriangleMesh:
    """Mesh of a volume's occupancy surface (sigmoid of the stored logit)."""
    if not 0 < iso < 1:
        raise DomainError("iso level must lie in (0, 1) for occupancy meshes")
    return marching_cubes(_expit(volume.occupancy_logit), iso, volume.box)


def mesh_volume(mesh: TriangleMesh) -> float:
    """Signed enclosed volume (positive for outward-wound closed meshes)."""
    if mesh.faces.size == 0:
        return 0.0
    tri = mesh.vertices[mesh.faces]
    return float(np.linalg.det(tri).sum() / 6.0)


def mesh_aabb(mesh: TriangleMesh) -> AxisAlignedBox:
    if len(mesh.vertices) == 0:
        raise ContractError("empty mesh has no bounding box")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    # guard zero-extent axes so the box stays valid
    pad = np.maximum(1e-12, 1e-12 * np.abs(hi))
    return AxisAlignedBox(lo - pad, hi + pad)


def is_watertight(mesh: TriangleMesh) -> bool:
    """Every edge shared by exactly two faces with opposite direction."""
    if mesh.faces.size == 0:
        return False
    counts: dict[tuple[int, int], int] = {}
    for a, b, c in mesh.faces:
        for i, j in ((a, b), (b, c), (c, a)):
            if i == j:
                return False
            counts[(int(i), int(j))] = counts.get((int(i), int(j)), 0) + 1
    for (i, j), n in counts.items():
        if n != 1 or counts.get((j, i), 0) != 1:
            return False
    return True


def export_obj(path, mesh: TriangleMesh) -> None:
    """Write a Wavefront OBJ file (vertices and triangular faces only)."""
    with open(path, "w") as f:
        f.write(f"# {len(mesh.vertices)} vertices, {len(mesh.faces)} faces\n")
        for x, y, z in mesh.vertices:
            f.write(f"v {x:.9g} {y:.9g} {z:.9g}\n")
        for a, b, c in mesh.faces:
            f.write(f"f {a + 1} {b + 1} {c + 1}\n")


def load_obj(path) -> TriangleMesh:
    """Read an OBJ file written by export_obj (or any v/f-only subset).

    Faces may use the v/vt/vn slash syntax; only vertex indices are kept.
    Polygons are fan-triangulated. Negative (relative) indices are not
    supported.
    """
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            try:
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise MeshFormatError(f"{path}:{ln}: vertex needs 3 coordinates")
                    vertices.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        if i <= 0:
                            raise MeshFormatError(
                                f"{path}:{ln}: face indices must be positive")
                        idx.append(i - 1)
                    if len(idx) < 3:
                        raise MeshFormatError(f"{path}:{ln}: face needs >= 3 vertices")
                    for i in range(1, len(idx) - 1):
                        faces.append((idx[0], idx[i], idx[i + 1]))
            except ValueError as e:
                raise MeshFormatError(f"{path}:{ln}: {e}") from e
    face_arr = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if face_arr.size and face_arr.max() >= len(vertices):
        raise MeshFormatError(f"{path}: face index out of range")
    return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), face_arr)
