"""Triangle meshes: OBJ loading and procedural desk-scale test shapes.

Meshes live in the template frame; the template origin is deliberately not the
bounding-box center for the procedural shapes so the object-centered re-basing
logic is always exercised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshFormatError(ValueError):
    """Malformed mesh file; message carries file and line context."""


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float, mm
    faces: np.ndarray     # (F, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=np.int32)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 4:
            raise ValueError("mesh needs at least 4 vertices of shape (V, 3)")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if f.ndim != 2 or f.shape[1] != 3 or f.shape[0] < 4:
            raise ValueError("mesh needs at least 4 triangular faces")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise ValueError("face indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def bbox_longest_side(self) -> float:
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(ext.max())

    @property
    def bbox_center(self) -> np.ndarray:
        return 0.5 * (self.vertices.max(axis=0) + self.vertices.min(axis=0))


def load_obj(path) -> TriangleMesh:
    """Load an ASCII OBJ keeping only v/f records; polygons are fan-triangulated."""
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as exc:
                    raise MeshFormatError(f"{path}:{lineno}: bad vertex coordinate") from exc
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshFormatError(f"{path}:{lineno}: face needs at least 3 vertices")
                idx = []
                for token in parts[1:]:
                    head = token.split("/")[0]
                    try:
                        k = int(head)
                    except ValueError as exc:
                        raise MeshFormatError(f"{path}:{lineno}: bad face index {token!r}") from exc
                    if k == 0:
                        raise MeshFormatError(f"{path}:{lineno}: OBJ indices are 1-based")
                    idx.append(k - 1 if k > 0 else len(vertices) + k)
                for a, b in zip(idx[1:-1], idx[2:]):
                    faces.append([idx[0], a, b])
            # vn/vt/g/o/s/usemtl/mtllib records are ignored
    if not vertices or not faces:
        raise MeshFormatError(f"{path}: no usable v/f records")
    return TriangleMesh(np.array(vertices), np.array(faces, dtype=np.int32))


def save_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _finalize(verts: np.ndarray, faces: np.ndarray, size_mm: float) -> TriangleMesh:
    """Scale so the longest bbox side equals size_mm, then offset the origin."""
    ext = verts.max(axis=0) - verts.min(axis=0)
    verts = verts * (size_mm / ext.max())
    center = 0.5 * (verts.max(axis=0) + verts.min(axis=0))
    offset = size_mm * np.array([0.10, -0.06, 0.08])
    verts = verts - center + offset
    return TriangleMesh(verts, faces)


def _box(center, dims) -> tuple[np.ndarray, np.ndarray]:
    cx, cy, cz = center
    dx, dy, dz = np.asarray(dims) / 2.0
    v = np.array(
        [
            [cx - dx, cy - dy, cz - dz],
            [cx + dx, cy - dy, cz - dz],
            [cx + dx, cy + dy, cz - dz],
            [cx - dx, cy + dy, cz - dz],
            [cx - dx, cy - dy, cz + dz],
            [cx + dx, cy - dy, cz + dz],
            [cx + dx, cy + dy, cz + dz],
            [cx - dx, cy + dy, cz + dz],
        ]
    )
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],
            [4, 5, 6], [4, 6, 7],
            [0, 1, 5], [0, 5, 4],
            [2, 3, 7], [2, 7, 6],
            [1, 2, 6], [1, 6, 5],
            [3, 0, 4], [3, 4, 7],
        ],
        dtype=np.int32,
    )
    return v, f


def _merge(parts) -> tuple[np.ndarray, np.ndarray]:
    verts = []
    faces = []
    offset = 0
    for v, f in parts:
        verts.append(v)
        faces.append(f + offset)
        offset += v.shape[0]
    return np.vstack(verts), np.vstack(faces)


def make_box(size_mm: float = 100.0, aspect=(1.0, 1.0, 1.0)) -> TriangleMesh:
    """Axis-aligned box, longest side size_mm, centered at the origin."""
    dims = np.asarray(aspect, dtype=float)
    dims = dims / dims.max() * size_mm
    v, f = _box((0.0, 0.0, 0.0), dims)
    return TriangleMesh(v, f)


def make_bump_sphere(size_mm: float = 127.0, n_lat: int = 16, n_lon: int = 22) -> TriangleMesh:
    """Sphere with sinusoidal radial bumps; breaks the rotational symmetry."""
    verts = [np.array([0.0, 0.0, 1.0])]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat
        for j in range(n_lon):
            phi = 2.0 * np.pi * j / n_lon
            r = 1.0 + 0.14 * np.sin(3.0 * theta) * np.cos(4.0 * phi) * np.sin(theta)
            verts.append(
                r * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
            )
    verts.append(np.array([0.0, 0.0, -1.0]))
    v = np.array(verts)
    last = v.shape[0] - 1

    def ring(i, j):
        return 1 + (i - 1) * n_lon + (j % n_lon)

    faces = []
    for j in range(n_lon):
        faces.append([0, ring(1, j), ring(1, j + 1)])
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    for j in range(n_lon):
        faces.append([last, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)])
    return _finalize(v, np.array(faces, dtype=np.int32), size_mm)


def make_notched_box(size_mm: float = 142.0) -> TriangleMesh:
    """Box with a rectangular notch bitten out of the top edge (union of 3 boxes)."""
    left = _box((-0.325, 0.0, 0.0), (0.35, 0.70, 0.50))
    right = _box((0.325, 0.0, 0.0), (0.35, 0.70, 0.50))
    lower = _box((0.0, -0.14, 0.0), (0.30, 0.42, 0.50))
    v, f = _merge([left, right, lower])
    return _finalize(v, f, size_mm)


def make_l_bracket(size_mm: float = 229.0) -> TriangleMesh:
    """L-shaped bracket (union of two slabs)."""
    upright = _box((0.0, 0.35, 0.0), (0.30, 1.00, 0.22))
    foot = _box((0.28, -0.04, 0.0), (0.86, 0.22, 0.22))
    v, f = _merge([upright, foot])
    return _finalize(v, f, size_mm)


def make_torus_knot(size_mm: float = 194.0, segments: int = 64, ring: int = 8) -> TriangleMesh:
    """Tube swept along a (2,3) torus knot."""
    t = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    p, q = 2, 3
    curve = np.stack(
        [
            (2.0 + np.cos(q * t)) * np.cos(p * t),
            (2.0 + np.cos(q * t)) * np.sin(p * t),
            np.sin(q * t),
        ],
        axis=1,
    )
    # tangents via circular central differences
    tang = np.roll(curve, -1, axis=0) - np.roll(curve, 1, axis=0)
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    ref = np.array([0.0, 0.0, 1.0])
    n1 = np.cross(tang, ref)
    bad = np.linalg.norm(n1, axis=1) < 1e-6
    n1[bad] = np.cross(tang[bad], np.array([1.0, 0.0, 0.0]))
    n1 /= np.linalg.norm(n1, axis=1, keepdims=True)
    n2 = np.cross(tang, n1)

    tube_r = 0.42
    alphas = 2.0 * np.pi * np.arange(ring) / ring
    verts = (
        curve[:, None, :]
        + tube_r * np.cos(alphas)[None, :, None] * n1[:, None, :]
        + tube_r * np.sin(alphas)[None, :, None] * n2[:, None, :]
    ).reshape(-1, 3)

    faces = []
    for i in range(segments):
        for j in range(ring):
            a = i * ring + j
            b = i * ring + (j + 1) % ring
            c = ((i + 1) % segments) * ring + j
            d = ((i + 1) % segments) * ring + (j + 1) % ring
            faces.append([a, c, d])
            faces.append([a, d, b])
    return _finalize(verts, np.array(faces, dtype=np.int32), size_mm)


def default_suite_meshes() -> dict[str, TriangleMesh]:
    """The four stand-in shapes used by the synthetic benchmark suite (90-230 mm)."""
    return {
        "bump_sphere": make_bump_sphere(127.0),
        "notched_box": make_notched_box(142.0),
        "l_bracket": make_l_bracket(229.0),
        "torus_knot": make_torus_knot(194.0),
    }


MESH_FACTORIES = {
    "bump_sphere": make_bump_sphere,
    "notched_box": make_notched_box,
    "l_bracket": make_l_bracket,
    "torus_knot": make_torus_knot,
    "box": make_box,
}
