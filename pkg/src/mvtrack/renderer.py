"""Software silhouette rendering and level-set construction.

The rasterizer produces binary coverage only (no shading): a pixel is
foreground iff its center falls inside any projected triangle with positive
depth. A depth buffer and a perspective-correct template-coordinate buffer are
kept so each contour sample can be tied back to the 3D surface point whose
projection is nearest to it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .camera import CameraView
from .geometry import RigidTransform, compose, invert
from .mesh import TriangleMesh

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_MIN_DEPTH = 1e-9


@dataclass(frozen=True)
class SilhouetteMask:
    occupancy: np.ndarray  # (H, W) bool, True = object

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        if occ.ndim != 2:
            raise ValueError("occupancy must be a 2D boolean image")
        object.__setattr__(self, "occupancy", occ)

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]


@dataclass(frozen=True)
class LevelSetField:
    """Signed distance (px) to the silhouette contour: >= 0 inside, < 0 outside.

    Contour pixels (foreground with a background 4-neighbor) carry phi = 0.
    Degenerate all-foreground/all-background masks carry +/-(width+height) and
    no nearest-contour index map.
    """

    phi: np.ndarray                      # (H, W) float
    nearest_contour: np.ndarray | None   # (2, H, W) int: row, col of nearest contour pixel

    @property
    def width(self) -> int:
        return self.phi.shape[1]

    @property
    def height(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class SampleSet:
    """Contour-band samples: pixel coordinates, their phi, and (optionally)
    the template-frame surface point associated with each sample."""

    pixels: np.ndarray        # (N, 2) int, columns (x, y)
    phi: np.ndarray           # (N,)
    model_points: np.ndarray | None  # (N, 3) template-frame mm

    def __len__(self) -> int:
        return int(self.pixels.shape[0])


@dataclass(frozen=True)
class RenderResult:
    mask: SilhouetteMask
    depth: np.ndarray   # (H, W) camera-frame depth, +inf where empty
    points: np.ndarray  # (H, W, 3) template-frame coords of the nearest surface


def render(mesh: TriangleMesh, view: CameraView, template_to_object: RigidTransform) -> RenderResult:
    """Rasterize the mesh under pose template_to_object into the given view."""
    intr = view.intrinsics
    w, h = intr.width, intr.height
    cam_from_tpl = compose(invert(view.object_from_camera), template_to_object)
    vc = cam_from_tpl.apply(mesh.vertices)

    depth = np.full((h, w), np.inf)
    points = np.zeros((h, w, 3))
    occ = np.zeros((h, w), dtype=bool)

    z = vc[:, 2]
    face_z = z[mesh.faces]
    # triangles with any vertex at non-positive depth are dropped, not clipped
    visible = np.nonzero(np.all(face_z > _MIN_DEPTH, axis=1))[0]
    if visible.size == 0:
        return RenderResult(SilhouetteMask(occ), depth, points)

    px = np.empty((vc.shape[0], 2))
    with np.errstate(divide="ignore", invalid="ignore"):
        px[:, 0] = intr.fx * vc[:, 0] / z + intr.cx
        px[:, 1] = intr.fy * vc[:, 1] / z + intr.cy

    # per-face screen quantities, vectorized before the fill loop
    fa = mesh.faces[visible]
    pa = px[fa[:, 0]]
    d0 = px[fa[:, 1]] - pa
    d1 = px[fa[:, 2]] - pa
    det = d0[:, 0] * d1[:, 1] - d0[:, 1] * d1[:, 0]
    lo = np.ceil(np.minimum(np.minimum(px[fa[:, 0]], px[fa[:, 1]]), px[fa[:, 2]]))
    hi = np.floor(np.maximum(np.maximum(px[fa[:, 0]], px[fa[:, 1]]), px[fa[:, 2]]))
    bx0 = np.maximum(lo[:, 0].astype(np.int64), 0)
    by0 = np.maximum(lo[:, 1].astype(np.int64), 0)
    bx1 = np.minimum(hi[:, 0].astype(np.int64), w - 1)
    by1 = np.minimum(hi[:, 1].astype(np.int64), h - 1)
    keep = (np.abs(det) >= 1e-12) & (bx0 <= bx1) & (by0 <= by1)

    tv = mesh.vertices
    zf = z[fa]
    for j in np.nonzero(keep)[0]:
        x0, x1, y0, y1 = bx0[j], bx1[j], by0[j], by1[j]
        xs = np.arange(x0, x1 + 1, dtype=float)[None, :] - pa[j, 0]
        ys = np.arange(y0, y1 + 1, dtype=float)[:, None] - pa[j, 1]
        u = (xs * d1[j, 1] - ys * d1[j, 0]) / det[j]
        v = (d0[j, 0] * ys - d0[j, 1] * xs) / det[j]
        inside = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0)
        if not inside.any():
            continue
        za, zb, zc = zf[j]
        w0 = (1.0 - u - v) / za
        w1 = u / zb
        w2 = v / zc
        zp = 1.0 / (w0 + w1 + w2)
        dwin = depth[y0 : y1 + 1, x0 : x1 + 1]
        upd = inside & (zp < dwin)
        if not upd.any():
            continue
        # perspective-correct interpolation of the template coordinates
        ia, ib, ic = fa[j]
        attr = (
            w0[upd][:, None] * tv[ia]
            + w1[upd][:, None] * tv[ib]
            + w2[upd][:, None] * tv[ic]
        ) * zp[upd][:, None]
        dwin[upd] = zp[upd]
        points[y0 : y1 + 1, x0 : x1 + 1][upd] = attr
        occ[y0 : y1 + 1, x0 : x1 + 1][upd] = True

    return RenderResult(SilhouetteMask(occ), depth, points)


def rasterize_silhouette(
    mesh: TriangleMesh, view: CameraView, object_pose: RigidTransform
) -> SilhouetteMask:
    """Binary silhouette of the mesh under object_pose (template -> object frame)."""
    return render(mesh, view, object_pose).mask


def signed_distance(mask: SilhouetteMask) -> LevelSetField:
    """Exact Euclidean distance to the silhouette contour, signed by occupancy.

    The contour is the set of foreground pixels with at least one background
    4-neighbor (off-image counts as background); those pixels get phi = 0.
    """
    occ = mask.occupancy
    h, w = occ.shape
    # off-image neighbors are not background: pixels on the image border are
    # contour only if an in-image 4-neighbor is background
    eroded = ndimage.binary_erosion(occ, structure=_CROSS, border_value=1)
    contour = occ & ~eroded
    if not contour.any():
        sign = 1.0 if occ.all() else -1.0
        return LevelSetField(np.full((h, w), sign * (w + h), dtype=float), None)
    dist, idx = ndimage.distance_transform_edt(~contour, return_indices=True)
    phi = np.where(occ, dist, -dist)
    return LevelSetField(phi, np.asarray(idx, dtype=np.int32))


def contour_band(
    levelset: LevelSetField,
    band_halfwidth: float,
    render_result: RenderResult | None = None,
    stride: int = 1,
) -> SampleSet:
    """All pixels with |phi| <= band_halfwidth, in row-major order.

    When a render result is supplied, each sample carries the template-frame
    surface point rendered at its nearest contour pixel. A stride > 1 keeps
    every stride-th sample.
    """
    if band_halfwidth <= 0:
        raise ValueError("band_halfwidth must be positive")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    if levelset.nearest_contour is None:
        empty = np.empty((0,), dtype=float)
        return SampleSet(np.empty((0, 2), dtype=np.int32), empty, None)
    ys, xs = np.nonzero(np.abs(levelset.phi) <= band_halfwidth)
    ys = ys[::stride]
    xs = xs[::stride]
    pixels = np.stack([xs, ys], axis=1).astype(np.int32)
    phi = levelset.phi[ys, xs]
    model_points = None
    if render_result is not None and len(xs):
        cy = levelset.nearest_contour[0][ys, xs]
        cx = levelset.nearest_contour[1][ys, xs]
        model_points = render_result.points[cy, cx]
    return SampleSet(pixels, phi, model_points)
