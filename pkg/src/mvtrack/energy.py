"""Region-based per-pixel energy: smoothed-Heaviside blend of foreground and
background color probabilities over the rendered level set, plus its image
gradient.

The Heaviside is H(phi) = 1/2 + atan(slope * phi) / pi; any sigmoid with
H(0) = 1/2 would do, the arctangent keeps bounded heavy tails across the
sampling band. Probabilities are pairwise posteriors p_f/(p_f+p_b).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import camera as _camera
from .geometry import RigidTransform
from .renderer import LevelSetField, RenderResult, SampleSet, contour_band, signed_distance

_REFERENCE_WIDTH = 640.0


class DegenerateRegionError(ValueError):
    """Foreground or background region has no pixels to build a histogram from."""


class BorderSampleError(ValueError):
    """Sample too close to the image border for central differences."""


@dataclass(frozen=True)
class EnergyConfig:
    heaviside_slope: float = 1.2      # px^-1
    band_halfwidth: float = 8.0       # px at the 640-wide reference resolution
    hist_bins: int = 32               # per channel, joint bins**3 table
    alpha_fg: float = 0.1             # temporal smoothing of the fg histogram
    alpha_bg: float = 0.2
    probability_floor: float = 1e-6
    sample_stride: int = 1
    # phi is 0 at covered contour pixel centers, but the continuous silhouette
    # edge lies half a pixel outside them; the solver evaluates the Heaviside
    # at phi + contour_offset_px so the blend midpoint sits on the real edge
    contour_offset_px: float = 0.5
    # pixels this close to the contour are excluded from the histograms: they
    # flip sides under sub-pixel misalignment, and feeding them back through
    # the temporal model update makes a static scene drift
    model_margin_px: float = 2.0

    def __post_init__(self):
        if self.heaviside_slope <= 0:
            raise ValueError("heaviside_slope must be positive")
        if self.band_halfwidth <= 0:
            raise ValueError("band_halfwidth must be positive")
        if self.hist_bins not in (16, 32, 64):
            raise ValueError("hist_bins must be one of 16, 32, 64")
        if not (0.0 < self.probability_floor <= 1e-3):
            raise ValueError("probability_floor must be in (0, 1e-3]")
        if self.probability_floor * self.hist_bins**3 >= 0.5:
            raise ValueError("probability_floor too large for the histogram size")
        if not (0.0 <= self.alpha_fg <= 1.0 and 0.0 <= self.alpha_bg <= 1.0):
            raise ValueError("learning rates must lie in [0, 1]")
        if self.sample_stride < 1:
            raise ValueError("sample_stride must be at least 1")

    def effective_band(self, image_width: int) -> float:
        """Band half-width scaled with resolution (8 px at width 640)."""
        return self.band_halfwidth * image_width / _REFERENCE_WIDTH


@dataclass(frozen=True)
class ColorModel:
    """Joint RGB histograms (bins**3 flat tables), normalized and floored."""

    fg_hist: np.ndarray
    bg_hist: np.ndarray
    bins: int

    def lookup(self, colors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Raw model probabilities for uint8 RGB colors of shape (N, 3)."""
        idx = _bin_indices(colors, self.bins)
        return self.fg_hist[idx], self.bg_hist[idx]

    def posteriors(self, colors: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray]:
        """Pairwise posteriors p_f/(p_f+p_b), clipped to [floor, 1-floor]."""
        pf_raw, pb_raw = self.lookup(colors)
        pf = pf_raw / (pf_raw + pb_raw)
        pf = np.clip(pf, floor, 1.0 - floor)
        return pf, 1.0 - pf


def _bin_indices(colors: np.ndarray, bins: int) -> np.ndarray:
    c = np.asarray(colors)
    if c.dtype != np.uint8:
        c = np.clip(np.round(c), 0, 255).astype(np.uint8)
    shift = 8 - int(np.log2(bins))
    r = (c[..., 0] >> shift).astype(np.int64)
    g = (c[..., 1] >> shift).astype(np.int64)
    b = (c[..., 2] >> shift).astype(np.int64)
    return (r * bins + g) * bins + b


def _normalized_floored(hist: np.ndarray, floor: float) -> np.ndarray:
    total = hist.sum()
    if total <= 0:
        raise DegenerateRegionError("empty histogram")
    p = hist / total
    # convex mix with the uniform floor keeps sum == 1 and min >= floor exactly
    return (1.0 - floor * p.size) * p + floor


def smoothed_heaviside(phi, slope: float):
    """H(phi) in (0, 1), strictly increasing, H(0) = 1/2."""
    return 0.5 + np.arctan(slope * np.asarray(phi, dtype=float)) / np.pi


def smoothed_heaviside_deriv(phi, slope: float):
    p = np.asarray(phi, dtype=float)
    return (slope / np.pi) / (1.0 + (slope * p) ** 2)


def pixel_energy(phi, p_fg, p_bg, slope: float):
    """-log of the Heaviside-blended color probability; >= 0 and finite."""
    he = smoothed_heaviside(phi, slope)
    return -np.log(he * p_fg + (1.0 - he) * p_bg)


def build_color_model(
    image: np.ndarray,
    levelset: LevelSetField,
    prev: ColorModel | None,
    cfg: EnergyConfig,
) -> ColorModel:
    """Histograms from the segmentation implied by the level set.

    Foreground uses interior pixels (phi > 0), background exterior pixels
    (phi < 0) restricted to the contour band; both skip a model_margin_px
    strip along the contour whose pixels change sides under sub-pixel
    misalignment. With a previous model, each histogram is blended as
    (1 - alpha) * prev + alpha * current.
    """
    if image.shape[:2] != levelset.phi.shape:
        raise ValueError("image and level set dimensions must match")
    band = cfg.effective_band(image.shape[1])
    margin = min(cfg.model_margin_px, 0.45 * band)
    fg_sel = levelset.phi > margin
    bg_sel = (levelset.phi < -margin) & (levelset.phi >= -band)
    if not fg_sel.any() or not bg_sel.any():
        # thin structures may not survive the margin; fall back to the bare split
        fg_sel = levelset.phi > 0
        bg_sel = (levelset.phi < 0) & (levelset.phi >= -band)
    if not fg_sel.any() or not bg_sel.any():
        raise DegenerateRegionError("foreground or background region is empty")
    idx = _bin_indices(image, cfg.hist_bins)
    size = cfg.hist_bins**3
    fg = _normalized_floored(
        np.bincount(idx[fg_sel].ravel(), minlength=size).astype(float), cfg.probability_floor
    )
    bg = _normalized_floored(
        np.bincount(idx[bg_sel].ravel(), minlength=size).astype(float), cfg.probability_floor
    )
    if prev is not None:
        if prev.bins != cfg.hist_bins:
            raise ValueError("histogram bin count changed between frames")
        fg = (1.0 - cfg.alpha_fg) * prev.fg_hist + cfg.alpha_fg * fg
        bg = (1.0 - cfg.alpha_bg) * prev.bg_hist + cfg.alpha_bg * bg
    return ColorModel(fg, bg, cfg.hist_bins)


def bilinear(field: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a 2D field at (N, 2) positions (x, y)."""
    x = xy[:, 0]
    y = xy[:, 1]
    h, w = field.shape
    x0 = np.clip(np.floor(x).astype(int), 0, w - 2)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 2)
    fx = x - x0
    fy = y - y0
    f00 = field[y0, x0]
    f01 = field[y0, x0 + 1]
    f10 = field[y0 + 1, x0]
    f11 = field[y0 + 1, x0 + 1]
    return (1 - fy) * ((1 - fx) * f00 + fx * f01) + fy * ((1 - fx) * f10 + fx * f11)


def bilinear_gradient(field: np.ndarray, xy: np.ndarray) -> np.ndarray:
    """Central differences (step 1 px) of the bilinear interpolant, (N, 2)."""
    ex = np.array([1.0, 0.0])
    ey = np.array([0.0, 1.0])
    gx = 0.5 * (bilinear(field, xy + ex) - bilinear(field, xy - ex))
    gy = 0.5 * (bilinear(field, xy + ey) - bilinear(field, xy - ey))
    return np.stack([gx, gy], axis=1)


def in_gradient_domain(xy: np.ndarray, width: int, height: int) -> np.ndarray:
    """True where a position is far enough from the border for central differences."""
    return (
        (xy[:, 0] >= 1.0)
        & (xy[:, 0] <= width - 2.0)
        & (xy[:, 1] >= 1.0)
        & (xy[:, 1] <= height - 2.0)
    )


def pixel_gradient(
    levelset: LevelSetField,
    position,
    p_fg: float,
    p_bg: float,
    slope: float,
) -> np.ndarray:
    """Row vector dF/dx (1, 2) of the pixel energy at one sample position.

    dF/dx = -(p_f - p_b) * H'(phi) / (H(phi) p_f + (1 - H(phi)) p_b) * grad(phi),
    with grad(phi) by central differences on the bilinear level set.
    """
    xy = np.asarray(position, dtype=float).reshape(1, 2)
    if not in_gradient_domain(xy, levelset.width, levelset.height)[0]:
        raise BorderSampleError("sample too close to the image border")
    phi = bilinear(levelset.phi, xy)
    grad = bilinear_gradient(levelset.phi, xy)
    he = smoothed_heaviside(phi, slope)
    blend = he * p_fg + (1.0 - he) * p_bg
    scale = -(p_fg - p_bg) * smoothed_heaviside_deriv(phi, slope) / blend
    return scale[:, None] * grad


@dataclass
class FrameObservation:
    """Everything one view contributes to a frame: image, level set, color
    model, band samples with their base pixels/projections and posteriors."""

    image: np.ndarray
    levelset: LevelSetField
    color_model: ColorModel
    samples: SampleSet
    p_fg: np.ndarray            # posterior at each sample's base pixel
    p_bg: np.ndarray
    base_pixels: np.ndarray     # (N, 2) float, sample pixel centers
    base_projections: np.ndarray  # (N, 2) float, projection of the attached 3D point
    view_index: int = 0


def build_observation(
    image: np.ndarray,
    render_result: RenderResult,
    view,
    object_from_template: RigidTransform,
    cfg: EnergyConfig,
    prev_model: ColorModel | None = None,
) -> FrameObservation:
    """Assemble the per-view observation for one optimization round."""
    levelset = signed_distance(render_result.mask)
    band = contour_band(
        levelset,
        cfg.effective_band(image.shape[1]),
        render_result,
        stride=cfg.sample_stride,
    )
    model = build_color_model(image, levelset, prev_model, cfg)
    if len(band) == 0:
        empty2 = np.empty((0, 2))
        empty1 = np.empty((0,))
        return FrameObservation(
            image, levelset, model, band, empty1, empty1, empty2, empty2, view.index
        )
    colors = image[band.pixels[:, 1], band.pixels[:, 0]]
    p_fg, p_bg = model.posteriors(colors, cfg.probability_floor)
    x_o = object_from_template.apply(band.model_points)
    base_proj = _camera.project(view, x_o)
    return FrameObservation(
        image=image,
        levelset=levelset,
        color_model=model,
        samples=band,
        p_fg=p_fg,
        p_bg=p_bg,
        base_pixels=band.pixels.astype(float),
        base_projections=base_proj,
        view_index=view.index,
    )
