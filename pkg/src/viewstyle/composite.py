"""Conditioning composites: per-pixel choice between a warped stylized
reference and the unstylized target frame.

The choice is driven by a per-pixel score

    S = w1 * |sin(theta)| - w2 * (d_warp / d_target) + w3 * (idx_t - idx_r)

where theta is the angle between the covering triangle's normal and the
*reference* camera's look-at, the depth ratio favours whichever surface
occludes the other, and the index gap favours older references. A pixel
takes the warped value when S exceeds the decision threshold (0 by
default); with several references the highest score wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .cameras import RgbdFrame, ValidityMask
from .errors import BadIndexOrderError, EmptyMaskError, NonPositiveDepthError
from .warp import WarpResult

DEFAULT_WEIGHTS = (1.0, 3.0, 0.02)
DEFAULT_BAND_PX = 3
DEFAULT_DECISION_THRESHOLD = 0.0


@dataclass(frozen=True)
class CompositeFrame:
    """Blend of warped stylized references and the unstylized target.

    source_mask is True where the pixel came from a warped reference;
    source_index holds the winning reference's position in the input list
    (-1 where the target pixel was kept). source depth is already aligned to
    the target's depth scale.
    """

    rgb: np.ndarray
    depth: np.ndarray
    source_mask: np.ndarray
    source_index: np.ndarray
    weights: tuple[float, float, float]


@dataclass(frozen=True)
class ReferenceWarp:
    """One stylized reference forward-warped into the target view."""

    warp: WarpResult
    look_at: np.ndarray     # reference camera +z in world coordinates
    frame_index: int


def compositing_score(
    theta: float,
    d_warp: float,
    d_target: float,
    idx_target: int,
    idx_ref: int,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
) -> float:
    """Scalar compositing score; see the module docstring for the formula."""
    if d_target <= 0:
        raise NonPositiveDepthError("target depth must be > 0")
    if d_warp < 0:
        raise NonPositiveDepthError("warped depth must be >= 0")
    if idx_target <= idx_ref:
        raise BadIndexOrderError("target index must exceed reference index")
    w1, w2, w3 = weights
    return w1 * abs(np.sin(theta)) - w2 * (d_warp / d_target) + w3 * (idx_target - idx_ref)


def median_scale(pred: np.ndarray, ref: np.ndarray, mask: ValidityMask | np.ndarray) -> float:
    """median(ref / pred) over the mask."""
    m = mask.mask if isinstance(mask, ValidityMask) else np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyMaskError("median_scale needs a non-empty mask")
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if (pred[m] <= 0).any():
        raise NonPositiveDepthError("pred depths must be > 0 on the mask")
    return float(np.median(ref[m] / pred[m]))


def boundary_band(validity: np.ndarray, band_px: int = DEFAULT_BAND_PX) -> np.ndarray:
    """Valid pixels within band_px of the validity boundary."""
    validity = np.asarray(validity, dtype=bool)
    if validity.all():
        return np.zeros_like(validity)
    invalid_near = ndimage.binary_dilation(~validity, iterations=band_px)
    return validity & invalid_near


def align_composite_depth(
    warped: WarpResult, target: RgbdFrame, band_px: int = DEFAULT_BAND_PX
) -> float:
    """Scale factor that matches the warped depth to the target's depth scale.

    Median of (target depth / warped depth) over valid pixels near the
    stylized/unstylized boundary; falls back to the global median over all
    valid pixels when the validity mask has no boundary.
    """
    validity = warped.validity.mask
    if not validity.any():
        raise EmptyMaskError("warp has no valid pixels to align against")
    band = boundary_band(validity, band_px)
    region = band if band.any() else validity
    return median_scale(warped.depth, target.depth, region)


def score_raster(
    ref: ReferenceWarp,
    target: RgbdFrame,
    aligned_depth: np.ndarray,
    weights: tuple[float, float, float],
) -> np.ndarray:
    """Per-pixel S for one reference; -inf outside the warp's validity."""
    if ref.frame_index >= target.index:
        raise BadIndexOrderError(
            f"reference index {ref.frame_index} must precede target index {target.index}"
        )
    w1, w2, w3 = weights
    cos = np.clip(np.sum(ref.warp.normals * ref.look_at, axis=-1), -1.0, 1.0)
    abs_sin = np.sqrt(np.maximum(1.0 - cos * cos, 0.0))
    score = (
        w1 * abs_sin
        - w2 * (aligned_depth / target.depth)
        + w3 * (target.index - ref.frame_index)
    )
    return np.where(ref.warp.validity.mask, score, -np.inf)


def build_composite(
    references: list[ReferenceWarp],
    target: RgbdFrame,
    weights: tuple[float, float, float] = DEFAULT_WEIGHTS,
    band_px: int = DEFAULT_BAND_PX,
    threshold: float = DEFAULT_DECISION_THRESHOLD,
    align_depth: bool = True,
) -> CompositeFrame:
    """Composite warped references over the unstylized target.

    Outside every warp's validity the target pixel is kept. Inside, the
    reference with the highest score wins the pixel iff its score exceeds
    ``threshold``. Warped depths are scale-aligned to the target first.
    """
    h, w = target.shape
    rgb = np.array(target.rgb, dtype=np.float64)
    depth = np.array(target.depth, dtype=np.float64)
    source_index = np.full((h, w), -1, dtype=np.int32)

    best_score = np.full((h, w), -np.inf)
    best_rgb = np.zeros_like(rgb)
    best_depth = np.zeros_like(depth)
    for i, ref in enumerate(references):
        if ref.warp.shape != (h, w):
            raise ValueError("all warps must target the composite raster size")
        if not ref.warp.validity.mask.any():
            continue
        scale = align_composite_depth(ref.warp, target, band_px) if align_depth else 1.0
        aligned = ref.warp.depth * scale
        score = score_raster(ref, target, aligned, weights)
        better = score > best_score
        best_score[better] = score[better]
        best_rgb[better] = ref.warp.rgb[better]
        best_depth[better] = aligned[better]
        source_index[better] = i

    win = best_score > threshold
    rgb[win] = best_rgb[win]
    depth[win] = best_depth[win]
    source_index[~win] = -1
    return CompositeFrame(
        rgb=rgb,
        depth=depth,
        source_mask=win,
        source_index=source_index,
        weights=tuple(weights),
    )
