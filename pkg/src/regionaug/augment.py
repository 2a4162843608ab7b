"""Region-oriented augmentation: map normalization, crop/drop masks, and the
augmentation cross-entropy loss."""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import PROB_EPS
from .geometry import BoxRegion

NORMALIZE_EPS = 1e-12
FALLBACK_CELLS = 3  # side of the fallback crop window around the argmax


@dataclass
class AugmentationMap:
    values: np.ndarray  # 2-D, in [0,1]
    source_region: BoxRegion | None = None


@dataclass
class RegionMask:
    values: np.ndarray  # 2-D, strictly {0,1}
    kind: str           # "crop" | "drop"
    threshold: float


def normalize_map(raw: np.ndarray, source_region: BoxRegion | None = None) -> AugmentationMap:
    """Min-max normalize to [0,1]; constant maps collapse to all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0 or not np.all(np.isfinite(raw)):
        raise ValueError("map must be non-empty and finite")
    lo, hi = raw.min(), raw.max()
    if hi - lo < NORMALIZE_EPS:
        vals = np.zeros_like(raw)
    else:
        vals = (raw - lo) / (hi - lo)
    return AugmentationMap(vals, source_region)


def _cell_box(amap: AugmentationMap, i0: int, i1: int, j0: int, j1: int) -> BoxRegion:
    """Map the half-open cell range [i0,i1) x [j0,j1) into source coordinates."""
    gh, gw = amap.values.shape
    src = amap.source_region or BoxRegion(0.0, 0.0, float(gw), float(gh))
    ch = (src.y2 - src.y1) / gh
    cw = (src.x2 - src.x1) / gw
    return BoxRegion(src.x1 + j0 * cw, src.y1 + i0 * ch,
                     src.x1 + j1 * cw, src.y1 + i1 * ch)


def crop_mask(amap: AugmentationMap, threshold: float) -> tuple[RegionMask, BoxRegion]:
    """Binary mask of cells above threshold plus the minimal covering box.

    An all-zero mask falls back to a small window centered on the argmax so
    the downstream crop is never empty.
    """
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must be in [0,1]")
    vals = amap.values
    mask = (vals > threshold).astype(np.uint8)
    if mask.any():
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        i0, i1 = rows[0], rows[-1] + 1
        j0, j1 = cols[0], cols[-1] + 1
    else:
        gh, gw = vals.shape
        ci, cj = np.unravel_index(np.argmax(vals), vals.shape)
        half = FALLBACK_CELLS // 2
        i0 = max(0, ci - half)
        i1 = min(gh, ci + half + 1)
        j0 = max(0, cj - half)
        j1 = min(gw, cj + half + 1)
    return RegionMask(mask, "crop", threshold), _cell_box(amap, i0, i1, j0, j1)


def drop_mask(amap: AugmentationMap, threshold: float) -> RegionMask:
    """Binary mask of cells above threshold; 1-cells get zeroed in the image."""
    if not (0.0 <= threshold <= 1.0):
        raise ValueError("threshold must be in [0,1]")
    return RegionMask((amap.values > threshold).astype(np.uint8), "drop", threshold)


def apply_drop(image: np.ndarray, mask: RegionMask) -> np.ndarray:
    """Zero the image pixels under 1-cells of the (coarser) drop mask."""
    h, w = image.shape[:2]
    gh, gw = mask.values.shape
    rows = (np.arange(h) * gh // h).clip(0, gh - 1)
    cols = (np.arange(w) * gw // w).clip(0, gw - 1)
    keep = 1.0 - mask.values[np.ix_(rows, cols)]
    return image * keep[:, :, None]


def augmentation_loss(model, augmented_regions: list, full_image: np.ndarray,
                      true_class: int) -> float:
    """-sum_k log E(R_k) - log E(X) with E the shared-classifier confidence."""
    from .network import confidence

    def nlog(p):
        return -math.log(min(max(p, PROB_EPS), 1.0 - PROB_EPS))

    if not augmented_regions:
        raise ValueError("need at least one augmented region")
    total = sum(nlog(confidence(model, r, true_class)) for r in augmented_regions)
    return total + nlog(confidence(model, full_image, true_class))
