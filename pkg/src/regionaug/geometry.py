"""Anchor pyramid generation, box arithmetic, IoU, and NMS."""

from dataclasses import dataclass, field


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class BoxRegion:
    """Axis-aligned rectangle in image pixel coordinates."""

    x1: float
    y1: float
    x2: float
    y2: float
    scale_index: int = 0
    aspect_index: int = 0

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(f"degenerate box: {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


@dataclass(frozen=True)
class ScoredRegion:
    box: BoxRegion
    informativeness: float
    confidence: float | None = None

    def __post_init__(self):
        if not (self.informativeness == self.informativeness and abs(self.informativeness) != float("inf")):
            raise ValueError("informativeness must be finite")
        if self.confidence is not None and not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must be in (0,1)")


@dataclass(frozen=True)
class PyramidLevel:
    stride: int
    base_size: float
    scales: tuple = (1.0,)
    ratios: tuple = (1.0,)


DEFAULT_PYRAMID = (
    PyramidLevel(stride=8, base_size=16.0, scales=(1.0, 1.26), ratios=(0.5, 1.0, 2.0)),
    PyramidLevel(stride=16, base_size=32.0, scales=(1.0, 1.26), ratios=(0.5, 1.0, 2.0)),
    PyramidLevel(stride=32, base_size=48.0, scales=(1.0, 1.26), ratios=(0.5, 1.0, 2.0)),
)


def generate_anchor_grid(image_size, pyramid_spec) -> list[BoxRegion]:
    """One clipped anchor per (level, grid cell, scale, ratio).

    Ordering is level-major, cell row-major, then scale, then ratio, and the
    navigator's score flattening relies on it.
    """
    h, w = image_size
    if h <= 0 or w <= 0:
        raise ConfigurationError("image size must be positive")
    if not pyramid_spec:
        raise ConfigurationError("pyramid_spec is empty")
    anchors = []
    for level in pyramid_spec:
        gh, gw = h // level.stride, w // level.stride
        if gh == 0 or gw == 0:
            raise ConfigurationError(f"stride {level.stride} larger than image {image_size}")
        for gi in range(gh):
            cy = (gi + 0.5) * level.stride
            for gj in range(gw):
                cx = (gj + 0.5) * level.stride
                for si, s in enumerate(level.scales):
                    for ri, r in enumerate(level.ratios):
                        # ratio = height/width at constant area
                        bw = level.base_size * s / (r ** 0.5)
                        bh = level.base_size * s * (r ** 0.5)
                        x1 = max(0.0, cx - bw / 2)
                        y1 = max(0.0, cy - bh / 2)
                        x2 = min(float(w), cx + bw / 2)
                        y2 = min(float(h), cy + bh / 2)
                        anchors.append(BoxRegion(x1, y1, x2, y2, scale_index=si, aspect_index=ri))
    return anchors


def iou(a: BoxRegion, b: BoxRegion) -> float:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


def nms(regions: list[ScoredRegion], iou_threshold: float, keep: int) -> list[ScoredRegion]:
    """Greedy NMS by descending informativeness, ties broken by input index.

    A candidate is suppressed iff its IoU with an already-kept region exceeds
    ``iou_threshold``. Returns at most ``keep`` regions.
    """
    if keep < 1:
        raise ValueError("keep must be >= 1")
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValueError("iou_threshold must be in [0,1]")
    order = sorted(range(len(regions)), key=lambda i: (-regions[i].informativeness, i))
    kept: list[ScoredRegion] = []
    for i in order:
        cand = regions[i]
        if all(iou(cand.box, k.box) <= iou_threshold for k in kept):
            kept.append(cand)
            if len(kept) == keep:
                break
    return kept
