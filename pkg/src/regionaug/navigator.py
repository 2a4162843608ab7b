"""Anchor scoring heads and top-M region proposal."""

import numpy as np

from . import autodiff as ad
from .geometry import BoxRegion, ScoredRegion, generate_anchor_grid, nms
from .network import ModelConfig, ModelState, wrap_params


class ConfigurationError(ValueError):
    pass


def nav_scores_graph(pt: dict, pyramid_levels, config: ModelConfig) -> ad.Tensor:
    """Score every anchor from (possibly detached) pyramid levels.

    Returns (N, A) with anchor ordering matching generate_anchor_grid:
    level-major, cell row-major, then scale, then ratio. The per-cell channel
    layout of the 1x1 output conv is scale-major/ratio-minor for that reason.
    """
    per_level = []
    for li, lvl in enumerate(pyramid_levels):
        h = ad.relu(ad.conv2d(lvl, pt[f"nav{li}.hidden.w"], pt[f"nav{li}.hidden.b"], stride=1, pad=1))
        out = ad.conv2d(h, pt[f"nav{li}.out.w"], pt[f"nav{li}.out.b"], stride=1, pad=0)
        per_level.append(ad.channels_last_flat(out))
    return ad.concat(per_level, axis=1)


def score_anchors(model: ModelState, pyramid) -> np.ndarray:
    """One informativeness score per anchor of the configured grid."""
    cfg = model.config
    expected = [(cfg.fpn_channels,
                 cfg.input_size // lv.stride,
                 cfg.input_size // lv.stride) for lv in cfg.pyramid]
    got = [lvl.shape for lvl in pyramid.levels]
    if got != expected:
        raise ConfigurationError(f"pyramid levels {got} do not match config {expected}")
    pt = wrap_params(model, trainable=False)
    levels = [ad.const(lvl[None]) for lvl in pyramid.levels]
    return nav_scores_graph(pt, levels, cfg).data[0]


def propose_top_m(scores: np.ndarray, anchors: list[BoxRegion], m: int,
                  iou_threshold: float) -> list[ScoredRegion]:
    """NMS over (anchors, scores) keeping at most M, descending informativeness."""
    if m < 1:
        raise ValueError("M must be >= 1")
    if len(scores) != len(anchors):
        raise ConfigurationError(f"{len(scores)} scores for {len(anchors)} anchors")
    regions = [ScoredRegion(box, float(s)) for box, s in zip(anchors, scores)]
    return nms(regions, iou_threshold, keep=m)


def propose_with_indices(scores: np.ndarray, anchors: list[BoxRegion], m: int,
                         iou_threshold: float) -> list[tuple[int, ScoredRegion]]:
    """Like propose_top_m but keeps the anchor index of each selected region,
    so the trainer can route gradients into the selected score entries.

    Runs the same greedy rule as geometry.nms over (index, anchor) pairs.
    """
    from .geometry import iou as _iou

    order = sorted(range(len(anchors)), key=lambda i: (-scores[i], i))
    kept: list[tuple[int, ScoredRegion]] = []
    for i in order:
        if all(_iou(anchors[i], r.box) <= iou_threshold for _, r in kept):
            kept.append((i, ScoredRegion(anchors[i], float(scores[i]))))
            if len(kept) == m:
                break
    return kept


def default_anchors(config: ModelConfig) -> list[BoxRegion]:
    return generate_anchor_grid((config.input_size, config.input_size), config.pyramid)
