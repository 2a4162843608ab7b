"""Fusion of full-image and region features into the final prediction."""

import math

import numpy as np

from . import autodiff as ad
from .autodiff import PROB_EPS
from .network import (ModelState, add_fusion_head, backbone_forward,
                      fusion_probs, images_to_batch, wrap_params)


def fuse_and_classify(model: ModelState, image: np.ndarray, regions: list,
                      num_regions: int | None = None) -> np.ndarray:
    """Concatenate the image feature with K region features and classify.

    Fewer than K surviving regions are padded by repeating the last one; with
    no regions at all the full image stands in for every slot.
    """
    k = num_regions if num_regions is not None else max(len(regions), 1)
    regions = list(regions[:k])
    if not regions:
        regions = [image] * k
    while len(regions) < k:
        regions.append(regions[-1])
    add_fusion_head(model, k)
    dtype = model.params["classifier.w"].dtype
    pt = wrap_params(model, trainable=False)
    x = ad.const(images_to_batch([image] + regions, model.config, dtype))
    _, g = backbone_forward(pt, x, model.config)
    flat = ad.const(g.data.reshape(1, -1))
    return fusion_probs(pt, flat).data[0]


def scrutinizer_loss(prediction: np.ndarray, true_class: int) -> float:
    """Cross entropy -log p[true_class] with the shared probability clamp."""
    if not (0 <= true_class < len(prediction)):
        raise ValueError(f"class id {true_class} out of range")
    p = min(max(float(prediction[true_class]), PROB_EPS), 1.0 - PROB_EPS)
    return -math.log(p)
