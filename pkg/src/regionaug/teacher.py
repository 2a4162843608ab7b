"""Confidence-based supervision of the navigator: pairwise ranking loss,
region-confidence loss, and top-K selection."""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import PROB_EPS
from .geometry import ScoredRegion


@dataclass
class RankingBatch:
    informativeness: list
    confidences: list
    full_image_confidence: float
    true_class: int

    def __post_init__(self):
        if len(self.informativeness) != len(self.confidences):
            raise ValueError("informativeness/confidence length mismatch")
        if len(self.informativeness) < 1:
            raise ValueError("need at least one region")


def ranking_loss(batch: RankingBatch) -> float:
    """Sum over ordered pairs (i, j) with C_i < C_j of max(1 - (I_j - I_i), 0).

    Equal-confidence pairs contribute nothing.
    """
    inf = batch.informativeness
    conf = batch.confidences
    total = 0.0
    for i in range(len(conf)):
        for j in range(len(conf)):
            if conf[i] < conf[j]:
                total += max(1.0 - (inf[j] - inf[i]), 0.0)
    return total


def teacher_loss(batch: RankingBatch) -> float:
    """-sum_i log C(R_i) - log C(X), probabilities clamped away from {0, 1}."""

    def nlog(p):
        return -math.log(min(max(p, PROB_EPS), 1.0 - PROB_EPS))

    return sum(nlog(c) for c in batch.confidences) + nlog(batch.full_image_confidence)


def select_top_k(regions: list[ScoredRegion], k: int) -> list[ScoredRegion]:
    """The K highest-confidence regions, descending, input-index tie-break."""
    if k < 1:
        raise ValueError("K must be >= 1")
    for r in regions:
        if r.confidence is None:
            raise ValueError("select_top_k requires confidences")
    order = sorted(range(len(regions)), key=lambda i: (-regions[i].confidence, i))
    return [regions[i] for i in order[:k]]
