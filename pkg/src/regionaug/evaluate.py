"""Top-k accuracy, micro-averaged ROC, per-class tables, region overlays."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw


@dataclass
class MetricsReport:
    top1: float
    top5: float
    per_class_top1: dict      # class name -> accuracy
    roc_points: list          # (fpr, tpr)
    confusion: list           # class-count matrix as nested lists
    config_echo: dict = field(default_factory=dict)

    def save(self, path):
        Path(path).write_text(json.dumps({
            "top1": self.top1,
            "top5": self.top5,
            "per_class_top1": self.per_class_top1,
            "roc_points": self.roc_points,
            "confusion": self.confusion,
            "config_echo": self.config_echo,
        }, indent=1))

    @staticmethod
    def load(path) -> "MetricsReport":
        doc = json.loads(Path(path).read_text())
        return MetricsReport(doc["top1"], doc["top5"], doc["per_class_top1"],
                             [tuple(p) for p in doc["roc_points"]],
                             doc["confusion"], doc["config_echo"])


def topk_accuracy(predictions, labels, k: int) -> float:
    """Fraction of samples whose label is among the k top scores.

    Ties are broken by class index (lower index ranks first).
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(predictions) == 0:
        raise ValueError("empty predictions")
    if len(predictions) != len(labels):
        raise ValueError("predictions/labels length mismatch")
    # stable sort on negated scores ranks equal scores by ascending index
    ranked = np.argsort(-predictions, axis=1, kind="stable")[:, :k]
    return float(np.mean([labels[i] in ranked[i] for i in range(len(labels))]))


def roc_curve(scores, labels) -> list:
    """Micro-averaged one-vs-rest ROC with (0,0) and (1,1) endpoints."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise ValueError("empty scores")
    n, c = scores.shape
    if len(np.unique(labels)) < 2 and c < 2:
        raise ValueError("ROC undefined for single-class labels")
    truth = np.zeros((n, c), dtype=bool)
    truth[np.arange(n), labels] = True
    flat_scores = scores.ravel()
    flat_truth = truth.ravel()
    order = np.argsort(-flat_scores, kind="stable")
    flat_truth = flat_truth[order]
    sorted_scores = flat_scores[order]
    tps = np.cumsum(flat_truth)
    fps = np.cumsum(~flat_truth)
    # threshold at each distinct score: take the last index of each run
    last = np.flatnonzero(np.diff(sorted_scores) != 0)
    idx = np.concatenate([last, [len(sorted_scores) - 1]])
    p = tps[-1]
    f = fps[-1]
    if p == 0 or f == 0:
        raise ValueError("ROC undefined: need both positive and negative cells")
    pts = [(0.0, 0.0)] + [(fps[i] / f, tps[i] / p) for i in idx]
    if pts[-1] != (1.0, 1.0):
        pts.append((1.0, 1.0))
    return pts


def roc_auc(points) -> float:
    pts = np.asarray(points)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


def best_worst_classes(report: MetricsReport, n: int) -> dict:
    """n best and n worst classes by per-class Top-1, name tie-break."""
    best = sorted(report.per_class_top1.items(), key=lambda kv: (-kv[1], kv[0]))
    worst = sorted(report.per_class_top1.items(), key=lambda kv: (kv[1], kv[0]))
    n = min(n, len(best))
    return {"best": best[:n], "worst": worst[:n]}


def build_report(predictions, labels, class_names, config_echo=None) -> MetricsReport:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    ncls = len(class_names)
    top1 = topk_accuracy(predictions, labels, 1)
    top5 = topk_accuracy(predictions, labels, min(5, ncls))
    picks = np.argmax(predictions, axis=1)
    confusion = np.zeros((ncls, ncls), dtype=int)
    for t, p in zip(labels, picks):
        confusion[t, p] += 1
    per_class = {}
    for ci, name in enumerate(class_names):
        total = confusion[ci].sum()
        per_class[name] = float(confusion[ci, ci] / total) if total else 0.0
    return MetricsReport(top1, top5, per_class, roc_curve(predictions, labels),
                         confusion.tolist(), config_echo or {})


def save_roc_points(points, path):
    lines = [f"{fpr:.10f}\t{tpr:.10f}" for fpr, tpr in points]
    Path(path).write_text("\n".join(lines) + "\n")


def render_region_overlays(model, images, out_path, config) -> list:
    """Annotate each image with the top-M navigator boxes (solid) and the K
    post-augmentation crop boxes (dashed-ish thinner stroke); returns the
    drawn boxes per image for pixel-exact comparison against the pipeline."""
    from .trainer import predict

    out_dir = Path(out_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, regions, crop_boxes = predict(model, list(images), config)
    drawn = []
    for i, img in enumerate(images):
        canvas = Image.fromarray((np.clip(img, 0, 1) * 255).astype(np.uint8), "RGB")
        d = ImageDraw.Draw(canvas)
        boxes_here = []
        for r in regions[i]:
            b = r.box
            d.rectangle([b.x1, b.y1, b.x2 - 1, b.y2 - 1], outline=(255, 40, 40), width=2)
            boxes_here.append(("navigator", b))
        for b in crop_boxes[i]:
            d.rectangle([b.x1, b.y1, b.x2 - 1, b.y2 - 1], outline=(40, 255, 90), width=1)
            boxes_here.append(("crop", b))
        canvas.save(out_dir / f"overlay_{i:04d}.png")
        drawn.append(boxes_here)
    return drawn
