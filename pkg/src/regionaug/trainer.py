"""Joint training of the four sub-networks with SGD + momentum.

Per image the step runs: feature extraction -> anchor scoring -> top-M NMS ->
region confidences -> ranking + confidence losses -> top-K -> crop/drop
augmentation -> augmentation loss -> feature fusion -> classification loss,
then one SGD update on the batch-mean total loss. Forward passes are batched
across the images of a batch for speed.
"""

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .augment import apply_drop, crop_mask, drop_mask, normalize_map
from .geometry import DEFAULT_PYRAMID, ScoredRegion
from .navigator import default_anchors, nav_scores_graph, propose_with_indices
from .network import (ModelConfig, ModelState, add_fusion_head,
                      backbone_forward, classifier_probs, crop_and_resize,
                      fusion_probs, images_to_batch, init_model,
                      pyramid_forward, save_checkpoint, wrap_params)

VARIANT_FULL = "region_fusion"
VARIANT_BASELINE = "backbone_only"


class NumericError(RuntimeError):
    """A loss term became non-finite during a training step."""


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    num_classes: int = 10
    regions_m: int = 4
    regions_k: int = 2
    crop_threshold: float = 0.5
    drop_threshold: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    batch_size: int = 8
    momentum: float = 0.9
    weight_decay: float = 1e-4
    initial_lr: float = 1e-3
    lr_drop_epoch: int = 20
    lr_after_drop: float = 1e-4
    epochs: int = 100
    seed: int = 0
    nms_iou_threshold: float = 0.25
    input_size: int = 64
    backbone_channels: tuple = (32, 64, 128, 256)
    fpn_channels: int = 64
    drop_probability: float = 0.5
    grad_clip: float = 5.0
    variant: str = VARIANT_FULL
    pyramid: tuple = DEFAULT_PYRAMID

    def __post_init__(self):
        if self.regions_k > self.regions_m:
            raise ConfigError("K must not exceed M")
        for name in ("crop_threshold", "drop_threshold", "drop_probability"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must be in [0,1]")
        for name in ("initial_lr", "lr_after_drop", "batch_size", "momentum"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.variant not in (VARIANT_FULL, VARIANT_BASELINE):
            raise ConfigError(f"unknown variant {self.variant!r}")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            num_classes=self.num_classes,
            input_size=self.input_size,
            channels=tuple(self.backbone_channels),
            fpn_channels=self.fpn_channels,
            pyramid=tuple(self.pyramid),
        )

    def learning_rate(self, epoch: int) -> float:
        """Initial rate through lr_drop_epoch, the dropped rate afterwards."""
        return self.initial_lr if epoch <= self.lr_drop_epoch else self.lr_after_drop


def total_loss(loss_i: float, loss_s: float, loss_c: float, loss_a: float,
               alpha: float, beta: float, gamma: float) -> float:
    """Weighted sum of ranking, classification, confidence, augment terms."""
    return loss_i + alpha * loss_s + beta * loss_c + gamma * loss_a


@dataclass
class OptState:
    velocity: dict = field(default_factory=dict)

    def ensure(self, params: dict):
        for k, v in params.items():
            if k not in self.velocity:
                self.velocity[k] = np.zeros_like(v)


def sgd_update(model: ModelState, grads: dict, opt: OptState, lr: float,
               momentum: float, weight_decay: float, grad_clip: float) -> None:
    """v <- mu*v + g; p <- p - lr*(v + wd*p). Decay is decoupled from momentum."""
    opt.ensure(model.params)
    if grad_clip > 0:
        total = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
        if total > grad_clip:
            scale = grad_clip / total
            grads = {k: g * scale for k, g in grads.items()}
    for k, p in model.params.items():
        g = grads.get(k)
        if g is None:
            continue
        v = opt.velocity[k]
        v *= momentum
        v += g
        p -= (lr * (v + weight_decay * p)).astype(p.dtype)


def _check_finite(value: float, term: str):
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss term: {term} = {value}")


def _forward_pipeline(model: ModelState, pt: dict, images: list, labels,
                      config: TrainConfig, training: bool, drop_rngs=None,
                      full_graph=False):
    """Build the full-pipeline graph for a batch.

    Returns (loss tensors per term or None, fusion probabilities, per-image
    selected regions, per-image crop boxes). For the baseline variant only
    the classification term and full-image probabilities are produced.
    """
    cfg = model.config
    b = len(images)
    dtype = model.params["classifier.w"].dtype
    labels = np.asarray(labels)
    x = ad.const(images_to_batch(images, cfg, dtype))
    blocks, g_x = backbone_forward(pt, x, cfg)
    probs_x = classifier_probs(pt, g_x)

    if config.variant == VARIANT_BASELINE:
        log_cx = ad.clip_log(ad.pick(probs_x, np.arange(b), labels))
        loss_s = ad.scale(ad.tsum(log_cx), -1.0 / b)
        return {"loss_s": loss_s}, probs_x, [[] for _ in range(b)], [[] for _ in range(b)]

    # navigator: during training the backbone features are constants here so
    # the ranking loss trains the pyramid laterals and scoring heads only;
    # full_graph connects them for whole-formula gradient verification
    blocks_c = blocks if full_graph else [ad.const(blk.data) for blk in blocks]
    pyr = pyramid_forward(pt, blocks_c, cfg)
    scores_t = nav_scores_graph(pt, pyr, cfg)
    anchors = _anchor_cache(cfg)

    selected = []  # per image: list of (anchor_index, ScoredRegion)
    for i in range(b):
        selected.append(propose_with_indices(scores_t.data[i], anchors,
                                             config.regions_m, config.nms_iou_threshold))

    # batched region forward for teacher confidences
    crops, owner = [], []
    for i, sel in enumerate(selected):
        for _, region in sel:
            crops.append(crop_and_resize(images[i], region.box, (cfg.input_size, cfg.input_size)))
            owner.append(i)
    owner = np.asarray(owner)
    xr = ad.const(images_to_batch(crops, cfg, dtype))
    blocks_r, g_r = backbone_forward(pt, xr, cfg)
    probs_r = classifier_probs(pt, g_r)
    conf_r = ad.pick(probs_r, np.arange(len(crops)), labels[owner])
    conf_x = ad.pick(probs_x, np.arange(b), labels)
    log_cr = ad.clip_log(conf_r)
    log_cx = ad.clip_log(conf_x)

    # per-image ranking + confidence losses
    final_maps = blocks_r[len(cfg.channels) - 1].data  # channel map source
    loss_i_terms, loss_c_terms = [], []
    offsets = np.concatenate([[0], np.cumsum([len(s) for s in selected])])
    topk_flat, topk_boxes = [], []  # flat region-row indices per image
    for i, sel in enumerate(selected):
        lo, hi = offsets[i], offsets[i + 1]
        sel_scores = ad.pick(scores_t, np.full(hi - lo, i), [idx for idx, _ in sel])
        conf_vals = conf_r.data[lo:hi]
        loss_i_terms.append(ad.hinge_rank(sel_scores, conf_vals))
        loss_c_terms.append(ad.add(ad.neg(ad.tsum(ad.take_rows(log_cr, np.arange(lo, hi)))),
                                   ad.neg(ad.take_rows(log_cx, [i]))))
        order = sorted(range(len(sel)), key=lambda j: (-conf_vals[j], j))
        topk_flat.append([lo + j for j in order[:config.regions_k]])

    # augmentation: crop (zoom) each top-K region, optionally drop in training
    aug_images, aug_owner = [], []
    for i in range(b):
        boxes_i = []
        for flat in topk_flat[i]:
            region_box = selected[i][flat - offsets[i]][1].box
            amap = normalize_map(final_maps[flat].mean(axis=0), source_region=region_box)
            _, crop_box = crop_mask(amap, config.crop_threshold)
            boxes_i.append(crop_box)
            aug = crop_and_resize(images[i], crop_box, (cfg.input_size, cfg.input_size))
            if training and drop_rngs is not None and drop_rngs[i].random() < config.drop_probability:
                aug = apply_drop(aug, drop_mask(amap, config.drop_threshold))
            aug_images.append(aug)
            aug_owner.append(i)
        topk_boxes.append(boxes_i)
    xa = ad.const(images_to_batch(aug_images, cfg, dtype))
    blocks_a, g_a = backbone_forward(pt, xa, cfg)
    probs_a = classifier_probs(pt, g_a)
    log_ea = ad.clip_log(ad.pick(probs_a, np.arange(len(aug_images)), labels[np.asarray(aug_owner)]))

    k = config.regions_k
    loss_a_terms, fusion_rows = [], []
    aug_offsets = np.concatenate([[0], np.cumsum([len(t) for t in topk_flat])])
    feat = cfg.feature_dim
    for i in range(b):
        lo, hi = aug_offsets[i], aug_offsets[i + 1]
        loss_a_terms.append(ad.add(ad.neg(ad.tsum(ad.take_rows(log_ea, np.arange(lo, hi)))),
                                   ad.neg(ad.take_rows(log_cx, [i]))))
        rows = list(range(lo, hi))
        while len(rows) < k:  # pad by repeating the last surviving region
            rows.append(rows[-1])
        fusion_rows.append(ad.concat([ad.take_rows(g_x, [i]),
                                      ad.reshape(ad.take_rows(g_a, rows), (1, k * feat))], axis=1))
    fused = ad.concat(fusion_rows, axis=0)
    probs_fused = fusion_probs(pt, fused)
    log_ps = ad.clip_log(ad.pick(probs_fused, np.arange(b), labels))

    inv_b = 1.0 / b
    losses = {
        "loss_i": ad.scale(ad.add_many(loss_i_terms), inv_b),
        "loss_s": ad.scale(ad.tsum(log_ps), -inv_b),
        "loss_c": ad.scale(ad.add_many(loss_c_terms), inv_b),
        "loss_a": ad.scale(ad.add_many(loss_a_terms), inv_b),
    }
    regions_out = []
    for i, sel in enumerate(selected):
        lo = offsets[i]
        regions_out.append([
            ScoredRegion(r.box, r.informativeness,
                         float(np.clip(conf_r.data[lo + j], ad.PROB_EPS, 1 - ad.PROB_EPS)))
            for j, (_, r) in enumerate(sel)
        ])
    return losses, probs_fused, regions_out, topk_boxes


_ANCHORS = {}


def _anchor_cache(cfg: ModelConfig):
    key = (cfg.input_size, cfg.pyramid)
    if key not in _ANCHORS:
        _ANCHORS[key] = default_anchors(cfg)
    return _ANCHORS[key]


def train_step(model: ModelState, batch: list, config: TrainConfig,
               opt: OptState, lr: float, drop_rngs=None):
    """One SGD step over a batch of (image, label) pairs.

    Returns the per-term batch-mean loss breakdown; the model is updated in
    place. Raises NumericError naming the offending term on non-finite loss.
    """
    if not batch:
        raise ValueError("empty batch")
    if config.variant == VARIANT_FULL:
        add_fusion_head(model, config.regions_k)
    images = [img for img, _ in batch]
    labels = [lab for _, lab in batch]
    pt = wrap_params(model, trainable=True)
    losses, _, _, _ = _forward_pipeline(model, pt, images, labels, config,
                                        training=True, drop_rngs=drop_rngs)
    breakdown = {k: v.data.item() for k, v in losses.items()}
    for term, value in breakdown.items():
        _check_finite(value, term)
    if config.variant == VARIANT_FULL:
        total = ad.add_many([
            losses["loss_i"],
            ad.scale(losses["loss_s"], config.alpha),
            ad.scale(losses["loss_c"], config.beta),
            ad.scale(losses["loss_a"], config.gamma),
        ])
    else:
        total = losses["loss_s"]
    breakdown["loss_total"] = total.data.item()
    _check_finite(breakdown["loss_total"], "loss_total")
    total.backward()
    grads = {k: t.grad for k, t in pt.items() if t.grad is not None}
    sgd_update(model, grads, opt, lr, config.momentum, config.weight_decay, config.grad_clip)
    return model, breakdown


def predict(model: ModelState, images: list, config: TrainConfig):
    """Deterministic inference (no drop). Returns (probs, regions, crop boxes)."""
    if config.variant == VARIANT_FULL:
        add_fusion_head(model, config.regions_k)
    pt = wrap_params(model, trainable=False)
    all_probs, all_regions, all_boxes = [], [], []
    bs = max(config.batch_size, 16)
    labels_dummy = np.zeros(len(images), dtype=int)
    for lo in range(0, len(images), bs):
        chunk = images[lo:lo + bs]
        _, probs, regions, boxes = _forward_pipeline(
            model, pt, chunk, labels_dummy[:len(chunk)], config, training=False)
        all_probs.append(probs.data)
        all_regions.extend(regions)
        all_boxes.extend(boxes)
    return np.concatenate(all_probs, axis=0), all_regions, all_boxes


def train(model: ModelState, dataset, config: TrainConfig,
          log_path=None, checkpoint_path=None):
    """Epoch loop with seeded shuffling, per-epoch eval, and best-Top-1 checkpoint.

    ``dataset`` provides train_images/train_labels/test_images/test_labels
    (see data.load_split_arrays). Returns (model, list of per-epoch records).
    """
    from .evaluate import topk_accuracy

    if len(dataset.train_images) == 0 or len(dataset.test_images) == 0:
        raise ConfigError("dataset must have non-empty train and test splits")
    opt = OptState()
    records = []
    best_top1 = -1.0
    n = len(dataset.train_images)
    log_file = open(log_path, "a") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            lr = config.learning_rate(epoch)
            order = np.random.default_rng((config.seed, epoch)).permutation(n)
            sums = {}
            steps = 0
            for lo in range(0, n, config.batch_size):
                idx = order[lo:lo + config.batch_size]
                batch = [(dataset.train_images[i], int(dataset.train_labels[i])) for i in idx]
                drop_rngs = [np.random.default_rng((config.seed, epoch, int(i))) for i in idx]
                _, breakdown = train_step(model, batch, config, opt, lr, drop_rngs)
                for k, v in breakdown.items():
                    sums[k] = sums.get(k, 0.0) + v
                steps += 1
            probs, _, _ = predict(model, dataset.test_images, config)
            top1 = topk_accuracy(probs, dataset.test_labels, 1)
            top5 = topk_accuracy(probs, dataset.test_labels, min(5, config.num_classes))
            record = {"epoch": epoch, "lr": lr,
                      **{k: sums[k] / steps for k in sorted(sums)},
                      "top1": top1, "top5": top5}
            records.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            if checkpoint_path and top1 > best_top1:
                best_top1 = top1
                save_checkpoint(model, checkpoint_path,
                                extra={"epoch": epoch, "top1": top1, "top5": top5,
                                       "variant": config.variant})
    finally:
        if log_file:
            log_file.close()
    return model, records
