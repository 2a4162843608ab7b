"""Backbone, feature pyramid, shared classifier head, and checkpoint IO.

Images at the public API are (H, W, C) float arrays in [0, 1]; internally the
network runs on (N, C, H, W) batches.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kernels
from .geometry import BoxRegion, DEFAULT_PYRAMID, PyramidLevel

CHECKPOINT_MAGIC = b"RGAW01\n"


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int
    input_size: int = 64
    channels: tuple = (32, 64, 128, 256)
    fpn_channels: int = 64
    fusion_hidden_factor: int = 2
    norm_groups: int = 8
    pyramid: tuple = DEFAULT_PYRAMID

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    def anchors_per_cell(self) -> int:
        lv = self.pyramid[0]
        return len(lv.scales) * len(lv.ratios)

    def block_groups(self, channels: int) -> int:
        # largest divisor of the channel count not exceeding norm_groups
        import math

        return math.gcd(self.norm_groups, channels)

    def level_block(self, stride: int) -> int:
        # backbone block k halves resolution k times: stride of block k is 2**k
        k = int(np.log2(stride))
        if 2 ** k != stride or not (1 <= k <= len(self.channels) + 1):
            raise ShapeError(f"unsupported pyramid stride {stride}")
        return k


@dataclass
class FeaturePyramid:
    """Per-level maps ordered fine-to-coarse plus the pooled global feature."""

    levels: list
    global_feature: np.ndarray


@dataclass
class ModelState:
    config: ModelConfig
    params: dict
    seed: int

    def copy(self) -> "ModelState":
        return ModelState(self.config, {k: v.copy() for k, v in self.params.items()}, self.seed)

    def astype(self, dtype) -> "ModelState":
        return ModelState(self.config, {k: v.astype(dtype) for k, v in self.params.items()}, self.seed)


def init_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelState:
    """He fan-in initialization for conv/linear weights, zero biases."""
    rng = np.random.default_rng(seed)
    p = {}

    def conv(name, cin, cout, k):
        fan_in = cin * k * k
        p[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin, k, k)).astype(dtype)
        p[f"{name}.b"] = np.zeros(cout, dtype=dtype)

    def lin(name, din, dout):
        p[f"{name}.w"] = rng.normal(0.0, np.sqrt(2.0 / din), (din, dout)).astype(dtype)
        p[f"{name}.b"] = np.zeros(dout, dtype=dtype)

    def norm(name, cout):
        p[f"{name}.g"] = np.ones(cout, dtype=dtype)
        p[f"{name}.beta"] = np.zeros(cout, dtype=dtype)

    cin = 3
    for i, cout in enumerate(config.channels, start=1):
        conv(f"block{i}", cin, cout, 3)
        norm(f"block{i}", cout)
        cin = cout
    # extra stride-2 block for the coarsest pyramid level
    conv(f"block{len(config.channels) + 1}", cin, cin, 3)
    norm(f"block{len(config.channels) + 1}", cin)

    for li, level in enumerate(config.pyramid):
        src_channels = _block_channels(config, config.level_block(level.stride))
        conv(f"lat{li}", src_channels, config.fpn_channels, 1)
        conv(f"nav{li}.hidden", config.fpn_channels, config.fpn_channels, 3)
        conv(f"nav{li}.out", config.fpn_channels, config.anchors_per_cell(), 1)

    lin("classifier", config.feature_dim, config.num_classes)
    # fusion over the full-image feature plus K region features; sized lazily
    # would complicate checkpoints, so K is fixed at model build time via
    # fusion_inputs below.
    return ModelState(config, p, seed)


def _block_channels(config: ModelConfig, k: int) -> int:
    if k <= len(config.channels):
        return config.channels[k - 1]
    return config.channels[-1]


def add_fusion_head(model: ModelState, num_regions: int, seed_offset: int = 1) -> None:
    """Create the fusion head for ``num_regions`` region features (idempotent)."""
    cfg = model.config
    din = (num_regions + 1) * cfg.feature_dim
    if "fusion.hidden.w" in model.params and model.params["fusion.hidden.w"].shape[0] == din:
        return
    dtype = model.params["classifier.w"].dtype
    rng = np.random.default_rng(model.seed + seed_offset)
    hidden = cfg.fusion_hidden_factor * cfg.feature_dim
    model.params["fusion.hidden.w"] = rng.normal(0.0, np.sqrt(2.0 / din), (din, hidden)).astype(dtype)
    model.params["fusion.hidden.b"] = np.zeros(hidden, dtype=dtype)
    model.params["fusion.out.w"] = rng.normal(0.0, np.sqrt(2.0 / hidden), (hidden, cfg.num_classes)).astype(dtype)
    model.params["fusion.out.b"] = np.zeros(cfg.num_classes, dtype=dtype)


def wrap_params(model: ModelState, trainable: bool) -> dict:
    mk = ad.param if trainable else ad.const
    return {k: mk(v) for k, v in model.params.items()}


# ---------------------------------------------------------------------------
# forward graphs
# ---------------------------------------------------------------------------

def backbone_forward(pt: dict, x: ad.Tensor, config: ModelConfig):
    """Returns (block outputs b1..b_{n+1}, global feature (N,F))."""
    blocks = []
    h = x
    n_blocks = len(config.channels) + 1
    for i in range(1, n_blocks + 1):
        h = ad.conv2d(h, pt[f"block{i}.w"], pt[f"block{i}.b"], stride=2, pad=1)
        groups = config.block_groups(h.data.shape[1])
        h = ad.relu(ad.group_norm(h, pt[f"block{i}.g"], pt[f"block{i}.beta"], groups))
        blocks.append(h)
    g = ad.global_avg_pool(blocks[len(config.channels) - 1])
    return blocks, g


def pyramid_forward(pt: dict, blocks, config: ModelConfig):
    """Top-down FPN over the configured strides; returns fine-to-coarse levels."""
    laterals = []
    for li, level in enumerate(config.pyramid):
        src = blocks[config.level_block(level.stride) - 1]
        laterals.append(ad.conv2d(src, pt[f"lat{li}.w"], pt[f"lat{li}.b"], stride=1, pad=0))
    tops = [None] * len(laterals)
    tops[-1] = laterals[-1]
    for li in range(len(laterals) - 2, -1, -1):
        tops[li] = ad.add(laterals[li], ad.upsample2x(tops[li + 1]))
    return tops


def classifier_probs(pt: dict, feat: ad.Tensor) -> ad.Tensor:
    return ad.softmax_rows(ad.linear(feat, pt["classifier.w"], pt["classifier.b"]))


def fusion_probs(pt: dict, feat: ad.Tensor) -> ad.Tensor:
    h = ad.relu(ad.linear(feat, pt["fusion.hidden.w"], pt["fusion.hidden.b"]))
    return ad.softmax_rows(ad.linear(h, pt["fusion.out.w"], pt["fusion.out.b"]))


def images_to_batch(images, config: ModelConfig, dtype) -> np.ndarray:
    """Stack (H,W,C) images in [0,1] into a centered (N,C,H,W) batch in [-1,1]."""
    s = config.input_size
    batch = np.empty((len(images), 3, s, s), dtype=dtype)
    for i, img in enumerate(images):
        if img.shape != (s, s, 3):
            raise ShapeError(f"expected {(s, s, 3)} image, got {img.shape}")
        batch[i] = img.transpose(2, 0, 1)
    batch *= 2.0
    batch -= 1.0
    return batch


# ---------------------------------------------------------------------------
# public inference API
# ---------------------------------------------------------------------------

def extract_features(model: ModelState, image: np.ndarray) -> FeaturePyramid:
    dtype = model.params["classifier.w"].dtype
    x = ad.const(images_to_batch([image], model.config, dtype))
    pt = wrap_params(model, trainable=False)
    blocks, g = backbone_forward(pt, x, model.config)
    levels = [lvl.data[0] for lvl in pyramid_forward(pt, blocks, model.config)]
    return FeaturePyramid(levels=levels, global_feature=g.data[0])


def confidence(model: ModelState, image: np.ndarray, true_class: int) -> float:
    """Softmax probability of the true class for a full image or region crop."""
    if not (0 <= true_class < model.config.num_classes):
        raise ValueError(f"class id {true_class} out of range")
    s = model.config.input_size
    if image.shape != (s, s, 3):
        image = crop_and_resize(image, BoxRegion(0, 0, image.shape[1], image.shape[0]), (s, s))
    dtype = model.params["classifier.w"].dtype
    x = ad.const(images_to_batch([image], model.config, dtype))
    pt = wrap_params(model, trainable=False)
    _, g = backbone_forward(pt, x, model.config)
    p = classifier_probs(pt, g).data[0, true_class]
    return float(np.clip(p, ad.PROB_EPS, 1.0 - ad.PROB_EPS))


def crop_and_resize(image: np.ndarray, box: BoxRegion, out_size) -> np.ndarray:
    """Bilinear resample of the box contents of an (H,W,C) image to out_size."""
    h, w = image.shape[:2]
    y1 = int(np.clip(np.floor(box.y1), 0, h - 1))
    y2 = int(np.clip(np.ceil(box.y2), y1 + 1, h))
    x1 = int(np.clip(np.floor(box.x1), 0, w - 1))
    x2 = int(np.clip(np.ceil(box.x2), x1 + 1, w))
    patch = np.ascontiguousarray(image[y1:y2, x1:x2].transpose(2, 0, 1))
    out = kernels.bilinear_resize(patch, out_size[0], out_size[1])
    return out.transpose(1, 2, 0)


# ---------------------------------------------------------------------------
# checkpoints: header JSON + named little-endian float32 arrays (.drna)
# ---------------------------------------------------------------------------

def save_checkpoint(model: ModelState, path, extra: dict | None = None) -> None:
    cfg = model.config
    header = {
        "config": {
            "num_classes": cfg.num_classes,
            "input_size": cfg.input_size,
            "channels": list(cfg.channels),
            "fpn_channels": cfg.fpn_channels,
            "fusion_hidden_factor": cfg.fusion_hidden_factor,
            "pyramid": [
                {"stride": l.stride, "base_size": l.base_size,
                 "scales": list(l.scales), "ratios": list(l.ratios)}
                for l in cfg.pyramid
            ],
        },
        "seed": model.seed,
        "arrays": [{"name": k, "shape": list(v.shape)} for k, v in sorted(model.params.items())],
        "extra": extra or {},
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<q", len(blob)))
        f.write(blob)
        for k in sorted(model.params):
            f.write(np.ascontiguousarray(model.params[k], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelState, dict]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a model checkpoint: {path}")
        (hlen,) = struct.unpack("<q", f.read(8))
        header = json.loads(f.read(hlen))
        c = header["config"]
        config = ModelConfig(
            num_classes=c["num_classes"],
            input_size=c["input_size"],
            channels=tuple(c["channels"]),
            fpn_channels=c["fpn_channels"],
            fusion_hidden_factor=c["fusion_hidden_factor"],
            pyramid=tuple(
                PyramidLevel(l["stride"], l["base_size"], tuple(l["scales"]), tuple(l["ratios"]))
                for l in c["pyramid"]
            ),
        )
        params = {}
        for spec in header["arrays"]:
            n = int(np.prod(spec["shape"])) if spec["shape"] else 1
            arr = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(spec["shape"])
            params[spec["name"]] = arr.astype(np.float32)
    return ModelState(config, params, header["seed"]), header["extra"]
