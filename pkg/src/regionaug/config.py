"""Flat key-value config files for training and synthetic-data specs.

Format: one ``key = value`` pair per line, ``#`` comments, blank lines
ignored. Lists are comma-separated. The full schema is in the README.
"""

from pathlib import Path

from .data import SyntheticSpec
from .geometry import PyramidLevel
from .trainer import ConfigError, TrainConfig

_SCALAR_FIELDS = {
    "num_classes": int,
    "regions_m": int,
    "regions_k": int,
    "crop_threshold": float,
    "drop_threshold": float,
    "alpha": float,
    "beta": float,
    "gamma": float,
    "batch_size": int,
    "momentum": float,
    "weight_decay": float,
    "initial_lr": float,
    "lr_drop_epoch": int,
    "lr_after_drop": float,
    "epochs": int,
    "seed": int,
    "nms_iou_threshold": float,
    "input_size": int,
    "fpn_channels": int,
    "drop_probability": float,
    "grad_clip": float,
    "variant": str,
}

_LIST_FIELDS = {
    "backbone_channels": int,
    "pyramid.strides": int,
    "pyramid.base_sizes": float,
    "pyramid.scales": float,
    "pyramid.ratios": float,
}

def _parse_palette(value: str) -> tuple:
    """Semicolon-separated r,g,b triples, e.g. ``235,235,235; 30,30,30``."""
    colors = []
    for part in value.split(";"):
        rgb = tuple(int(v.strip()) for v in part.split(","))
        if len(rgb) != 3 or not all(0 <= v <= 255 for v in rgb):
            raise ConfigError(f"bad palette color: {part!r}")
        colors.append(rgb)
    return tuple(colors)


_SPEC_FIELDS = {
    "num_classes": int,
    "images_per_class": int,
    "canvas_size": int,
    "clutter_density": float,
    "scale_min": float,
    "scale_max": float,
    "rotation_min": float,
    "rotation_max": float,
    "glyph_palette": _parse_palette,
    "seed": int,
}


def read_kv(path) -> dict:
    pairs = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        pairs[key] = value
    return pairs


def parse_train_config(path) -> TrainConfig:
    pairs = read_kv(path)
    kwargs = {}
    pyramid_parts = {}
    for key, value in pairs.items():
        if key in _SCALAR_FIELDS:
            kwargs[key] = _SCALAR_FIELDS[key](value)
        elif key in _LIST_FIELDS:
            items = tuple(_LIST_FIELDS[key](v.strip()) for v in value.split(","))
            if key.startswith("pyramid."):
                pyramid_parts[key.split(".", 1)[1]] = items
            else:
                kwargs[key] = items
        else:
            raise ConfigError(f"unknown config key: {key}")
    if pyramid_parts:
        strides = pyramid_parts.get("strides")
        bases = pyramid_parts.get("base_sizes")
        if not strides or not bases or len(strides) != len(bases):
            raise ConfigError("pyramid.strides and pyramid.base_sizes must be equal-length lists")
        scales = pyramid_parts.get("scales", (1.0, 1.26))
        ratios = pyramid_parts.get("ratios", (0.5, 1.0, 2.0))
        kwargs["pyramid"] = tuple(
            PyramidLevel(s, b, scales, ratios) for s, b in zip(strides, bases)
        )
    return TrainConfig(**kwargs)


def parse_synthetic_spec(path) -> SyntheticSpec:
    pairs = read_kv(path)
    kwargs = {}
    scale = {}
    rotation = {}
    for key, value in pairs.items():
        if key not in _SPEC_FIELDS:
            raise ConfigError(f"unknown synthetic-spec key: {key}")
        v = _SPEC_FIELDS[key](value)
        if key.startswith("scale_"):
            scale[key] = v
        elif key.startswith("rotation_"):
            rotation[key] = v
        else:
            kwargs[key] = v
    if scale:
        kwargs["scale_range"] = (scale.get("scale_min", 0.25), scale.get("scale_max", 0.45))
    if rotation:
        kwargs["rotation_range"] = (rotation.get("rotation_min", -25.0),
                                    rotation.get("rotation_max", 25.0))
    return SyntheticSpec(**kwargs)


def config_echo(config: TrainConfig) -> str:
    """Canonical flat rendering of every config field, for run reproducibility."""
    lines = []
    for key in sorted(_SCALAR_FIELDS):
        lines.append(f"{key} = {getattr(config, key)}")
    lines.append("backbone_channels = " + ",".join(str(c) for c in config.backbone_channels))
    lines.append("pyramid.strides = " + ",".join(str(l.stride) for l in config.pyramid))
    lines.append("pyramid.base_sizes = " + ",".join(str(l.base_size) for l in config.pyramid))
    lines.append("pyramid.scales = " + ",".join(str(s) for s in config.pyramid[0].scales))
    lines.append("pyramid.ratios = " + ",".join(str(r) for r in config.pyramid[0].ratios))
    return "\n".join(lines) + "\n"


def config_to_dict(config: TrainConfig) -> dict:
    d = {key: getattr(config, key) for key in _SCALAR_FIELDS}
    d["backbone_channels"] = list(config.backbone_channels)
    d["pyramid"] = [
        {"stride": l.stride, "base_size": l.base_size,
         "scales": list(l.scales), "ratios": list(l.ratios)}
        for l in config.pyramid
    ]
    return d


def config_from_dict(d: dict) -> TrainConfig:
    kwargs = {k: v for k, v in d.items() if k in _SCALAR_FIELDS}
    kwargs["backbone_channels"] = tuple(d["backbone_channels"])
    kwargs["pyramid"] = tuple(
        PyramidLevel(l["stride"], l["base_size"], tuple(l["scales"]), tuple(l["ratios"]))
        for l in d["pyramid"]
    )
    return TrainConfig(**kwargs)
