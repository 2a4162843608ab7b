"""Command-line entry points: train, eval, visualize, synth, stats."""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DATA_ROOT_ENV = "REGIONAUG_DATA_ROOT"
METHOD_NAME = "region-fusion-cnn"


def _data_path(args) -> str:
    path = args.data or os.environ.get(DATA_ROOT_ENV)
    if not path:
        raise SystemExit(f"no --data given and {DATA_ROOT_ENV} unset")
    return path


def cmd_train(args) -> int:
    from . import config as cfgmod
    from . import data as datamod
    from .evaluate import build_report, save_roc_points
    from .network import init_model, save_checkpoint
    from .trainer import ConfigError, NumericError, predict, train

    try:
        config = cfgmod.parse_train_config(args.config) if args.config else cfgmod.TrainConfig()
        if args.seed is not None:
            config = cfgmod.config_from_dict({**cfgmod.config_to_dict(config), "seed": args.seed})
    except (ConfigError, OSError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = datamod.load_manifest(_data_path(args))
        manifest = datamod.split_70_30(manifest, config.seed)
        if config.num_classes != len(manifest.classes):
            config = cfgmod.config_from_dict({**cfgmod.config_to_dict(config),
                                              "num_classes": len(manifest.classes)})
        arrays = datamod.load_split_arrays(manifest, config.input_size)
    except datamod.DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_echo.txt").write_text(cfgmod.config_echo(config))
    manifest.save(out / "manifest.json")
    model = init_model(config.model_config(), seed=config.seed)
    try:
        model, records = train(model, arrays, config,
                               log_path=out / "epochs.jsonl",
                               checkpoint_path=out / "best.drna")
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    save_checkpoint(model, out / "final.drna",
                    extra={"config": cfgmod.config_to_dict(config), "variant": config.variant})
    if records:
        probs, _, _ = predict(model, arrays.test_images, config)
        report = build_report(probs, arrays.test_labels, arrays.class_names,
                              config_echo=cfgmod.config_to_dict(config))
        report.save(out / "report.json")
        save_roc_points(report.roc_points, out / "roc.tsv")
        print(f"{METHOD_NAME}: Top-1 {report.top1 * 100:.2f}  Top-5 {report.top5 * 100:.2f}")
    else:
        save_checkpoint(model, out / "best.drna",
                        extra={"config": cfgmod.config_to_dict(config), "variant": config.variant})
    return EXIT_OK


def _config_for_checkpoint(checkpoint_path, args):
    from . import config as cfgmod
    from .network import load_checkpoint

    model, extra = load_checkpoint(checkpoint_path)
    if "config" in extra:
        config = cfgmod.config_from_dict(extra["config"])
    else:
        config = cfgmod.TrainConfig(num_classes=model.config.num_classes,
                                    input_size=model.config.input_size)
    if args.config:
        wanted = cfgmod.parse_train_config(args.config)
        for field in ("num_classes", "input_size", "fpn_channels"):
            have = getattr(config, field)
            want = getattr(wanted, field)
            if have != want:
                raise cfgmod.ConfigError(
                    f"checkpoint/config mismatch on {field}: checkpoint {have}, config {want}")
        config = wanted
    if "variant" in extra:
        config = cfgmod.config_from_dict({**cfgmod.config_to_dict(config),
                                          "variant": extra["variant"]})
    return model, config


def cmd_eval(args) -> int:
    from . import config as cfgmod
    from . import data as datamod
    from .evaluate import build_report, save_roc_points
    from .trainer import predict

    try:
        model, config = _config_for_checkpoint(args.checkpoint, args)
    except cfgmod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_DATA
    try:
        manifest = datamod.load_manifest(_data_path(args))
        manifest = datamod.split_70_30(manifest, config.seed)
        arrays = datamod.load_split_arrays(manifest, config.input_size)
    except datamod.DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    probs, _, _ = predict(model, arrays.test_images, config)
    report = build_report(probs, arrays.test_labels, arrays.class_names,
                          config_echo=cfgmod.config_to_dict(config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    save_roc_points(report.roc_points, out / "roc.tsv")
    name = METHOD_NAME if config.variant == "region_fusion" else "backbone-only"
    print(f"{'Method':<24}{'Top-1':>8}{'Top-5':>8}")
    print(f"{name:<24}{report.top1 * 100:>8.2f}{report.top5 * 100:>8.2f}")
    return EXIT_OK


def cmd_visualize(args) -> int:
    from . import config as cfgmod
    from . import data as datamod
    from .evaluate import render_region_overlays

    try:
        model, config = _config_for_checkpoint(args.checkpoint, args)
    except cfgmod.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return EXIT_DATA
    image_dir = Path(_data_path(args))
    files = sorted(p for p in image_dir.rglob("*")
                   if p.suffix.lower() in datamod.IMAGE_EXTENSIONS)
    if not files:
        print("no images to visualize")
        return EXIT_OK
    images = [datamod.decode_image(p, config.input_size) for p in files]
    render_region_overlays(model, images, args.out, config)
    print(f"wrote {len(images)} overlays to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from . import config as cfgmod
    from . import data as datamod

    try:
        spec = cfgmod.parse_synthetic_spec(args.config) if args.config else datamod.SyntheticSpec()
        if args.seed is not None:
            spec = datamod.SyntheticSpec(**{**spec.__dict__, "seed": args.seed})
    except (cfgmod.ConfigError, datamod.DataError, OSError, TypeError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        manifest = datamod.generate_synthetic(spec, args.out, overwrite=args.overwrite)
    except datamod.DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    total = sum(len(c.paths) for c in manifest.classes)
    print(f"wrote {total} images in {len(manifest.classes)} classes to {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    from . import data as datamod

    try:
        manifest = datamod.load_manifest(_data_path(args))
    except datamod.DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    stats = datamod.dataset_stats(manifest)
    print(f"{'Root category':<20}{'Classes':>10}{'Images':>10}")
    for root, row in sorted(stats["per_root_category"].items()):
        print(f"{root:<20}{row['classes']:>10}{row['images']:>10}")
    print(f"{'Total':<20}{stats['num_classes']:>10}{stats['num_images']:>10}")
    print(f"images/class: min {stats['min_images_per_class']}"
          f" max {stats['max_images_per_class']}"
          f" mean {stats['mean_images_per_class']:.1f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regionaug",
                                     description="Region-navigating image classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True, out=True, checkpoint=False):
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--overwrite", action="store_true")
        if data:
            p.add_argument("--data", default=None)
        if out:
            p.add_argument("--out", required=True)
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    common(sub.add_parser("train", help="train a model on a dataset tree"))
    common(sub.add_parser("eval", help="evaluate a checkpoint"), checkpoint=True)
    common(sub.add_parser("visualize", help="draw region overlays"), checkpoint=True)
    common(sub.add_parser("synth", help="generate the synthetic benchmark"), data=False)
    common(sub.add_parser("stats", help="dataset statistics"), out=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {
        "train": cmd_train,
        "eval": cmd_eval,
        "visualize": cmd_visualize,
        "synth": cmd_synth,
        "stats": cmd_stats,
    }[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
