"""Dataset ingestion for two-level directory trees, stratified 70/30 splits,
dataset statistics, and a synthetic glyph benchmark generator."""

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp"}

GLYPH_ALPHABET = (
    "circle", "square", "triangle", "cross", "ring",
    "diamond", "star", "xmark", "bars", "arrow",
)


class DataError(ValueError):
    pass


@dataclass
class ClassEntry:
    name: str
    root_category: str
    paths: list


@dataclass
class DatasetManifest:
    root: str
    classes: list  # ClassEntry, sorted by class name
    split: dict = field(default_factory=dict)  # path -> "train" | "test"
    seed: int | None = None

    def class_names(self):
        return [c.name for c in self.classes]

    def items(self, subset=None):
        """(path, class_id) pairs, optionally restricted to one split."""
        out = []
        for cid, entry in enumerate(self.classes):
            for p in entry.paths:
                if subset is None or self.split.get(p) == subset:
                    out.append((p, cid))
        return out

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for entry in self.classes:
            h.update(entry.root_category.encode())
            h.update(entry.name.encode())
            for p in entry.paths:
                h.update(p.encode())
                h.update(self.split.get(p, "").encode())
        return h.hexdigest()

    def save(self, path):
        doc = {
            "root": self.root,
            "seed": self.seed,
            "classes": [{"name": c.name, "root_category": c.root_category, "paths": c.paths}
                        for c in self.classes],
            "split": self.split,
            "content_hash": self.content_hash(),
        }
        Path(path).write_text(json.dumps(doc, indent=1))

    @staticmethod
    def load(path) -> "DatasetManifest":
        doc = json.loads(Path(path).read_text())
        m = DatasetManifest(
            root=doc["root"],
            classes=[ClassEntry(c["name"], c["root_category"], c["paths"]) for c in doc["classes"]],
            split=doc["split"],
            seed=doc["seed"],
        )
        if m.content_hash() != doc["content_hash"]:
            raise DataError(f"manifest content hash mismatch: {path}")
        return m


def load_manifest(root_path) -> DatasetManifest:
    """Scan a <root>/<root_category>/<class_name>/<images> tree.

    Classes are sorted lexicographically and ids assigned by that order.
    Unreadable images are skipped with a warning; an empty class directory is
    an error naming the class.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DataError(f"dataset root not found: {root}")
    classes = []
    skipped = 0
    for cat_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for class_dir in sorted(p for p in cat_dir.iterdir() if p.is_dir()):
            paths = []
            for f in sorted(class_dir.iterdir()):
                if f.suffix.lower() not in IMAGE_EXTENSIONS:
                    continue
                try:
                    with Image.open(f) as im:
                        im.verify()
                    paths.append(str(f))
                except Exception:
                    skipped += 1
            if not paths:
                raise DataError(f"class directory has no readable images: {cat_dir.name}/{class_dir.name}")
            classes.append(ClassEntry(class_dir.name, cat_dir.name, paths))
    if skipped:
        warnings.warn(f"skipped {skipped} unreadable image(s)")
    if not classes:
        raise DataError(f"no class directories under {root}")
    classes.sort(key=lambda c: c.name)
    return DatasetManifest(root=str(root), classes=classes)


def split_70_30(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Per-class seeded shuffle; the first ceil(0.7 n) images go to train."""
    split = {}
    for entry in manifest.classes:
        name_key = int.from_bytes(hashlib.sha256(entry.name.encode()).digest()[:8], "little")
        order = np.random.default_rng((seed, name_key)).permutation(len(entry.paths))
        n_train = math.ceil(0.7 * len(entry.paths))
        if len(entry.paths) == 1:
            warnings.warn(f"class {entry.name} has a single image; test split is empty")
        for rank, idx in enumerate(order):
            split[entry.paths[idx]] = "train" if rank < n_train else "test"
    return DatasetManifest(manifest.root, manifest.classes, split, seed)


def dataset_stats(manifest: DatasetManifest) -> dict:
    per_root = {}
    per_class = {}
    for entry in manifest.classes:
        r = per_root.setdefault(entry.root_category, {"classes": 0, "images": 0})
        r["classes"] += 1
        r["images"] += len(entry.paths)
        per_class[entry.name] = len(entry.paths)
    counts = np.array(list(per_class.values()))
    return {
        "per_root_category": per_root,
        "per_class_images": per_class,
        "num_classes": len(manifest.classes),
        "num_images": int(counts.sum()),
        "min_images_per_class": int(counts.min()),
        "max_images_per_class": int(counts.max()),
        "mean_images_per_class": float(counts.mean()),
    }


# ---------------------------------------------------------------------------
# synthetic benchmark generator
# ---------------------------------------------------------------------------

@dataclass
class SyntheticSpec:
    num_classes: int = 10
    images_per_class: int = 60
    canvas_size: int = 64
    glyph_alphabet: tuple = GLYPH_ALPHABET
    clutter_density: float = 6.0  # expected clutter marks per image
    scale_range: tuple = (0.25, 0.45)  # glyph side as a canvas fraction
    rotation_range: tuple = (-25.0, 25.0)
    background_textures: tuple = ("noise", "gradient", "blotch")
    glyph_palette: tuple = ()  # empty -> full built-in palette
    seed: int = 0

    def __post_init__(self):
        if self.num_classes > len(self.glyph_alphabet):
            raise DataError("not enough glyphs for the requested class count")
        lo, hi = self.scale_range
        if not (0.23 <= lo <= hi <= 0.77):
            # keeps glyph area within roughly 5%..60% of the canvas
            raise DataError("scale_range must lie within [0.23, 0.77]")


_PALETTE = (
    (220, 50, 50), (50, 180, 60), (60, 90, 220), (230, 160, 30),
    (160, 60, 200), (40, 190, 190), (240, 240, 240), (30, 30, 30),
)


def _draw_glyph(shape: str, size: int, color, rotation: float) -> Image.Image:
    """Render one glyph as an RGBA layer, supersampled then rotated."""
    ss = 4
    s = size * ss
    img = Image.new("RGBA", (s, s), (0, 0, 0, 0))
    d = ImageDraw.Draw(img)
    m = s // 10
    lw = max(s // 8, 1)
    c = (*color, 255)
    if shape == "circle":
        d.ellipse([m, m, s - m, s - m], fill=c)
    elif shape == "square":
        d.rectangle([m, m, s - m, s - m], fill=c)
    elif shape == "triangle":
        d.polygon([(s // 2, m), (s - m, s - m), (m, s - m)], fill=c)
    elif shape == "cross":
        t = s // 3
        d.rectangle([t, m, s - t, s - m], fill=c)
        d.rectangle([m, t, s - m, s - t], fill=c)
    elif shape == "ring":
        d.ellipse([m, m, s - m, s - m], fill=c)
        hole = s // 4
        d.ellipse([hole, hole, s - hole, s - hole], fill=(0, 0, 0, 0))
    elif shape == "diamond":
        d.polygon([(s // 2, m), (s - m, s // 2), (s // 2, s - m), (m, s // 2)], fill=c)
    elif shape == "star":
        cx = cy = s / 2
        r1, r2 = s / 2 - m, (s / 2 - m) * 0.45
        pts = []
        for i in range(10):
            r = r1 if i % 2 == 0 else r2
            a = math.pi * i / 5 - math.pi / 2
            pts.append((cx + r * math.cos(a), cy + r * math.sin(a)))
        d.polygon(pts, fill=c)
    elif shape == "xmark":
        d.line([m, m, s - m, s - m], fill=c, width=lw * 2)
        d.line([s - m, m, m, s - m], fill=c, width=lw * 2)
    elif shape == "bars":
        bar = (s - 2 * m) // 5
        for i in range(3):
            y = m + i * 2 * bar
            d.rectangle([m, y, s - m, y + bar], fill=c)
    elif shape == "arrow":
        d.polygon([(s // 2, m), (s - m, s // 2), (2 * s // 3, s // 2),
                   (2 * s // 3, s - m), (s // 3, s - m), (s // 3, s // 2), (m, s // 2)], fill=c)
    else:
        raise DataError(f"unknown glyph shape: {shape}")
    img = img.rotate(rotation, resample=Image.BILINEAR, expand=False)
    return img.resize((size, size), Image.BILINEAR)


def _background(rng, size: int, textures) -> Image.Image:
    kind = textures[rng.integers(len(textures))]
    base = rng.integers(40, 200, 3)
    if kind == "gradient":
        ramp = np.linspace(0, rng.integers(30, 90), size)
        axis = rng.integers(2)
        grid = ramp[:, None] if axis == 0 else ramp[None, :]
        arr = np.clip(base[None, None, :] + grid[:, :, None], 0, 255)
    elif kind == "blotch":
        coarse = rng.integers(-50, 50, (4, 4, 3))
        img = Image.fromarray(np.uint8(np.clip(coarse + base, 0, 255)), "RGB")
        return img.resize((size, size), Image.BILINEAR)
    else:
        noise = rng.normal(0, 18, (size, size, 3))
        arr = np.clip(base[None, None, :] + noise, 0, 255)
    return Image.fromarray(arr.astype(np.uint8), "RGB")


def _add_clutter(rng, img: Image.Image, density: float) -> None:
    d = ImageDraw.Draw(img)
    size = img.size[0]
    n = rng.poisson(density)
    for _ in range(n):
        color = tuple(int(v) for v in rng.integers(0, 256, 3))
        x, y = rng.integers(0, size, 2)
        ext = int(rng.integers(2, max(3, size // 8)))
        kind = rng.integers(3)
        if kind == 0:
            d.rectangle([x, y, min(x + ext, size - 1), min(y + ext, size - 1)], fill=color)
        elif kind == 1:
            x2, y2 = rng.integers(0, size, 2)
            d.line([x, y, int(x2), int(y2)], fill=color, width=2)
        else:
            d.ellipse([x, y, x + max(ext // 2, 2), y + max(ext // 2, 2)], fill=color)


def synthesize_image(spec: SyntheticSpec, class_idx: int, image_idx: int):
    """Deterministically render one sample; returns (RGB image, glyph mask)."""
    rng = np.random.default_rng((spec.seed, class_idx, image_idx))
    size = spec.canvas_size
    img = _background(rng, size, spec.background_textures)
    _add_clutter(rng, img, spec.clutter_density)
    frac = rng.uniform(*spec.scale_range)
    gsize = max(int(round(frac * size)), 4)
    rotation = rng.uniform(*spec.rotation_range)
    palette = spec.glyph_palette or _PALETTE
    color = palette[rng.integers(len(palette))]
    glyph = _draw_glyph(spec.glyph_alphabet[class_idx], gsize, color, rotation)
    x = int(rng.integers(0, size - gsize + 1))
    y = int(rng.integers(0, size - gsize + 1))
    img.paste(glyph, (x, y), glyph)
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[y:y + gsize, x:x + gsize] = (np.asarray(glyph)[:, :, 3] > 0)
    return img, mask


def generate_synthetic(spec: SyntheticSpec, out_path, overwrite: bool = False) -> DatasetManifest:
    """Write a synthetic glyph dataset as a <root>/Synthetic/<class>/ tree."""
    out = Path(out_path)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise DataError(f"output directory exists and is not empty: {out}")
    for ci in range(spec.num_classes):
        cdir = out / "Synthetic" / f"glyph_{spec.glyph_alphabet[ci]}"
        cdir.mkdir(parents=True, exist_ok=True)
        for ii in range(spec.images_per_class):
            img, _ = synthesize_image(spec, ci, ii)
            img.save(cdir / f"img_{ii:05d}.png")
    return load_manifest(out)


# ---------------------------------------------------------------------------
# decode helpers for training
# ---------------------------------------------------------------------------

@dataclass
class SplitArrays:
    train_images: list
    train_labels: np.ndarray
    test_images: list
    test_labels: np.ndarray
    class_names: list


def decode_image(path, input_size: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB").resize((input_size, input_size), Image.BILINEAR)
        return np.asarray(im, dtype=np.float64) / 255.0


def load_split_arrays(manifest: DatasetManifest, input_size: int) -> SplitArrays:
    if not manifest.split:
        raise DataError("manifest has no train/test split; call split_70_30 first")
    out = {"train": ([], []), "test": ([], [])}
    for subset in ("train", "test"):
        imgs, labels = out[subset]
        for path, cid in manifest.items(subset):
            imgs.append(decode_image(path, input_size))
            labels.append(cid)
    return SplitArrays(
        train_images=out["train"][0],
        train_labels=np.asarray(out["train"][1], dtype=int),
        test_images=out["test"][0],
        test_labels=np.asarray(out["test"][1], dtype=int),
        class_names=manifest.class_names(),
    )
