"""Folder-per-class image datasets, the synthetic toy generator and batch streams."""
from __future__ import annotations

import colorsys
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp", ".gif", ".tif", ".tiff"}
TEST_FRACTION = 0.1


class DatasetError(ValueError):
    pass


class ClassVocabulary:
    """Ordered class names with a dense name <-> index map."""

    def __init__(self, names):
        names = list(names)
        if len(set(names)) != len(names):
            raise DatasetError("class names must be unique")
        self.names = names
        self._index = {n: i for i, n in enumerate(names)}

    def __len__(self):
        return len(self.names)

    def __eq__(self, other):
        return isinstance(other, ClassVocabulary) and self.names == other.names

    def __repr__(self):
        return f"ClassVocabulary({self.names!r})"

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise DatasetError(f"unknown class {name!r}; known classes: {', '.join(self.names)}") from None

    def name(self, index: int) -> str:
        return self.names[index]


@dataclass
class LabeledBatch:
    images: torch.Tensor
    labels: torch.Tensor

    def __post_init__(self):
        if self.images.dim() != 4 or self.images.shape[1] != 3:
            raise DatasetError(f"images must be N x 3 x H x W, got {tuple(self.images.shape)}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DatasetError("images and labels disagree on batch size")
        if self.images.numel() and (self.images.min() < -1 or self.images.max() > 1):
            raise DatasetError("image values must lie in [-1, 1]")

    def __len__(self):
        return self.images.shape[0]


@dataclass
class DatasetHandle:
    images: np.ndarray            # N x 3 x H x W float32 in [-1, 1]
    labels: np.ndarray            # N int64
    vocab: ClassVocabulary
    train_idx: np.ndarray
    test_idx: np.ndarray
    resolution: int
    source: str = ""
    skipped: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.vocab)

    def indices(self, split: str) -> np.ndarray:
        if split == "train":
            return self.train_idx
        if split == "test":
            return self.test_idx
        if split == "all":
            return np.arange(len(self.labels))
        raise DatasetError(f"unknown split {split!r} (expected 'train', 'test' or 'all')")

    def split(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.indices(split)
        return self.images[idx], self.labels[idx]

    def class_counts(self, split: str = "all") -> list[int]:
        labels = self.labels[self.indices(split)]
        return np.bincount(labels, minlength=self.num_classes).tolist()

    def class_images(self, split: str, c: int) -> np.ndarray:
        idx = self.indices(split)
        return self.images[idx[self.labels[idx] == c]]


def per_class_split(labels: np.ndarray, num_classes: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic 90/10 split inside every class."""
    train, test = [], []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        idx = idx[np.random.default_rng([seed, c]).permutation(len(idx))]
        n_test = int(round(len(idx) * TEST_FRACTION))
        if len(idx) >= 2:
            n_test = min(max(n_test, 1), len(idx) - 1)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def prepare_image(img: Image.Image, resolution: int) -> np.ndarray:
    img = img.convert("RGB")
    w, h = img.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    img = img.crop((left, top, left + side, top + side))
    img = img.resize((resolution, resolution), Image.BILINEAR)
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return arr.transpose(2, 0, 1)


def load_dataset(root, resolution: int, split_seed: int = 0) -> DatasetHandle:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"no class directories under {root}")
    images, labels, skipped = [], [], 0
    for c, d in enumerate(class_dirs):
        files = sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        n_ok = 0
        for f in files:
            try:
                with Image.open(f) as img:
                    images.append(prepare_image(img, resolution))
            except (UnidentifiedImageError, OSError) as exc:
                log.warning("skipping undecodable image %s: %s", f, exc)
                skipped += 1
                continue
            labels.append(c)
            n_ok += 1
        if n_ok == 0:
            raise DatasetError(f"class directory {d.name!r} contains no decodable images")
    vocab = ClassVocabulary(d.name for d in class_dirs)
    labels = np.asarray(labels, dtype=np.int64)
    train, test = per_class_split(labels, len(vocab), split_seed)
    ds = DatasetHandle(np.stack(images).astype(np.float32), labels, vocab, train, test,
                       resolution, source=str(root), skipped=skipped, meta={"split_seed": split_seed})
    log.info("loaded %d images in %d classes from %s (%d skipped)", len(labels), len(vocab), root, skipped)
    return ds


def subsample(ds: DatasetHandle, fraction: float, seed: int = 0) -> DatasetHandle:
    """Keep ``fraction`` of every class's training images; the test split is untouched."""
    if not 0 < fraction <= 1:
        raise DatasetError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return ds
    keep = []
    for c in range(ds.num_classes):
        idx = ds.train_idx[ds.labels[ds.train_idx] == c]
        n = int(round(len(idx) * fraction))
        if n == 0:
            raise DatasetError(f"fraction {fraction} leaves class {ds.vocab.name(c)!r} with no training images")
        keep.append(np.sort(np.random.default_rng([seed, c]).choice(idx, n, replace=False)))
    meta = dict(ds.meta, fraction=fraction, subsample_seed=seed)
    return replace(ds, train_idx=np.sort(np.concatenate(keep)), meta=meta)


# -- synthetic toy data ---------------------------------------------------------------

SHAPES = ("circle", "square", "triangle", "ring", "cross", "star", "diamond", "bar")


def _sdf(shape: str, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    r = np.hypot(u, v)
    if shape == "circle":
        return r - 1.0
    if shape == "square":
        return np.maximum(np.abs(u), np.abs(v)) - 0.8
    if shape == "diamond":
        return (np.abs(u) + np.abs(v)) / math.sqrt(2) - 0.75
    if shape == "ring":
        return np.abs(r - 0.75) - 0.25
    if shape == "cross":
        au, av = np.abs(u), np.abs(v)
        return np.minimum(np.maximum(au - 0.3, av - 1.0), np.maximum(au - 1.0, av - 0.3))
    if shape == "triangle":
        d = None
        for ang in (math.pi / 2, math.pi / 2 + 2 * math.pi / 3, math.pi / 2 + 4 * math.pi / 3):
            plane = -(math.cos(ang) * u + math.sin(ang) * v) - 0.5
            d = plane if d is None else np.maximum(d, plane)
        return d
    if shape == "star":
        phi = np.arctan2(v, u)
        return r - (0.7 + 0.3 * np.cos(5 * phi))
    if shape == "bar":
        return np.hypot(u, 2.2 * v) - 1.0
    raise DatasetError(f"unknown shape {shape!r}")


def family(index: int) -> dict:
    """Visual recipe for synthetic class family ``index`` (shape, colours, texture)."""
    hue = (index * 0.618033988749895) % 1.0
    fg = colorsys.hsv_to_rgb(hue, 0.85, 0.95)
    bg = colorsys.hsv_to_rgb((hue + 0.45) % 1.0, 0.35, 0.25 + 0.1 * ((index // 8) % 3))
    return {"shape": SHAPES[index % len(SHAPES)], "fg": np.array(fg), "bg": np.array(bg),
            "texture": ("solid", "stripes", "dots")[(index // len(SHAPES)) % 3]}


def render(fam: dict, resolution: int, cx: float, cy: float, scale: float, angle: float,
           brightness: float = 0.0) -> np.ndarray:
    """Draw one anti-aliased shape; pose arguments are fractions of the canvas."""
    coords = (np.arange(resolution) + 0.5) / resolution
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    dx, dy = (xx - cx) / scale, (yy - cy) / scale
    ca, sa = math.cos(angle), math.sin(angle)
    u, v = ca * dx + sa * dy, -sa * dx + ca * dy
    d = _sdf(fam["shape"], u, v)
    mask = np.clip(0.5 - d * scale * resolution, 0.0, 1.0)
    fg = fam["fg"][:, None, None] * np.ones((3, resolution, resolution))
    if fam["texture"] == "stripes":
        fg = fg * (0.7 + 0.3 * (np.sin(7.0 * u) > 0))
    elif fam["texture"] == "dots":
        fg = fg * (0.65 + 0.35 * ((np.sin(6.0 * u) * np.sin(6.0 * v)) > 0.2))
    bg = fam["bg"][:, None, None] * (0.85 + 0.3 * yy)[None]
    img = mask[None] * fg + (1 - mask[None]) * bg + brightness
    return np.clip(img * 2.0 - 1.0, -1.0, 1.0).astype(np.float32)


def synth_toy_dataset(num_classes: int, per_class: int, resolution: int, seed: int = 0,
                      family_offset: int = 0, split_seed: int | None = None) -> DatasetHandle:
    """Deterministic many-class dataset of posed parametric shapes.

    Class ``k`` draws from family ``family_offset + k``; disjoint offsets give
    disjoint class sets (used for the pretraining source domain).
    """
    if num_classes < 2:
        raise DatasetError("a synthetic dataset needs at least two classes")
    if resolution < 16:
        raise DatasetError("synthetic datasets need resolution >= 16")
    if per_class < 1:
        raise DatasetError("per_class must be positive")
    rng = np.random.default_rng([seed, family_offset, num_classes, per_class])
    images = np.empty((num_classes * per_class, 3, resolution, resolution), dtype=np.float32)
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    for k in range(num_classes):
        fam = family(family_offset + k)
        for i in range(per_class):
            cx, cy = rng.uniform(0.35, 0.65, size=2)
            scale = rng.uniform(0.2, 0.3)
            angle = rng.uniform(0.0, 2 * math.pi)
            brightness = rng.uniform(-0.05, 0.05)
            images[k * per_class + i] = render(fam, resolution, cx, cy, scale, angle, brightness)
    vocab = ClassVocabulary(f"{family(family_offset + k)['shape']}{family_offset + k:03d}" for k in range(num_classes))
    train, test = per_class_split(labels, num_classes, seed if split_seed is None else split_seed)
    spec = f"synthetic:classes={num_classes},per_class={per_class},resolution={resolution},seed={seed},offset={family_offset}"
    return DatasetHandle(images, labels, vocab, train, test, resolution, source=spec,
                         meta={"seed": seed, "family_offset": family_offset})


def materialize(ds: DatasetHandle, out_dir) -> Path:
    """Write a dataset to ``out_dir/<class>/<index>.png`` (loadable by load_dataset)."""
    out_dir = Path(out_dir)
    for c, name in enumerate(ds.vocab.names):
        (out_dir / name).mkdir(parents=True, exist_ok=True)
    for i, (img, c) in enumerate(zip(ds.images, ds.labels)):
        to_pil(img).save(out_dir / ds.vocab.name(int(c)) / f"{i:06d}.png")
    return out_dir


def to_uint8(img) -> np.ndarray:
    """C x H x W image in [-1, 1] -> H x W x C uint8."""
    arr = img.detach().cpu().numpy() if isinstance(img, torch.Tensor) else np.asarray(img)
    return np.clip(np.rint((arr.transpose(1, 2, 0) + 1.0) * 127.5), 0, 255).astype(np.uint8)


def to_pil(img) -> Image.Image:
    return Image.fromarray(to_uint8(img))


# -- batch streams --------------------------------------------------------------------

def hflip(images: np.ndarray) -> np.ndarray:
    return images[..., ::-1].copy()


def batches(ds: DatasetHandle, split: str, batch_size: int, seed: int = 0, augment: bool = False,
            training: bool = True, epoch: int = 0) -> Iterator[LabeledBatch]:
    """One epoch of batches; shuffled by a (seed, epoch) permutation when training."""
    idx = ds.indices(split)
    if training:
        idx = idx[np.random.default_rng([seed, epoch]).permutation(len(idx))]
    n_full = len(idx) // batch_size
    stops = list(range(batch_size, n_full * batch_size + 1, batch_size))
    if not training and len(idx) % batch_size:
        stops.append(len(idx))
    start = 0
    flip_rng = np.random.default_rng([seed, epoch, 1])
    for stop in stops:
        sel = idx[start:stop]
        imgs = ds.images[sel]
        if augment:
            flip = flip_rng.random(len(sel)) < 0.5
            imgs = imgs.copy()
            imgs[flip] = hflip(imgs[flip])
        yield LabeledBatch(torch.from_numpy(np.ascontiguousarray(imgs)), torch.from_numpy(ds.labels[sel]))
        start = stop


def batch_stream(ds: DatasetHandle, split: str, batch_size: int, seed: int = 0,
                 augment: bool = False) -> Iterator[LabeledBatch]:
    """Endless training stream: epoch after epoch, each with its own permutation."""
    if len(ds.indices(split)) < batch_size:
        raise DatasetError(f"{split} split has {len(ds.indices(split))} images, fewer than one batch of {batch_size}")
    epoch = 0
    while True:
        yield from batches(ds, split, batch_size, seed, augment, training=True, epoch=epoch)
        epoch += 1
