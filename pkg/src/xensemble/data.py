"""Datasets: directory loading, stratified splits and a synthetic lesion generator.

On disk a dataset is ``root/tumor/*.pgm|*.ppm`` and ``root/non_tumor/...``;
label 1 is ``tumor``. Sample ids are ``"<class dir>/<file stem>"``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netpbm import NetpbmError, quantize, read_image, write_image
from .seeding import substream

log = logging.getLogger(__name__)

CLASS_DIRS = ("non_tumor", "tumor")  # index == label
IMAGE_SUFFIXES = (".pgm", ".ppm")


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray                  # [N, C, H, W], float64 in [0, 1]
    labels: np.ndarray                  # [N], int64 in {0, 1}
    ids: list[str]
    class_names: tuple[str, ...] = CLASS_DIRS
    boxes: dict[str, tuple[int, int, int, int]] = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.images) == len(self.labels) == len(self.ids)):
            raise DatasetError("images, labels and ids must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise DatasetError("sample ids must be unique")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def samples(self):
        return list(zip(self.images, self.labels.tolist(), self.ids))

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        ids = [self.ids[i] for i in idx]
        return Dataset(
            self.images[idx], self.labels[idx], ids, self.class_names,
            {k: self.boxes[k] for k in ids if k in self.boxes},
        )

    def mean_intensity(self) -> float:
        return float(self.images.mean()) if len(self) else 0.0


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    images, labels, ids = [], [], []
    shape = None
    # tumor first, then non_tumor; lexicographic inside each class
    for label in (1, 0):
        d = root / CLASS_DIRS[label]
        if not d.is_dir():
            raise DatasetError(f"missing class directory {d}")
        files = sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            log.warning("class %r has no images in %s; dataset is imbalanced", CLASS_DIRS[label], d)
        for p in files:
            try:
                img = read_image(p)
            except (NetpbmError, OSError) as exc:
                raise DatasetError(f"unreadable image {p}: {exc}") from None
            if shape is None:
                shape = img.shape
            elif img.shape != shape:
                raise DatasetError(f"{p}: shape {list(img.shape)} differs from {list(shape)}")
            images.append(img)
            labels.append(label)
            ids.append(f"{CLASS_DIRS[label]}/{p.stem}")
    arr = np.stack(images) if images else np.zeros((0, 1, 1, 1))
    ds = Dataset(arr, np.array(labels, dtype=np.int64), ids)
    boxes = root / "boxes.json"
    if boxes.exists():
        ds.boxes = {k: tuple(v) for k, v in json.loads(boxes.read_text()).items() if k in set(ids)}
    return ds


def write_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    for name in CLASS_DIRS:
        (root / name).mkdir(parents=True, exist_ok=True)
    for img, sid in zip(ds.images, ds.ids):
        suffix = ".pgm" if img.shape[0] == 1 else ".ppm"
        write_image(root / f"{sid}{suffix}", img)
    if ds.boxes:
        (root / "boxes.json").write_text(json.dumps({k: list(v) for k, v in ds.boxes.items()}, indent=1) + "\n")


def split(ds: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified split with ``round(fraction * n)`` training samples in total.

    Per-class quotas are ``fraction * n_class`` rounded down; the leftover
    slots go to the largest fractional parts (lowest label on ties).
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = substream(seed, "split")
    labels = np.unique(ds.labels)
    members = [np.flatnonzero(ds.labels == label) for label in labels]
    for label, idx in zip(labels, members):
        if len(idx) < 2:
            raise DatasetError(f"class {ds.class_names[label]!r} has {len(idx)} sample(s); need at least 2")
    exact = [train_fraction * len(idx) for idx in members]
    quota = [int(math.floor(q)) for q in exact]
    extra = int(math.floor(train_fraction * len(ds) + 0.5)) - sum(quota)
    for i in sorted(range(len(exact)), key=lambda i: (-(exact[i] - quota[i]), i))[:extra]:
        quota[i] += 1
    train_idx = []
    for idx, n_train in zip(members, quota):
        train_idx.extend(rng.permutation(idx)[:n_train].tolist())
    mask = np.zeros(len(ds), dtype=bool)
    mask[train_idx] = True
    return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def _background(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    level = rng.uniform(0.25, 0.35)
    fy, fx = rng.uniform(1.0, 3.0, size=2)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    texture = 0.05 * np.sin(2 * np.pi * fy * yy + phase[0]) * np.cos(2 * np.pi * fx * xx + phase[1])
    return level + texture + rng.normal(0.0, 0.03, (size, size))


def _ellipse(rng, size):
    ra, rb = rng.uniform(0.12 * size, 0.22 * size, size=2)
    r = max(ra, rb)
    lo, hi = r + 1, size - r - 2
    cy, cx = rng.uniform(lo, hi, size=2)
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    inside = (u / ra) ** 2 + (v / rb) ** 2 <= 1.0
    rows, cols = np.nonzero(inside)
    box = (int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))
    return inside, box


def make_synthetic_dataset(n_per_class: int, image_size: int = 28, seed: int = 42) -> Dataset:
    """Bright ellipses ("tumor", label 1) on textured backgrounds vs background only.

    ``boxes`` maps each tumor id to its lesion bounding box
    ``(row_min, col_min, row_max, col_max)``, inclusive.
    """
    if image_size < 8:
        raise ValueError("image_size must be at least 8")
    if n_per_class < 0:
        raise ValueError("n_per_class must be non-negative")
    images, labels, ids, boxes = [], [], [], {}
    for label in (1, 0):
        rng = substream(seed, "synthetic", label)
        for i in range(n_per_class):
            img = _background(rng, image_size)
            sid = f"{CLASS_DIRS[label]}/{CLASS_DIRS[label]}_{i:04d}"
            if label == 1:
                inside, box = _ellipse(rng, image_size)
                img = img + inside * rng.uniform(0.45, 0.6)
                boxes[sid] = box
            images.append(quantize(img)[None])
            labels.append(label)
            ids.append(sid)
    arr = np.stack(images) if images else np.zeros((0, 1, image_size, image_size))
    return Dataset(arr, np.array(labels, dtype=np.int64), ids, boxes=boxes)
