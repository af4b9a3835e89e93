"""Synthetic frame-feature benchmark and the feature file format.

Classes share one bank of unit-norm prototype vectors and differ only in
the order those prototypes appear over time, so temporal structure is
the only class signal: a mean-pooled classifier is at chance. Clips are
the ordered prototypes plus Gaussian noise.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .memory import FORMAT_VERSION, MAGIC_FEATURES, _check_header, _Reader
from .rng import named_rng


@dataclass
class ClipRecord:
    """One dense clip: (L,d) float32 features plus identity."""

    label: int
    clip_id: int
    feats: np.ndarray


@dataclass
class FeatureDataset:
    d: int
    L: int
    clips: list = field(default_factory=list)

    def __len__(self):
        return len(self.clips)

    def classes(self):
        return sorted({c.label for c in self.clips})


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic benchmark."""

    n_classes: int
    d: int = 32
    L: int = 8
    bank_size: int = 0          # 0 means L
    noise_sigma: float = 0.1
    train_clips: int = 40
    test_clips: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("need at least one class")
        if not (self.bank_size == 0 or self.bank_size >= self.L):
            raise ValueError("prototype bank must hold at least L rows")

    @property
    def bank_rows(self):
        return self.bank_size or self.L


def prototype_bank(spec):
    """The shared (bank_rows, d) bank of unit-norm prototype vectors."""
    rng = named_rng(spec.seed, "data.bank")
    bank = rng.normal(0.0, 1.0, size=(spec.bank_rows, spec.d))
    return bank / np.linalg.norm(bank, axis=1, keepdims=True)


def class_orders(spec):
    """Distinct prototype orders, one length-L tuple per class."""
    rng = named_rng(spec.seed, "data.orders")
    seen = set()
    orders = []
    while len(orders) < spec.n_classes:
        perm = tuple(int(i) for i in rng.permutation(spec.bank_rows)[:spec.L])
        if perm in seen:
            continue
        seen.add(perm)
        orders.append(perm)
    return orders


def _clip_id(label, split, index):
    return (label << 24) | ((1 if split == "test" else 0) << 20) | index


def gen_task(spec, class_ids, split):
    """Generate the train or test clips for one task's classes.

    Noise streams are keyed per (class, split), so the same clips come
    out no matter how classes are grouped into tasks.
    """
    if split not in ("train", "test"):
        raise ValueError(f"unknown split {split!r}")
    bank = prototype_bank(spec)
    orders = class_orders(spec)
    n_clips = spec.train_clips if split == "train" else spec.test_clips
    ds = FeatureDataset(spec.d, spec.L)
    for label in class_ids:
        if not (0 <= label < spec.n_classes):
            raise ValueError(f"class id {label} out of range for {spec.n_classes} classes")
        base = bank[list(orders[label])]
        rng = named_rng(spec.seed, f"data.clips.{split}.{label}")
        for i in range(n_clips):
            feats = base + rng.normal(0.0, spec.noise_sigma, size=(spec.L, spec.d))
            ds.clips.append(ClipRecord(label, _clip_id(label, split, i),
                                       feats.astype(np.float32)))
    return ds


def save_features(dataset, path):
    """Write a FeatureDataset to the dense feature file format."""
    parts = [MAGIC_FEATURES, struct.pack("<B", FORMAT_VERSION),
             struct.pack("<III", dataset.d, dataset.L, len(dataset.clips))]
    for clip in dataset.clips:
        feats = np.asarray(clip.feats)
        if feats.shape != (dataset.L, dataset.d):
            raise ValueError(
                f"clip {clip.clip_id} has shape {feats.shape}, expected ({dataset.L},{dataset.d})")
        parts.append(struct.pack("<IQ", clip.label, clip.clip_id))
        parts.append(feats.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_features(path):
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    _check_header(reader, MAGIC_FEATURES)
    d_off = reader.off
    d = reader.u32()
    L = reader.u32()
    n_clips = reader.u32()
    if d == 0 or L == 0:
        raise FormatError("zero dimension in header", offset=d_off)
    ds = FeatureDataset(d, L)
    for _ in range(n_clips):
        label = reader.u32()
        clip_id = reader.u64()
        feats = reader.f32_array((L, d))
        ds.clips.append(ClipRecord(label, clip_id, feats))
    reader.expect_end()
    return ds
