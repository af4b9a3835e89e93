"""Episodic and semantic memory stores, temporal subsampling, and the
on-disk memory format.

Episodic memory holds temporally sparse (l,d) float32 clip features, at
most N_s clips per class. Semantic memory holds one float32 prompt per
scope unit (normally one per task). Byte accounting is exact integer
arithmetic over the stored float32 payloads.
"""

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, StateError

SUBSAMPLE_STRATEGIES = ("uniform", "random", "temporal_attention")

MAGIC_MEMORY = b"ESNT"
MAGIC_FEATURES = b"ESFD"
FORMAT_VERSION = 1


def uniform_indices(n_total, n_keep):
    """Evenly spaced frame indices: floor((i + 0.5) * L / l) for each i."""
    if not (1 <= n_keep <= n_total):
        raise ValueError(f"cannot keep {n_keep} of {n_total} frames")
    return np.array([(2 * i + 1) * n_total // (2 * n_keep) for i in range(n_keep)], dtype=np.int64)


def subsample(feats, n_keep, strategy="uniform", rng=None, attn_mass=None):
    """Pick `n_keep` of the L frame rows; returns (indices, rows).

    Indices are always sorted ascending so temporal order is preserved.
    `random` draws without replacement and needs `rng`; the attention
    strategy keeps the rows with the largest `attn_mass` entries.
    """
    feats = np.asarray(feats)
    if feats.ndim != 2:
        raise ValueError(f"frame features must be 2-D, got shape {feats.shape}")
    n_total = feats.shape[0]
    if not (1 <= n_keep <= n_total):
        raise ValueError(f"cannot keep {n_keep} of {n_total} frames")
    if strategy == "uniform":
        idx = uniform_indices(n_total, n_keep)
    elif strategy == "random":
        if rng is None:
            raise ValueError("random subsampling needs an rng")
        idx = np.sort(rng.choice(n_total, size=n_keep, replace=False))
    elif strategy == "temporal_attention":
        if attn_mass is None:
            raise ValueError("temporal_attention subsampling needs attention mass")
        attn_mass = np.asarray(attn_mass, dtype=np.float64)
        if attn_mass.shape != (n_total,):
            raise ValueError(f"attention mass must have shape ({n_total},)")
        top = np.argsort(-attn_mass, kind="stable")[:n_keep]
        idx = np.sort(top)
    else:
        raise ValueError(f"unknown subsampling strategy {strategy!r}")
    return idx, feats[idx].copy()


def nearest_upsample(sparse, n_total):
    """Expand (l,d) rows back to (L,d) by nearest-slot copying.

    Output row t copies sparse row floor(t * l / L); with l == L this is
    the identity.
    """
    sparse = np.asarray(sparse)
    if sparse.ndim != 2:
        raise ValueError(f"sparse features must be 2-D, got shape {sparse.shape}")
    n_keep = sparse.shape[0]
    if not (1 <= n_keep <= n_total):
        raise ValueError(f"cannot upsample {n_keep} rows to {n_total}")
    src = np.array([t * n_keep // n_total for t in range(n_total)], dtype=np.int64)
    return sparse[src].copy()


def interpolate_upsample(sparse, n_total):
    """Expand (l,d) rows to (L,d) by per-column linear interpolation.

    Sparse rows are treated as samples at the centres of l equal bins
    over [0,1); ends are clamped.
    """
    sparse = np.asarray(sparse, dtype=np.float64)
    if sparse.ndim != 2:
        raise ValueError(f"sparse features must be 2-D, got shape {sparse.shape}")
    n_keep = sparse.shape[0]
    if n_keep == n_total:
        return sparse.copy()
    src_pos = (np.arange(n_keep) + 0.5) / n_keep
    dst_pos = (np.arange(n_total) + 0.5) / n_total
    out = np.empty((n_total, sparse.shape[1]))
    for j in range(sparse.shape[1]):
        out[:, j] = np.interp(dst_pos, src_pos, sparse[:, j])
    return out


@dataclass
class MemoryClip:
    """One stored exemplar: sparse (l,d) float32 features plus identity."""

    label: int
    clip_id: int
    feats: np.ndarray


class EpisodicStore:
    """Per-task lists of sparse exemplar clips, at most `n_s` per class."""

    def __init__(self, d, l, n_s=None):
        self.d = d
        self.l = l
        self.n_s = n_s
        self._tasks = {}

    def write_task(self, task_id, clips):
        if task_id in self._tasks:
            raise StateError(f"episodic memory for task {task_id} already written")
        stored = []
        per_class = {}
        for clip in clips:
            feats = np.asarray(clip.feats)
            if feats.shape != (self.l, self.d):
                raise ValueError(
                    f"stored clip must have shape ({self.l},{self.d}), got {feats.shape}")
            per_class[clip.label] = per_class.get(clip.label, 0) + 1
            if self.n_s is not None and per_class[clip.label] > self.n_s:
                raise StateError(
                    f"class {clip.label} exceeds the {self.n_s}-clip budget in task {task_id}")
            stored.append(MemoryClip(int(clip.label), int(clip.clip_id),
                                     feats.astype(np.float32)))
        self._tasks[task_id] = stored

    def task_ids(self):
        return sorted(self._tasks)

    def clips(self, task_id):
        if task_id not in self._tasks:
            raise StateError(f"no episodic memory for task {task_id}")
        return list(self._tasks[task_id])

    def all_clips(self):
        """All stored clips as (task_id, clip) pairs, task-ordered."""
        out = []
        for task_id in self.task_ids():
            out.extend((task_id, clip) for clip in self._tasks[task_id])
        return out

    def n_clips(self):
        return sum(len(v) for v in self._tasks.values())

    def bytes_used(self):
        return sum(clip.feats.nbytes for _, clip in self.all_clips())


class SemanticStore:
    """Float32 prompts keyed by scope unit (task id, or class id for
    class-scoped prompts)."""

    def __init__(self, d, prompt_len):
        self.d = d
        self.prompt_len = prompt_len
        self._prompts = {}

    def put(self, key, prompt, allow_replace=False):
        if key in self._prompts and not allow_replace:
            raise StateError(f"semantic memory for key {key} already written")
        prompt = np.asarray(prompt)
        if prompt.shape != (self.prompt_len, self.d):
            raise ValueError(
                f"prompt must have shape ({self.prompt_len},{self.d}), got {prompt.shape}")
        self._prompts[key] = prompt.astype(np.float32)

    def prompt(self, key):
        if key not in self._prompts:
            raise StateError(f"no semantic memory for key {key}")
        return self._prompts[key]

    def keys(self):
        return sorted(self._prompts)

    def bytes_used(self):
        return sum(p.nbytes for p in self._prompts.values())


@dataclass
class MemoryUsage:
    episodic_bytes: int
    semantic_bytes: int

    @property
    def total_bytes(self):
        return self.episodic_bytes + self.semantic_bytes

    @property
    def total_mib(self):
        return self.total_bytes / 2**20

    @property
    def episodic_mib(self):
        return self.episodic_bytes / 2**20

    @property
    def semantic_mib(self):
        return self.semantic_bytes / 2**20


def memory_usage(episodic, semantic):
    return MemoryUsage(episodic.bytes_used(), semantic.bytes_used())


def benchmark_memory_bytes(n_classes, n_tasks, n_s, l, d=768, L=8):
    """Closed-form budget after the final task of a benchmark, assuming a
    full `n_s` exemplars per class and one (L,d) prompt per task."""
    episodic = n_classes * n_s * l * d * 4
    semantic = n_tasks * L * d * 4
    return MemoryUsage(episodic, semantic)


def write_task_memory(episodic, semantic, task_id, clips, prompt, n_s,
                      l, strategy="uniform", rng=None, attn_fn=None):
    """Select up to `n_s` exemplars per class from `clips`, subsample each
    to l rows, and write both stores for `task_id`.

    `clips` are dense records with .label/.clip_id/.feats of shape (L,d).
    `attn_fn` maps dense features to a per-frame attention mass and is
    required only for the temporal_attention strategy. Classes with fewer
    than `n_s` clips keep everything and trigger a warning. Pass
    `semantic=None` (or `prompt=None`) to skip the semantic write; the
    driver does that for prompt scopes that are not task-keyed.
    """
    by_class = {}
    for clip in clips:
        by_class.setdefault(clip.label, []).append(clip)
    stored = []
    for label in sorted(by_class):
        group = by_class[label]
        if len(group) > n_s:
            if rng is None:
                raise ValueError("exemplar selection needs an rng")
            pick = np.sort(rng.choice(len(group), size=n_s, replace=False))
            group = [group[i] for i in pick]
        elif len(group) < n_s:
            warnings.warn(
                f"class {label} has only {len(group)} clips for a budget of {n_s}",
                stacklevel=2)
        for clip in group:
            mass = attn_fn(clip.feats) if strategy == "temporal_attention" else None
            _, rows = subsample(clip.feats, l, strategy, rng=rng, attn_mass=mass)
            stored.append(MemoryClip(clip.label, clip.clip_id, rows.astype(np.float32)))
    episodic.write_task(task_id, stored)
    if semantic is not None and prompt is not None:
        semantic.put(task_id, np.asarray(prompt, dtype=np.float32))
    return len(stored)


class _Reader:
    """Cursor over a byte string that raises FormatError with the offset
    of the first missing or invalid byte."""

    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def take(self, n):
        if self.off + n > len(self.buf):
            raise FormatError("unexpected end of file", offset=self.off)
        chunk = self.buf[self.off:self.off + n]
        self.off += n
        return chunk

    def u8(self):
        return self.take(1)[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self.take(8))[0]

    def f32_array(self, shape):
        n = int(np.prod(shape))
        raw = self.take(4 * n)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

    def expect_end(self):
        if self.off != len(self.buf):
            raise FormatError(
                f"{len(self.buf) - self.off} trailing bytes after payload", offset=self.off)


def _check_header(reader, magic):
    got = reader.take(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=0)
    version = reader.u8()
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)


def save_memory(episodic, semantic, path):
    """Write both stores to one file. Keys must agree between stores."""
    task_ids = episodic.task_ids()
    if task_ids != semantic.keys():
        raise StateError(
            f"episodic tasks {task_ids} do not match semantic keys {semantic.keys()}")
    parts = [MAGIC_MEMORY, struct.pack("<B", FORMAT_VERSION),
             struct.pack("<IIII", episodic.d, semantic.prompt_len, episodic.l, len(task_ids))]
    for task_id in task_ids:
        parts.append(struct.pack("<I", task_id))
        parts.append(semantic.prompt(task_id).astype("<f4").tobytes())
        clips = episodic.clips(task_id)
        parts.append(struct.pack("<I", len(clips)))
        for clip in clips:
            parts.append(struct.pack("<IQ", clip.label, clip.clip_id))
            parts.append(clip.feats.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_memory(path):
    """Read a memory file back into (EpisodicStore, SemanticStore)."""
    with open(path, "rb") as fh:
        reader = _Reader(fh.read())
    _check_header(reader, MAGIC_MEMORY)
    d_off = reader.off
    d = reader.u32()
    prompt_len = reader.u32()
    l = reader.u32()
    n_tasks = reader.u32()
    if d == 0 or prompt_len == 0 or l == 0:
        raise FormatError("zero dimension in header", offset=d_off)
    episodic = EpisodicStore(d, l)
    semantic = SemanticStore(d, prompt_len)
    for _ in range(n_tasks):
        tid_off = reader.off
        task_id = reader.u32()
        prompt = reader.f32_array((prompt_len, d))
        n_clips = reader.u32()
        clips = []
        for _ in range(n_clips):
            label = reader.u32()
            clip_id = reader.u64()
            feats = reader.f32_array((l, d))
            clips.append(MemoryClip(label, clip_id, feats))
        try:
            episodic.write_task(task_id, clips)
            semantic.put(task_id, prompt)
        except StateError:
            raise FormatError(f"duplicate task id {task_id}", offset=tid_off) from None
    reader.expect_end()
    return episodic, semantic
