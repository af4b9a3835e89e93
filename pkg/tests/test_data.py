"""Synthetic benchmark generator and the dense feature file format."""

import numpy as np
import pytest

from memcil.data import (
    ClipRecord,
    FeatureDataset,
    SynthSpec,
    class_orders,
    gen_task,
    load_features,
    prototype_bank,
    save_features,
)
from memcil.errors import FormatError


def test_bank_rows_are_unit_norm():
    spec = SynthSpec(n_classes=4, d=16, L=8)
    bank = prototype_bank(spec)
    assert bank.shape == (8, 16)
    assert np.allclose(np.linalg.norm(bank, axis=1), 1.0, atol=1e-12)


def test_bank_size_override():
    spec = SynthSpec(n_classes=4, d=16, L=8, bank_size=12)
    assert prototype_bank(spec).shape == (12, 16)
    with pytest.raises(ValueError):
        SynthSpec(n_classes=4, L=8, bank_size=4)
    with pytest.raises(ValueError):
        SynthSpec(n_classes=0)


def test_class_orders_distinct():
    spec = SynthSpec(n_classes=30, d=8, L=4, bank_size=8)
    orders = class_orders(spec)
    assert len(orders) == 30
    assert len(set(orders)) == 30
    for perm in orders:
        assert len(perm) == 4
        assert len(set(perm)) == 4
        assert all(0 <= p < 8 for p in perm)


def test_zero_noise_clips_identical():
    spec = SynthSpec(n_classes=2, d=16, L=8, noise_sigma=0.0, train_clips=5)
    ds = gen_task(spec, [0, 1], "train")
    for label in (0, 1):
        feats = [c.feats for c in ds.clips if c.label == label]
        assert len(feats) == 5
        for f in feats[1:]:
            assert np.array_equal(f, feats[0])


def test_zero_noise_nearest_prototype_oracle_is_perfect():
    # with no noise, reading off each frame's nearest bank row recovers
    # the class's prototype order exactly, for every clip
    spec = SynthSpec(n_classes=6, d=16, L=8, noise_sigma=0.0, test_clips=4)
    bank = prototype_bank(spec)
    orders = class_orders(spec)
    ds = gen_task(spec, list(range(6)), "test")
    correct = 0
    for clip in ds.clips:
        seq = tuple(int(np.argmin(((bank - f) ** 2).sum(axis=1))) for f in clip.feats)
        if seq in orders and orders.index(seq) == clip.label:
            correct += 1
    assert correct == len(ds.clips)


def test_temporal_order_is_the_only_signal():
    # classes permute the same bank rows, so at zero noise the mean-pooled
    # clip feature is identical for every class
    spec = SynthSpec(n_classes=4, d=16, L=8, noise_sigma=0.0, train_clips=1)
    ds = gen_task(spec, [0, 1, 2, 3], "train")
    means = [c.feats.mean(axis=0) for c in ds.clips]
    for m in means[1:]:
        assert np.allclose(m, means[0], atol=1e-7)


def test_generation_deterministic():
    spec = SynthSpec(n_classes=3, d=8, L=4, seed=42, train_clips=3)
    a = gen_task(spec, [0, 2], "train")
    b = gen_task(spec, [0, 2], "train")
    assert len(a.clips) == len(b.clips)
    for x, y in zip(a.clips, b.clips):
        assert (x.label, x.clip_id) == (y.label, y.clip_id)
        assert np.array_equal(x.feats, y.feats)


def test_generation_invariant_to_task_grouping():
    # the same class produces the same clips whether generated alone or
    # alongside others, so task schedules never change the data
    spec = SynthSpec(n_classes=4, d=8, L=4, seed=7, train_clips=4)
    together = gen_task(spec, [0, 1, 2, 3], "train")
    alone = gen_task(spec, [2], "train")
    want = [c for c in together.clips if c.label == 2]
    assert len(want) == len(alone.clips) == 4
    for x, y in zip(want, alone.clips):
        assert x.clip_id == y.clip_id
        assert np.array_equal(x.feats, y.feats)


def test_seeds_and_splits_differ():
    spec = SynthSpec(n_classes=2, d=8, L=4, seed=0, train_clips=2, test_clips=2)
    other = SynthSpec(n_classes=2, d=8, L=4, seed=1, train_clips=2, test_clips=2)
    train = gen_task(spec, [0], "train")
    test = gen_task(spec, [0], "test")
    reseeded = gen_task(other, [0], "train")
    assert not np.array_equal(train.clips[0].feats, test.clips[0].feats)
    assert not np.array_equal(train.clips[0].feats, reseeded.clips[0].feats)


def test_clip_ids_unique_across_everything():
    spec = SynthSpec(n_classes=3, d=8, L=4, train_clips=5, test_clips=5)
    ids = []
    for split in ("train", "test"):
        ds = gen_task(spec, [0, 1, 2], split)
        ids.extend(c.clip_id for c in ds.clips)
    assert len(ids) == len(set(ids)) == 30


def test_gen_task_validates_inputs():
    spec = SynthSpec(n_classes=2, d=8, L=4)
    with pytest.raises(ValueError):
        gen_task(spec, [5], "train")
    with pytest.raises(ValueError):
        gen_task(spec, [0], "validation")


def test_noise_scale_matches_sigma():
    spec = SynthSpec(n_classes=1, d=32, L=8, noise_sigma=0.1, train_clips=200)
    bank = prototype_bank(spec)
    orders = class_orders(spec)
    base = bank[list(orders[0])]
    ds = gen_task(spec, [0], "train")
    resid = np.stack([c.feats - base.astype(np.float32) for c in ds.clips])
    assert abs(resid.std() - 0.1) < 0.005


# ---------------------------------------------------------------- feature files


def build_dataset(rng, d=8, L=4, n=5):
    ds = FeatureDataset(d, L)
    for i in range(n):
        ds.clips.append(ClipRecord(i % 2, 100 + i, rng.normal(size=(L, d)).astype(np.float32)))
    return ds


def test_feature_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(50)
    ds = build_dataset(rng)
    path = tmp_path / "feats.bin"
    save_features(ds, path)
    back = load_features(path)
    assert (back.d, back.L) == (ds.d, ds.L)
    assert len(back.clips) == len(ds.clips)
    for a, b in zip(ds.clips, back.clips):
        assert (a.label, a.clip_id) == (b.label, b.clip_id)
        assert np.array_equal(a.feats, b.feats)
    save_features(back, tmp_path / "again.bin")
    assert (tmp_path / "feats.bin").read_bytes() == (tmp_path / "again.bin").read_bytes()


def test_save_features_checks_shapes(tmp_path):
    ds = FeatureDataset(8, 4)
    ds.clips.append(ClipRecord(0, 0, np.zeros((3, 8), dtype=np.float32)))
    with pytest.raises(ValueError):
        save_features(ds, tmp_path / "bad.bin")


def test_load_features_wrong_magic(tmp_path):
    rng = np.random.default_rng(51)
    path = tmp_path / "f.bin"
    save_features(build_dataset(rng), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"ESNT"  # a memory file is not a feature file
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_features(path)


def test_load_features_truncation_and_trailing(tmp_path):
    rng = np.random.default_rng(52)
    path = tmp_path / "f.bin"
    save_features(build_dataset(rng), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 7])
    with pytest.raises(FormatError) as exc:
        load_features(path)
    assert exc.value.offset is not None
    path.write_bytes(raw + b"\0")
    with pytest.raises(FormatError):
        load_features(path)


def test_load_features_fuzz_never_crashes(tmp_path):
    rng = np.random.default_rng(53)
    path = tmp_path / "f.bin"
    save_features(build_dataset(rng), path)
    raw = bytearray(path.read_bytes())
    for _ in range(100):
        pos = int(rng.integers(0, len(raw)))
        mutated = bytearray(raw)
        mutated[pos] ^= 1 << int(rng.integers(0, 8))
        path.write_bytes(bytes(mutated))
        try:
            load_features(path)
        except FormatError:
            pass
