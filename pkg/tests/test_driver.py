"""Benchmark driver: schedule, metrics, protocol contracts, persistence."""

import os

import numpy as np
import pytest

from memcil.blocks import MrModule
from memcil.config import RunConfig, config_with
from memcil.data import ClipRecord, FeatureDataset, save_features
from memcil.driver import (
    ABLATION_PRESETS,
    baseline_config,
    compute_metrics,
    dataset_hash,
    distance_analysis,
    distances_csv_text,
    evaluate,
    load_run,
    load_tasks,
    make_schedule,
    results_csv_text,
    run_benchmark,
    write_outputs,
)
from memcil.errors import ConfigError, StateError
from memcil.retrieval import make_retrieval
from memcil.rng import named_rng
from memcil.tensor import constant


def tiny_config(**overrides):
    base = dict(k_tasks=2, classes_per_task=2, d=8, clip_len=4, sparse_len=1,
                n_exemplars=2, epochs_incremental=2, epochs_rehearsal=1,
                batch_size=4, n_heads=2, encoder_layers=1, train_clips=6,
                test_clips=4, seed=0)
    base.update(overrides)
    return RunConfig(**base)


# ---------------------------------------------------------------- schedule


def test_schedule_disjoint_contiguous():
    specs = make_schedule(RunConfig(k_tasks=3, classes_per_task=4))
    assert [s.task_id for s in specs] == [1, 2, 3]
    assert specs[0].class_ids == (0, 1, 2, 3)
    assert specs[1].class_ids == (4, 5, 6, 7)
    assert specs[2].class_ids == (8, 9, 10, 11)
    seen = set()
    for s in specs:
        assert not (seen & set(s.class_ids))
        seen.update(s.class_ids)


def test_schedule_base_task_override():
    specs = make_schedule(RunConfig(k_tasks=3, classes_per_task=2, base_classes=6))
    assert specs[0].class_ids == (0, 1, 2, 3, 4, 5)
    assert specs[1].class_ids == (6, 7)
    assert specs[2].class_ids == (8, 9)


# ---------------------------------------------------------------- metrics


def test_aia_worked_example_exact():
    # rows chosen so AA comes out [0.8, 0.7, 0.6]
    acc = [[0.8], [0.7, 0.7], [0.6, 0.6, 0.6]]
    aa, aia, _ = compute_metrics(acc)
    assert aa == [0.8, 0.7, 0.6]
    assert aia[-1] == 0.7  # exact, no float slack


def test_bwf_no_forgetting_is_zero():
    acc = [[0.9], [0.9, 0.8], [0.9, 0.8, 0.7]]
    _, _, bwf = compute_metrics(acc)
    assert bwf == [0.0, 0.0, 0.0]


def test_bwf_worked_example():
    acc = [[1.0], [0.5, 1.0], [0.25, 0.5, 1.0]]
    _, _, bwf = compute_metrics(acc)
    assert bwf[1] == 0.5
    assert bwf[2] == (0.75 + 0.5) / 2


def test_aa_weighted_by_test_set_size():
    # 10-clip task at 1.0, 30-clip task at 0.5: pooled accuracy 0.625
    acc = [[1.0], [1.0, 0.5]]
    aa, _, _ = compute_metrics(acc, test_sizes=[10, 30])
    assert aa == [1.0, 0.625]


def test_aa_equal_sizes_match_plain_mean():
    acc = [[0.8], [0.7, 0.7], [0.6, 0.6, 0.6]]
    plain = compute_metrics(acc)
    weighted = compute_metrics(acc, test_sizes=[20, 20, 20])
    assert plain == weighted
    assert weighted[1][-1] == 0.7


def test_metrics_reject_bad_sizes():
    with pytest.raises(ValueError):
        compute_metrics([[0.5], [0.5, 0.5]], test_sizes=[4])
    with pytest.raises(ValueError):
        compute_metrics([[0.5]], test_sizes=[0])


def test_run_uses_sample_weighted_aa():
    r = run_benchmark(tiny_config(base_classes=3))
    sizes = [len(t[2].clips) for t in r.tasks]
    assert sizes == [12, 8]
    want = (r.acc_matrix[1][0] * 12 + r.acc_matrix[1][1] * 8) / 20
    assert abs(r.aa[1] - want) < 1e-12


def test_metrics_reject_ragged_matrix():
    with pytest.raises(ValueError):
        compute_metrics([[0.5], [0.5]])
    with pytest.raises(ValueError):
        compute_metrics([])


def test_aia_matches_recomputation_from_matrix():
    rng = np.random.default_rng(7)
    acc = [[float(a) for a in rng.uniform(size=k + 1)] for k in range(5)]
    aa, aia, _ = compute_metrics(acc)
    import statistics
    for k in range(5):
        assert abs(aia[k] - statistics.mean(aa[:k + 1])) < 1e-12


# ---------------------------------------------------------------- tasks


def test_load_tasks_synthetic_shapes():
    cfg = tiny_config()
    tasks = load_tasks(cfg)
    assert len(tasks) == 2
    for spec, train, test in tasks:
        assert len(train.clips) == 6 * len(spec.class_ids)
        assert len(test.clips) == 4 * len(spec.class_ids)
        for clip in train.clips + test.clips:
            assert clip.label in spec.class_ids
            assert clip.feats.shape == (4, 8)


def _write_feature_tasks(tmp_path, class_blocks, d=8, L=4):
    rng = np.random.default_rng(0)
    for k, classes in enumerate(class_blocks, start=1):
        for split in ("train", "test"):
            clips = [ClipRecord(c, k * 100 + c * 10 + i,
                                np.asarray(rng.normal(size=(L, d)), np.float32))
                     for c in classes for i in range(2)]
            save_features(FeatureDataset(d, L, clips),
                          os.path.join(tmp_path, f"task{k}_{split}.feat"))


def test_load_tasks_from_feature_files(tmp_path):
    _write_feature_tasks(str(tmp_path), [(0, 1), (2, 3)])
    cfg = tiny_config(data="features", feature_dir=str(tmp_path))
    tasks = load_tasks(cfg)
    assert [t[0].class_ids for t in tasks] == [(0, 1), (2, 3)]


def test_load_tasks_rejects_dim_mismatch(tmp_path):
    _write_feature_tasks(str(tmp_path), [(0, 1), (2, 3)], d=16)
    cfg = tiny_config(data="features", feature_dir=str(tmp_path))
    with pytest.raises(ConfigError):
        load_tasks(cfg)


def test_load_tasks_rejects_class_reuse(tmp_path):
    _write_feature_tasks(str(tmp_path), [(0, 1), (1, 2)])
    cfg = tiny_config(data="features", feature_dir=str(tmp_path))
    with pytest.raises(ConfigError, match="reuses"):
        load_tasks(cfg)


def test_load_tasks_rejects_gap_in_classes(tmp_path):
    _write_feature_tasks(str(tmp_path), [(0, 1), (3, 4)])
    cfg = tiny_config(data="features", feature_dir=str(tmp_path))
    with pytest.raises(ConfigError, match="contiguous"):
        load_tasks(cfg)


def test_dataset_hash_tracks_content():
    tasks = load_tasks(tiny_config())
    h1 = dataset_hash(tasks)
    assert h1 == dataset_hash(tasks)
    tasks[0][1].clips[0].feats[0, 0] += 1.0
    assert dataset_hash(tasks) != h1


# ---------------------------------------------------------------- end to end


@pytest.fixture(scope="module")
def tiny_run():
    return run_benchmark(tiny_config())


def test_run_shapes_and_metrics(tiny_run):
    r = tiny_run
    assert [len(row) for row in r.acc_matrix] == [1, 2]
    assert len(r.aa) == len(r.aia) == len(r.bwf) == 2
    assert all(0.0 <= a <= 1.0 for row in r.acc_matrix for a in row)
    assert r.final_aa == r.aa[-1] and r.final_aia == r.aia[-1]
    assert sorted(r.loss_history) == [1, 2]
    assert len(r.loss_history[1]["incremental"]) == 2
    assert len(r.loss_history[1]["rehearsal"]) == 1


def test_run_memory_growth(tiny_run):
    rows = tiny_run.usage_rows
    assert rows[0].episodic_bytes == 2 * 2 * 1 * 8 * 4   # classes*N_s*l*d*4
    assert rows[1].episodic_bytes == 2 * rows[0].episodic_bytes
    assert rows[0].semantic_bytes == 4 * 8 * 4           # one (L,d) prompt
    assert rows[1].semantic_bytes == 2 * rows[0].semantic_bytes


def test_run_is_deterministic():
    a = run_benchmark(tiny_config())
    b = run_benchmark(tiny_config())
    assert a.acc_matrix == b.acc_matrix
    assert results_csv_text(a) == results_csv_text(b)
    assert a.input_sha1 == b.input_sha1


def test_results_csv_layout(tiny_run):
    text = results_csv_text(tiny_run)
    lines = text.strip().split("\n")
    assert lines[0] == "task,aa,aia,bwf,episodic_bytes,semantic_bytes"
    assert len(lines) == 3
    first = lines[1].split(",")
    assert first[0] == "1"
    assert float(first[1]) == tiny_run.aa[0]
    assert repr(tiny_run.aa[0]) == first[1]  # full-precision floats


def test_evaluation_ignores_retrieval_modules(tiny_run):
    model = tiny_run.model
    clips = [c for _, _, test in tiny_run.tasks for c in test.clips]
    before = evaluate(model, clips)
    saved_retr, saved_prompts = model.retrievers, model.prompts
    model.retrievers, model.prompts = {}, {}
    try:
        after = evaluate(model, clips)
    finally:
        model.retrievers, model.prompts = saved_retr, saved_prompts
    assert before.accuracy == after.accuracy
    assert np.array_equal(before.predictions, after.predictions)


def test_evaluation_never_calls_retrieve(tiny_run, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("retrieval used during evaluation")
    monkeypatch.setattr(MrModule, "retrieve", boom)
    clips = tiny_run.tasks[0][2].clips
    evaluate(tiny_run.model, clips)


def test_evaluate_input_validation(tiny_run):
    with pytest.raises(ValueError):
        evaluate(tiny_run.model, [])
    bad = ClipRecord(99, 0, np.zeros((4, 8), np.float32))
    with pytest.raises(ValueError):
        evaluate(tiny_run.model, [bad])


def test_task_modules_frozen_after_their_stage():
    snaps = {}

    def callback(model, spec, acc_matrix, episodic, semantic):
        for key, retr in model.retrievers.items():
            for name, t in retr.parameters().items():
                snaps.setdefault((key, name), []).append(t.data.copy())
        for key, p in model.prompts.items():
            snaps.setdefault(("prompt", key), []).append(p.data.copy())

    run_benchmark(tiny_config(), task_callback=callback)
    task1_keys = [k for k in snaps if "task:1" in k[0] or k[1] == "task:1"]
    assert task1_keys
    for key in task1_keys:
        seen = snaps[key]
        assert len(seen) == 2  # captured after each of the two tasks
        assert np.array_equal(seen[0], seen[1])


def test_rehearsal_preserves_global_modules():
    cfg = tiny_config(mr_scope="global", prompt_scope="global")
    r = run_benchmark(cfg)
    assert set(r.model.retrievers) == {"global"}
    assert set(r.model.prompts) == {"global"}
    # global modules stay trainable between stages
    assert r.model.prompts["global"].requires_grad
    assert all(t.requires_grad for _, t in r.model.retrievers["global"].parameters().items())


def test_baseline_has_no_retrieval_state():
    r = run_benchmark(baseline_config(tiny_config()))
    assert r.model.retrievers == {}
    assert r.model.prompts == {}
    assert r.semantic.bytes_used() == 0


def test_baseline_never_builds_retrieval(monkeypatch):
    # structural check: with retrieval scope off, no retrieval module is
    # ever constructed, so none can run either
    def boom(*a, **kw):
        raise AssertionError("retrieval built during baseline run")

    monkeypatch.setattr("memcil.driver.make_retrieval", boom)
    monkeypatch.setattr(MrModule, "__init__", boom)
    r = run_benchmark(baseline_config(tiny_config()))
    assert len(r.aa) == 2


def test_class_prompt_scope_runs():
    r = run_benchmark(tiny_config(prompt_scope="class"))
    assert set(r.model.prompts) == {f"class:{c}" for c in range(4)}


# ---------------------------------------------------------------- persistence


def test_write_and_reload_run(tmp_path, tiny_run):
    out = str(tmp_path / "run")
    paths = write_outputs(tiny_run, out)
    assert set(paths) == {"results", "manifest", "memory", "modules"}
    cfg, episodic, semantic, retrievers = load_run(out)
    assert cfg.meta["input_sha1"] == tiny_run.input_sha1
    for f in ("k_tasks", "d", "clip_len", "sparse_len", "seed", "alpha"):
        assert getattr(cfg, f) == getattr(tiny_run.cfg, f)
    assert episodic.task_ids() == tiny_run.episodic.task_ids()
    assert semantic.bytes_used() == tiny_run.semantic.bytes_used()
    # the reloaded retrieval modules compute exactly what the live ones do
    rng = np.random.default_rng(3)
    prompt = constant(rng.normal(size=(4, 8)))
    rows = constant(rng.normal(size=(1, 8)))
    for key, live in tiny_run.model.retrievers.items():
        got = retrievers[key].retrieve(prompt, rows).data
        assert np.array_equal(got, live.retrieve(prompt, rows).data)


def test_write_outputs_baseline_skips_memory(tmp_path):
    r = run_benchmark(baseline_config(tiny_config()))
    paths = write_outputs(r, str(tmp_path / "base"))
    assert set(paths) == {"results", "manifest"}


def test_manifest_reruns_identically(tmp_path, tiny_run):
    out = str(tmp_path / "rerun")
    write_outputs(tiny_run, out)
    cfg, _, _, _ = load_run(out)
    cfg.meta = {}
    again = run_benchmark(cfg)
    assert results_csv_text(again) == results_csv_text(tiny_run)


# ---------------------------------------------------------------- distances


def test_distance_analysis_zeroed_module_reports_prompt_distance():
    rng = named_rng(0, "t")
    mr = MrModule(8, 2, rng)
    mr.attn.w_v.data[:] = 0.0
    mr.ffn.fc2.weight.data[:] = 0.0
    mr.ffn.fc2.bias.data[:] = 0.0
    prompt = rng.normal(0.0, 0.02, size=(4, 8))
    clips = [ClipRecord(0, i, np.asarray(rng.normal(size=(4, 8)), np.float32))
             for i in range(5)]
    row = distance_analysis(1, mr, prompt, clips, 1, np.random.default_rng(1))
    want = np.mean([np.linalg.norm(np.asarray(c.feats, np.float64) - prompt)
                    for c in clips])
    assert row.d_retrieved == pytest.approx(want, rel=1e-12)
    assert row.n_clips == 5


def test_distance_analysis_validation():
    rng = named_rng(0, "t2")
    mr = MrModule(8, 2, rng)
    with pytest.raises(ValueError):
        distance_analysis(1, mr, np.zeros((4, 8)), [], 1, np.random.default_rng(0))
    plain = make_retrieval("mlp", 8, 2, 1, 4, rng)
    clips = [ClipRecord(0, 0, np.zeros((4, 8), np.float32))]
    with pytest.raises(StateError):
        distance_analysis(1, plain, np.zeros((4, 8)), clips, 1,
                          np.random.default_rng(0))


def test_distances_csv_layout(tmp_path, tiny_run):
    from memcil.driver import analyze_run
    out = str(tmp_path / "an")
    write_outputs(tiny_run, out)
    rows = analyze_run(out)
    assert [r.task_id for r in rows] == [1, 2]
    assert all(r.n_clips == 8 for r in rows)  # 2 classes x 4 test clips
    text = distances_csv_text(rows)
    assert text.startswith("task,n_clips,d_sparse,d_retrieved,d_random,ok")
    assert len(text.strip().split("\n")) == 3


# ---------------------------------------------------------------- ablations


def test_ablation_preset_structure():
    cfg = tiny_config()
    labels = [label for label, _ in ABLATION_PRESETS["losses"](cfg)]
    assert labels == ["no_matching", "static_only", "temporal_only", "both"]
    assert len(ABLATION_PRESETS["scopes"](cfg)) == 5
    assert len(ABLATION_PRESETS["input_features"](cfg)) == 2
    archs = [label for label, _ in ABLATION_PRESETS["retrieval"](cfg)]
    assert "cross_attention" in archs and len(archs) == 6


def test_baseline_config_fields():
    cfg = baseline_config(tiny_config())
    assert cfg.mr_scope == "none"
    assert cfg.alpha == 0.0 and cfg.beta == 0.0
