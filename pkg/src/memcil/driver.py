"""Benchmark driver: builds the model, runs the per-task loop
(incremental stage, memory write, rehearsal stage, evaluation), and
computes the incremental-learning metrics.

Evaluation deliberately touches only the temporal encoder and the
classifier; retrieval modules and prompts are training-time machinery
and deleting them must not change a single prediction.
"""

import hashlib
import os
import statistics
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .blocks import Classifier, TemporalEncoder
from .config import config_with, format_config, parse_config, validate_config
from .data import SynthSpec, gen_task, load_features
from .errors import ConfigError, StateError
from .memory import (
    EpisodicStore,
    SemanticStore,
    load_memory,
    memory_usage,
    nearest_upsample,
    save_memory,
    subsample,
    write_task_memory,
)
from .retrieval import make_retrieval, rebuild_retrieval
from .rng import named_rng
from .tensor import ParamSet, constant, parameter
from .training import Adam, LossWeights, cosine_lr, incremental_step, rehearsal_step

RESULTS_NAME = "results.csv"
MANIFEST_NAME = "manifest.txt"
MEMORY_NAME = "memory.bin"
MODULES_NAME = "modules.npz"
DISTANCES_NAME = "distances.csv"


@dataclass(frozen=True)
class TaskSpec:
    task_id: int
    class_ids: tuple


def make_schedule(cfg):
    """Disjoint, contiguous class ranges: the base task then k-1 equal tasks."""
    specs = []
    start = 0
    for k in range(1, cfg.k_tasks + 1):
        n = cfg.base_task_classes if k == 1 else cfg.classes_per_task
        specs.append(TaskSpec(k, tuple(range(start, start + n))))
        start += n
    return specs


def load_tasks(cfg):
    """Return [(TaskSpec, train FeatureDataset, test FeatureDataset)]."""
    if cfg.data == "synthetic":
        schedule = make_schedule(cfg)
        spec = SynthSpec(n_classes=cfg.n_classes, d=cfg.d, L=cfg.clip_len,
                         bank_size=cfg.bank_size, noise_sigma=cfg.noise_sigma,
                         train_clips=cfg.train_clips, test_clips=cfg.test_clips,
                         seed=cfg.seed)
        return [(ts, gen_task(spec, ts.class_ids, "train"),
                 gen_task(spec, ts.class_ids, "test")) for ts in schedule]
    tasks = []
    seen = set()
    next_class = 0
    for k in range(1, cfg.k_tasks + 1):
        train = load_features(os.path.join(cfg.feature_dir, f"task{k}_train.feat"))
        test = load_features(os.path.join(cfg.feature_dir, f"task{k}_test.feat"))
        for name, ds in (("train", train), ("test", test)):
            if ds.d != cfg.d or ds.L != cfg.clip_len:
                raise ConfigError(
                    f"task {k} {name} features are ({ds.L},{ds.d}), config says "
                    f"({cfg.clip_len},{cfg.d})", key="feature_dir")
        classes = tuple(train.classes())
        if set(test.classes()) != set(classes):
            raise ConfigError(f"task {k} train/test class sets differ", key="feature_dir")
        if seen & set(classes):
            raise ConfigError(f"task {k} reuses classes from earlier tasks", key="feature_dir")
        if classes != tuple(range(next_class, next_class + len(classes))):
            raise ConfigError(
                f"task {k} classes {classes} are not the contiguous next block",
                key="feature_dir")
        seen.update(classes)
        next_class += len(classes)
        tasks.append((TaskSpec(k, classes), train, test))
    return tasks


def dataset_hash(tasks):
    """SHA-1 over every clip of every task, train then test, in order."""
    h = hashlib.sha1()
    for spec, train, test in tasks:
        h.update(struct.pack("<I", spec.task_id))
        for ds in (train, test):
            for clip in ds.clips:
                h.update(struct.pack("<IQ", clip.label, clip.clip_id))
                h.update(np.ascontiguousarray(clip.feats, dtype="<f4").tobytes())
    return h.hexdigest()


def _mr_key(cfg, task_id):
    if cfg.mr_scope == "none":
        return None
    return "global" if cfg.mr_scope == "global" else f"task:{task_id}"


def _prompt_key(cfg, task_id, label):
    if cfg.prompt_scope == "global":
        return "global"
    if cfg.prompt_scope == "task":
        return f"task:{task_id}"
    return f"class:{label}"


class ModelState:
    """Encoder + classifier (the inference path) plus training-only
    retrieval modules and prompts, keyed by scope unit."""

    def __init__(self, cfg):
        self.cfg = cfg
        rng = named_rng(cfg.seed, "init.encoder")
        max_len = max(cfg.clip_len, cfg.prompt_rows) if cfg.positional else 0
        self.encoder = TemporalEncoder(cfg.d, cfg.n_heads, rng,
                                       n_layers=cfg.encoder_layers, max_len=max_len)
        self.classifier = Classifier(cfg.d)
        self.retrievers = {}
        self.prompts = {}

    def retriever_for(self, task_id):
        key = _mr_key(self.cfg, task_id)
        return None if key is None else self.retrievers[key]

    def prompt_for(self, task_id, label):
        return self.prompts[_prompt_key(self.cfg, task_id, label)]

    def rehearsal_lookup(self):
        def lookup(task_id, label):
            key = _mr_key(self.cfg, task_id)
            if key is None:
                return None, None
            retr = self.retrievers[key]
            if not retr.uses_prompt:
                return retr, None
            return retr, self.prompt_for(task_id, label)
        return lookup


@dataclass
class EvalResult:
    accuracy: float
    predictions: np.ndarray


def evaluate(model, clips):
    """Accuracy of the encoder+classifier path on dense clips.

    Retrieval modules and prompts are never consulted here.
    """
    if not clips:
        raise ValueError("cannot evaluate on an empty clip list")
    n_classes = model.classifier.n_classes
    if n_classes == 0:
        raise StateError("classifier has no classes yet")
    preds = np.empty(len(clips), dtype=np.int64)
    correct = 0
    for i, clip in enumerate(clips):
        if not (0 <= clip.label < n_classes):
            raise ValueError(
                f"clip label {clip.label} outside the {n_classes} seen classes")
        z = model.encoder.encode(constant(np.asarray(clip.feats, dtype=np.float64)))
        logits = model.classifier.logits(z)
        preds[i] = int(np.argmax(logits.data[0]))
        correct += int(preds[i] == clip.label)
    return EvalResult(correct / len(clips), preds)


def compute_metrics(acc_matrix, test_sizes=None):
    """Per-task (aa, aia, bwf) from a lower-triangular accuracy matrix.

    Row k holds the accuracies on tasks 1..k measured after task k. AA_k
    averages over the union of seen test sets, weighted by clip count
    (`test_sizes`); without sizes the tasks are weighted equally. Means
    are exact rational arithmetic, so e.g. AA values [0.8, 0.7, 0.6]
    give AIA exactly 0.7.
    """
    if not acc_matrix:
        raise ValueError("empty accuracy matrix")
    for i, row in enumerate(acc_matrix):
        if len(row) != i + 1:
            raise ValueError(f"row {i + 1} must hold {i + 1} accuracies, got {len(row)}")
    if test_sizes is None:
        aa = [statistics.mean(row) for row in acc_matrix]
    else:
        if len(test_sizes) < len(acc_matrix):
            raise ValueError(f"need {len(acc_matrix)} test sizes, got {len(test_sizes)}")
        if any(n < 1 for n in test_sizes):
            raise ValueError("test sizes must be positive")
        aa = []
        for row in acc_matrix:
            total = sum(Fraction(a) * n for a, n in zip(row, test_sizes))
            aa.append(float(total / sum(test_sizes[:len(row)])))
    aia = [statistics.mean(aa[:i + 1]) for i in range(len(aa))]
    bwf = [0.0]
    for i in range(1, len(acc_matrix)):
        drops = [acc_matrix[j][j] - acc_matrix[i][j] for j in range(i)]
        bwf.append(statistics.mean(drops))
    return aa, aia, bwf


@dataclass
class RunResult:
    cfg: object
    schedule: list
    acc_matrix: list
    aa: list
    aia: list
    bwf: list
    usage_rows: list
    model: ModelState
    episodic: EpisodicStore
    semantic: SemanticStore
    tasks: list
    input_sha1: str
    loss_history: dict = field(default_factory=dict)

    @property
    def final_aa(self):
        return self.aa[-1]

    @property
    def final_aia(self):
        return self.aia[-1]


def _setup_task_modules(cfg, model, spec):
    """Create (or reuse) the retrieval module and prompts for this task.

    Returns (retriever, trainable prompt keys for this stage).
    """
    key = _mr_key(cfg, spec.task_id)
    if key is None:
        return None, []
    if key not in model.retrievers:
        in_len = cfg.clip_len if cfg.retrieval_input == "dense" else cfg.sparse_len
        rng = named_rng(cfg.seed, f"init.mr.{key}")
        model.retrievers[key] = make_retrieval(
            cfg.retrieval_arch, cfg.d, cfg.n_heads, in_len, cfg.prompt_rows, rng)
    retriever = model.retrievers[key]
    if not retriever.uses_prompt:
        return retriever, []
    if cfg.prompt_scope == "global":
        keys = ["global"]
    elif cfg.prompt_scope == "task":
        keys = [f"task:{spec.task_id}"]
    else:
        keys = [f"class:{c}" for c in spec.class_ids]
    for pkey in keys:
        if pkey not in model.prompts:
            rng = named_rng(cfg.seed, f"init.prompt.{pkey}")
            model.prompts[pkey] = parameter(
                rng.normal(0.0, 0.02, size=(cfg.prompt_rows, cfg.d)))
    return retriever, keys


def _incremental_stage(cfg, model, retriever, prompt_keys, spec, train_ds, weights):
    k = spec.task_id
    params = ParamSet()
    params.extend(model.encoder.parameters("encoder"))
    params.extend(model.classifier.parameters("classifier"))
    if retriever is not None:
        params.extend(retriever.parameters("mr"))
    for pkey in prompt_keys:
        params.add(f"prompt.{pkey}", model.prompts[pkey])
    opt = Adam(params)
    batch_rng = named_rng(cfg.seed, f"task{k}.batching")
    samp_rng = named_rng(cfg.seed, f"task{k}.sampling")
    items = [(np.asarray(c.feats, dtype=np.float64), c.label) for c in train_ds.clips]

    def prompt_of(label):
        return model.prompts[_prompt_key(cfg, k, label)]

    history = []
    for epoch in range(cfg.epochs_incremental):
        lr = cosine_lr(cfg.lr, epoch, cfg.epochs_incremental)
        order = batch_rng.permutation(len(items))
        totals = []
        for start in range(0, len(items), cfg.batch_size):
            batch = [items[i] for i in order[start:start + cfg.batch_size]]
            bd = incremental_step(
                model.encoder, model.classifier, retriever, prompt_of, batch,
                spec.class_ids, cfg.sparse_len, weights, opt, lr,
                subsample_rng=samp_rng, retrieval_input=cfg.retrieval_input)
            totals.append(bd.total)
        history.append(statistics.mean(totals))
    return history


def _freeze_task_modules(cfg, model, retriever, prompt_keys, spec):
    if retriever is not None and cfg.mr_scope == "task":
        retriever.freeze()
    if cfg.prompt_scope in ("task", "class"):
        for pkey in prompt_keys:
            model.prompts[pkey].requires_grad = False


def _write_memory(cfg, model, episodic, semantic, spec, train_ds, retriever, prompt_keys):
    k = spec.task_id
    rng = named_rng(cfg.seed, f"task{k}.exemplars")
    attn_fn = None
    if cfg.storage_strategy == "temporal_attention":
        def attn_fn(feats):
            _, mass = model.encoder.encode(
                constant(np.asarray(feats, dtype=np.float64)), need_attn=True)
            return mass
    task_prompt = None
    if retriever is not None and retriever.uses_prompt and cfg.prompt_scope == "task":
        task_prompt = model.prompts[f"task:{k}"].data
    write_task_memory(episodic, semantic if task_prompt is not None else None,
                      k, train_ds.clips, task_prompt, cfg.n_exemplars,
                      cfg.sparse_len, cfg.storage_strategy, rng, attn_fn)
    if retriever is not None and retriever.uses_prompt:
        if cfg.prompt_scope == "global":
            semantic.put(0, model.prompts["global"].data.astype(np.float32),
                         allow_replace=True)
        elif cfg.prompt_scope == "class":
            for pkey in prompt_keys:
                label = int(pkey.split(":")[1])
                semantic.put(label, model.prompts[pkey].data.astype(np.float32))


def _rehearsal_stage(cfg, model, episodic, task_id, seen_classes):
    params = ParamSet()
    params.extend(model.encoder.parameters("encoder"))
    params.extend(model.classifier.parameters("classifier"))
    opt = Adam(params)
    # Global-scope modules stay trainable across incremental stages but
    # must not move (or build graph) during rehearsal.
    paused = []
    if cfg.mr_scope == "global" and "global" in model.retrievers:
        paused.extend(t for _, t in model.retrievers["global"].parameters("g").items()
                      if t.requires_grad)
    if "global" in model.prompts and model.prompts["global"].requires_grad:
        paused.append(model.prompts["global"])
    for t in paused:
        t.requires_grad = False
    try:
        items = [(tid, clip.label, np.asarray(clip.feats, dtype=np.float64))
                 for tid, clip in episodic.all_clips()]
        lookup = model.rehearsal_lookup()
        rng = named_rng(cfg.seed, f"task{task_id}.rehearsal")
        history = []
        for epoch in range(cfg.epochs_rehearsal):
            lr = cosine_lr(cfg.lr, epoch, cfg.epochs_rehearsal)
            order = rng.permutation(len(items))
            losses = []
            for start in range(0, len(items), cfg.batch_size):
                batch = [items[i] for i in order[start:start + cfg.batch_size]]
                losses.append(rehearsal_step(
                    model.encoder, model.classifier, batch, lookup,
                    cfg.clip_len, seen_classes, opt, lr))
            history.append(statistics.mean(losses))
        return history
    finally:
        for t in paused:
            t.requires_grad = True


def run_benchmark(cfg, task_callback=None):
    """Run the full benchmark described by `cfg` and return a RunResult."""
    validate_config(cfg)
    tasks = load_tasks(cfg)
    input_sha1 = dataset_hash(tasks)
    model = ModelState(cfg)
    episodic = EpisodicStore(cfg.d, cfg.sparse_len, cfg.n_exemplars)
    semantic = SemanticStore(cfg.d, cfg.prompt_rows)
    weights = LossWeights(cfg.alpha, cfg.beta)
    acc_matrix = []
    usage_rows = []
    loss_history = {}
    seen_classes = []
    for spec, train_ds, test_ds in tasks:
        k = spec.task_id
        seen_classes.extend(spec.class_ids)
        model.classifier.grow(len(spec.class_ids), named_rng(cfg.seed, f"init.head.task{k}"))
        retriever, prompt_keys = _setup_task_modules(cfg, model, spec)
        inc_hist = _incremental_stage(cfg, model, retriever, prompt_keys, spec,
                                      train_ds, weights)
        _freeze_task_modules(cfg, model, retriever, prompt_keys, spec)
        _write_memory(cfg, model, episodic, semantic, spec, train_ds,
                      retriever, prompt_keys)
        reh_hist = _rehearsal_stage(cfg, model, episodic, k, seen_classes)
        loss_history[k] = {"incremental": inc_hist, "rehearsal": reh_hist}
        row = [evaluate(model, tasks[j][2].clips).accuracy for j in range(k)]
        acc_matrix.append(row)
        usage_rows.append(memory_usage(episodic, semantic))
        if task_callback is not None:
            task_callback(model, spec, acc_matrix, episodic, semantic)
    aa, aia, bwf = compute_metrics(acc_matrix, [len(t[2].clips) for t in tasks])
    return RunResult(cfg, [t[0] for t in tasks], acc_matrix, aa, aia, bwf,
                     usage_rows, model, episodic, semantic, tasks, input_sha1,
                     loss_history)


def _csv_float(x):
    return repr(float(x))


def results_csv_text(result):
    lines = ["task,aa,aia,bwf,episodic_bytes,semantic_bytes"]
    for i in range(len(result.aa)):
        usage = result.usage_rows[i]
        lines.append(",".join([
            str(i + 1), _csv_float(result.aa[i]), _csv_float(result.aia[i]),
            _csv_float(result.bwf[i]), str(usage.episodic_bytes),
            str(usage.semantic_bytes)]))
    return "\n".join(lines) + "\n"


def _persistable(result):
    """Memory files are task-keyed, so only runs whose retrieval state is
    exactly one prompt per task can round-trip through them."""
    cfg = result.cfg
    return (cfg.mr_scope == "task" and cfg.prompt_scope == "task"
            and bool(result.model.retrievers)
            and all(r.uses_prompt for r in result.model.retrievers.values()))


def write_outputs(result, out_dir):
    """Write results.csv, manifest.txt and, when representable, the
    memory file and retrieval-module arrays. Returns {name: path}."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    paths["results"] = os.path.join(out_dir, RESULTS_NAME)
    with open(paths["results"], "w", encoding="utf-8") as fh:
        fh.write(results_csv_text(result))
    paths["manifest"] = os.path.join(out_dir, MANIFEST_NAME)
    with open(paths["manifest"], "w", encoding="utf-8") as fh:
        fh.write(format_config(result.cfg, {"input_sha1": result.input_sha1}))
    if _persistable(result):
        paths["memory"] = os.path.join(out_dir, MEMORY_NAME)
        save_memory(result.episodic, result.semantic, paths["memory"])
        arrays = {}
        for key, module in result.model.retrievers.items():
            for pname, tensor in module.parameters("mr").items():
                arrays[f"{key}|{pname}"] = tensor.data
        paths["modules"] = os.path.join(out_dir, MODULES_NAME)
        np.savez(paths["modules"], **arrays)
    return paths


def load_run(run_dir):
    """Rebuild (cfg, episodic, semantic, retrievers) from a run directory."""
    manifest_path = os.path.join(run_dir, MANIFEST_NAME)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    validate_config(cfg)
    episodic, semantic = load_memory(os.path.join(run_dir, MEMORY_NAME))
    retrievers = {}
    modules_path = os.path.join(run_dir, MODULES_NAME)
    with np.load(modules_path) as arrays:
        grouped = {}
        for full_name in arrays.files:
            key, _, pname = full_name.partition("|")
            grouped.setdefault(key, {})[pname] = arrays[full_name]
    in_len = cfg.clip_len if cfg.retrieval_input == "dense" else cfg.sparse_len
    for key, named in grouped.items():
        retrievers[key] = rebuild_retrieval(
            cfg.retrieval_arch, cfg.d, cfg.n_heads, in_len, cfg.prompt_rows, named)
    return cfg, episodic, semantic, retrievers


@dataclass
class DistanceRow:
    """Mean feature-space distances for one task's held-out clips."""

    task_id: int
    n_clips: int
    d_sparse: float
    d_retrieved: float
    d_random: float

    @property
    def ok(self):
        return (self.d_retrieved < self.d_sparse) and (self.d_retrieved < self.d_random)


def distance_analysis(task_id, retriever, prompt, clips, sparse_len,
                      prompt_rng, subsample_rng=None, strategy="uniform"):
    """Compare three reconstructions of held-out dense features.

    For each clip: the nearest-neighbour upsampled sparse rows, the
    retrieval module's output from the task prompt, and the same module
    driven by a freshly drawn random prompt. Returns mean Frobenius
    distances to the true dense features.
    """
    if not clips:
        raise ValueError("cannot analyse an empty clip list")
    if not retriever.uses_prompt:
        raise StateError(
            f"retrieval architecture {retriever.arch!r} has no prompt to randomise")
    prompt = np.asarray(prompt, dtype=np.float64)
    acc = np.zeros(3)
    for clip in clips:
        dense = np.asarray(clip.feats, dtype=np.float64)
        _, rows = subsample(dense, sparse_len, strategy, rng=subsample_rng)
        up = nearest_upsample(rows, dense.shape[0])
        ret = retriever.retrieve(constant(prompt), constant(rows)).data
        rand_prompt = prompt_rng.normal(0.0, 0.02, size=prompt.shape)
        rand = retriever.retrieve(constant(rand_prompt), constant(rows)).data
        acc += (np.linalg.norm(dense - up), np.linalg.norm(dense - ret),
                np.linalg.norm(dense - rand))
    means = acc / len(clips)
    return DistanceRow(task_id, len(clips), means[0], means[1], means[2])


def analyze_run(run_dir):
    """Distance analysis of every task in a persisted run.

    Subsampling here is always the deterministic uniform sketch; the
    attention-based storage strategy would need the encoder, which the
    run directory does not keep.
    """
    cfg, episodic, semantic, retrievers = load_run(run_dir)
    task_ids = episodic.task_ids()
    if not task_ids:
        raise StateError("memory file contains no tasks")
    tasks = load_tasks(cfg)
    by_id = {spec.task_id: test for spec, _, test in tasks}
    prompt_rng = named_rng(cfg.seed, "analysis.random_prompt")
    rows = []
    for task_id in task_ids:
        if task_id not in by_id:
            raise StateError(f"memory holds task {task_id} but the config defines "
                             f"only {len(by_id)} tasks")
        key = f"task:{task_id}"
        if key not in retrievers:
            raise StateError(f"no retrieval module stored for task {task_id}")
        rows.append(distance_analysis(
            task_id, retrievers[key], semantic.prompt(task_id),
            by_id[task_id].clips, cfg.sparse_len, prompt_rng))
    return rows


def distances_csv_text(rows):
    lines = ["task,n_clips,d_sparse,d_retrieved,d_random,ok"]
    for r in rows:
        lines.append(",".join([
            str(r.task_id), str(r.n_clips), _csv_float(r.d_sparse),
            _csv_float(r.d_retrieved), _csv_float(r.d_random),
            "1" if r.ok else "0"]))
    return "\n".join(lines) + "\n"


def baseline_config(cfg):
    """The sparse-only arm: no retrieval modules, no prompts, no matching
    losses; rehearsal falls back to upsampled sparse features."""
    return config_with(cfg, mr_scope="none", alpha=0.0, beta=0.0)


def _scope_variants(cfg):
    return [
        ("no_mr_no_prompt", baseline_config(cfg)),
        ("global_mr_global_prompt", config_with(cfg, mr_scope="global", prompt_scope="global")),
        ("global_mr_task_prompt", config_with(cfg, mr_scope="global", prompt_scope="task")),
        ("task_mr_task_prompt", config_with(cfg, mr_scope="task", prompt_scope="task")),
        ("task_mr_class_prompt", config_with(cfg, mr_scope="task", prompt_scope="class")),
    ]


def _retrieval_variants(cfg):
    return [(arch, config_with(cfg, retrieval_arch=arch))
            for arch in ("feature_interpolation", "mlp", "add", "multiply",
                         "self_attention", "cross_attention")]


def _loss_variants(cfg):
    return [
        ("no_matching", config_with(cfg, alpha=0.0, beta=0.0)),
        ("static_only", config_with(cfg, beta=0.0)),
        ("temporal_only", config_with(cfg, alpha=0.0)),
        ("both", cfg),
    ]


def _sampling_variants(cfg):
    return [(s, config_with(cfg, storage_strategy=s))
            for s in ("uniform", "random", "temporal_attention")]


def _input_variants(cfg):
    return [("sparse_input", cfg),
            ("dense_input", config_with(cfg, retrieval_input="dense"))]


def _prompt_length_variants(cfg):
    L = cfg.clip_len
    return [
        ("len_1L_static", cfg),
        ("len_1L", config_with(cfg, alpha=0.0)),
        ("len_2L", config_with(cfg, prompt_len=2 * L, alpha=0.0)),
        ("len_3L", config_with(cfg, prompt_len=3 * L, alpha=0.0)),
    ]


def _robustness_variants(cfg):
    variants = []
    for l in sorted({1, cfg.clip_len // 4, cfg.clip_len // 2, cfg.clip_len} - {0}):
        variants.append((f"full_l{l}", config_with(cfg, sparse_len=l)))
        variants.append((f"baseline_l{l}", config_with(baseline_config(cfg), sparse_len=l)))
    return variants


ABLATION_PRESETS = {
    "scopes": _scope_variants,
    "retrieval": _retrieval_variants,
    "losses": _loss_variants,
    "sampling": _sampling_variants,
    "input_features": _input_variants,
    "prompt_length": _prompt_length_variants,
    "robustness": _robustness_variants,
}


@dataclass
class AblationRow:
    label: str
    mean_aa: float
    mean_aia: float
    seed_aias: list


@dataclass
class AblationTable:
    preset: str
    n_seeds: int
    rows: list

    def format(self):
        width = max(len(r.label) for r in self.rows)
        lines = [f"preset {self.preset} (means over {self.n_seeds} seeds)"]
        lines.append(f"{'variant'.ljust(width)}  final_aa  final_aia")
        for r in self.rows:
            lines.append(f"{r.label.ljust(width)}  {r.mean_aa:8.4f}  {r.mean_aia:9.4f}")
        return "\n".join(lines) + "\n"


def run_ablation(preset, cfg, n_seeds=3):
    """Run every variant of `preset` over `n_seeds` consecutive seeds."""
    if preset not in ABLATION_PRESETS:
        raise ConfigError(f"unknown ablation preset {preset!r}; "
                          f"choose from {sorted(ABLATION_PRESETS)}")
    rows = []
    for label, vcfg in ABLATION_PRESETS[preset](cfg):
        aas = []
        aias = []
        for s in range(n_seeds):
            result = run_benchmark(config_with(vcfg, seed=cfg.seed + s))
            aas.append(result.final_aa)
            aias.append(result.final_aia)
        rows.append(AblationRow(label, statistics.mean(aas), statistics.mean(aias), aias))
    return AblationTable(preset, n_seeds, rows)


def robustness_sweep(cfg, l_values, n_seeds=3):
    """Final AIA of the full method vs the sparse-only baseline for each
    sparse length. Returns {(arm, l): [per-seed aia]}."""
    out = {}
    for l in l_values:
        for arm, base in (("full", cfg), ("baseline", baseline_config(cfg))):
            vcfg = config_with(base, sparse_len=l)
            out[(arm, l)] = [run_benchmark(config_with(vcfg, seed=cfg.seed + s)).final_aia
                             for s in range(n_seeds)]
    return out
