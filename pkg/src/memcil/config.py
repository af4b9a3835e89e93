"""Flat `key = value` run configuration.

Files hold one key per line, `#` starts a comment line, and keys prefixed
`meta.` are carried through untouched (the manifest uses them to echo
provenance without affecting behaviour). Parsing a formatted config
returns an equal config, which is what makes manifests re-runnable.
"""

from dataclasses import dataclass, field, fields, replace

from .errors import ConfigError
from .memory import SUBSAMPLE_STRATEGIES
from .retrieval import RETRIEVAL_ARCHS

MR_SCOPES = ("none", "global", "task")
PROMPT_SCOPES = ("global", "task", "class")


@dataclass
class RunConfig:
    """Everything a benchmark run depends on, with desk-scale defaults."""

    data: str = "synthetic"
    feature_dir: str = ""
    k_tasks: int = 3
    classes_per_task: int = 4
    base_classes: int = 0           # 0 means classes_per_task
    d: int = 32
    clip_len: int = 8
    sparse_len: int = 2
    n_exemplars: int = 6
    prompt_len: int = 0             # 0 means clip_len
    mr_scope: str = "task"
    prompt_scope: str = "task"
    retrieval_arch: str = "cross_attention"
    storage_strategy: str = "uniform"
    retrieval_input: str = "sparse"
    alpha: float = 1.0
    beta: float = 1.0
    lr: float = 0.001
    epochs_incremental: int = 12
    epochs_rehearsal: int = 10
    batch_size: int = 4
    n_heads: int = 2
    encoder_layers: int = 3
    positional: bool = True
    train_clips: int = 40
    test_clips: int = 20
    noise_sigma: float = 0.1
    bank_size: int = 0              # 0 means clip_len
    seed: int = 0
    out_dir: str = "runs/out"
    meta: dict = field(default_factory=dict, compare=True)

    @property
    def prompt_rows(self):
        return self.prompt_len or self.clip_len

    @property
    def base_task_classes(self):
        return self.base_classes or self.classes_per_task

    @property
    def n_classes(self):
        return self.base_task_classes + (self.k_tasks - 1) * self.classes_per_task


def _parse_bool(raw):
    low = raw.lower()
    if low in ("true", "yes", "1"):
        return True
    if low in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


_CONVERTERS = {bool: _parse_bool, int: int, float: float, str: str}


def _field_types():
    out = {}
    for f in fields(RunConfig):
        if f.name == "meta":
            continue
        out[f.name] = f.type if isinstance(f.type, type) else {"str": str, "int": int,
                                                               "float": float, "bool": bool}[f.type]
    return out


_FIELDS = _field_types()


def parse_config(text):
    """Parse config text into a RunConfig; unknown keys are errors."""
    values = {}
    meta = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key.startswith("meta."):
            meta[key[5:]] = value
            continue
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}", key=key)
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}", key=key)
        try:
            values[key] = _CONVERTERS[_FIELDS[key]](value)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: bad value {value!r} for key {key!r}", key=key) from None
    cfg = RunConfig(**values)
    cfg.meta = meta
    return cfg


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_config(cfg, extra_meta=None):
    """Render a config (and optional extra meta lines) back to text."""
    lines = [f"{name} = {_format_value(getattr(cfg, name))}" for name in _FIELDS]
    merged = dict(cfg.meta)
    if extra_meta:
        merged.update(extra_meta)
    for key in sorted(merged):
        lines.append(f"meta.{key} = {merged[key]}")
    return "\n".join(lines) + "\n"


def _fail(msg, key):
    raise ConfigError(f"{key}: {msg}", key=key)


def validate_config(cfg):
    """Check cross-field consistency; raises ConfigError naming the key."""
    if cfg.data not in ("synthetic", "features"):
        _fail(f"must be 'synthetic' or 'features', got {cfg.data!r}", "data")
    if cfg.data == "features" and not cfg.feature_dir:
        _fail("required when data = features", "feature_dir")
    if cfg.k_tasks < 1:
        _fail("need at least one task", "k_tasks")
    if cfg.classes_per_task < 1:
        _fail("need at least one class per task", "classes_per_task")
    if cfg.base_classes < 0:
        _fail("must be >= 0", "base_classes")
    if cfg.base_task_classes < 2:
        _fail("the first task needs at least two classes", "base_classes")
    if cfg.d < 1:
        _fail("feature dim must be positive", "d")
    if cfg.clip_len < 1:
        _fail("clip length must be positive", "clip_len")
    if not (1 <= cfg.sparse_len <= cfg.clip_len):
        _fail(f"must be in [1, clip_len={cfg.clip_len}]", "sparse_len")
    if cfg.n_exemplars < 1:
        _fail("exemplar budget must be positive", "n_exemplars")
    if cfg.prompt_len < 0:
        _fail("must be >= 0 (0 means clip_len)", "prompt_len")
    if cfg.mr_scope not in MR_SCOPES:
        _fail(f"must be one of {MR_SCOPES}", "mr_scope")
    if cfg.prompt_scope not in PROMPT_SCOPES:
        _fail(f"must be one of {PROMPT_SCOPES}", "prompt_scope")
    if cfg.retrieval_arch not in RETRIEVAL_ARCHS:
        _fail(f"must be one of {RETRIEVAL_ARCHS}", "retrieval_arch")
    if cfg.storage_strategy not in SUBSAMPLE_STRATEGIES:
        _fail(f"must be one of {SUBSAMPLE_STRATEGIES}", "storage_strategy")
    if cfg.retrieval_input not in ("sparse", "dense"):
        _fail("must be 'sparse' or 'dense'", "retrieval_input")
    if cfg.alpha < 0 or cfg.beta < 0:
        _fail("loss weights must be non-negative", "alpha" if cfg.alpha < 0 else "beta")
    if cfg.alpha > 0 and cfg.prompt_rows != cfg.clip_len:
        _fail("the static matching loss needs prompt_len == clip_len; "
              "set alpha = 0 for other prompt lengths", "prompt_len")
    if cfg.lr <= 0:
        _fail("learning rate must be positive", "lr")
    if cfg.epochs_incremental < 1 or cfg.epochs_rehearsal < 1:
        _fail("epoch counts must be positive",
              "epochs_incremental" if cfg.epochs_incremental < 1 else "epochs_rehearsal")
    if cfg.batch_size < 1:
        _fail("batch size must be positive", "batch_size")
    if cfg.n_heads < 1 or cfg.d % cfg.n_heads != 0:
        _fail(f"d={cfg.d} must be divisible by n_heads", "n_heads")
    if cfg.encoder_layers < 1:
        _fail("encoder needs at least one layer", "encoder_layers")
    if cfg.data == "synthetic":
        if cfg.train_clips < 1 or cfg.test_clips < 1:
            _fail("clip counts must be positive",
                  "train_clips" if cfg.train_clips < 1 else "test_clips")
        if cfg.noise_sigma < 0:
            _fail("noise must be non-negative", "noise_sigma")
        if cfg.bank_size != 0 and cfg.bank_size < cfg.clip_len:
            _fail("prototype bank must hold at least clip_len rows", "bank_size")
    if cfg.seed < 0:
        _fail("seed must be non-negative", "seed")
    return cfg


def config_with(cfg, **overrides):
    """Copy with field overrides; meta is carried over."""
    return replace(cfg, **overrides)
