"""Dual-memory class-incremental learning on precomputed video features.

The package trains a small temporal encoder over per-frame features
under a task-incremental protocol. After each task it stores temporally
sparse exemplar features (episodic memory) plus a learnable prompt
(semantic memory); a per-task cross-attention module retrieves dense
features from the two during rehearsal, so old classes can be replayed
at a fraction of the storage cost of dense clips.
"""

__version__ = "0.1.0"

from .config import RunConfig, config_with, load_config, parse_config, validate_config
from .driver import (
    analyze_run,
    compute_metrics,
    distance_analysis,
    evaluate,
    make_schedule,
    run_ablation,
    run_benchmark,
    write_outputs,
)
from .errors import ConfigError, FormatError, StateError

__all__ = [
    "ConfigError",
    "FormatError",
    "RunConfig",
    "StateError",
    "analyze_run",
    "compute_metrics",
    "config_with",
    "distance_analysis",
    "evaluate",
    "load_config",
    "make_schedule",
    "parse_config",
    "run_ablation",
    "run_benchmark",
    "validate_config",
    "write_outputs",
    "__version__",
]
