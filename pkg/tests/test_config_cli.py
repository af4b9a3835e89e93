"""Config parsing/validation and the command-line entry point."""

import os

import numpy as np
import pytest

import memcil.tensor
from memcil import tensor as T
from memcil.cli import main
from memcil.config import (
    RunConfig,
    config_with,
    format_config,
    load_config,
    parse_config,
    validate_config,
)
from memcil.errors import ConfigError

TINY = """\
k_tasks = 2
classes_per_task = 2
d = 8
clip_len = 4
sparse_len = 1
n_exemplars = 2
epochs_incremental = 2
epochs_rehearsal = 1
batch_size = 4
n_heads = 2
encoder_layers = 1
train_clips = 6
test_clips = 4
seed = 0
"""


# ---------------------------------------------------------------- parsing


def test_round_trip_defaults():
    cfg = RunConfig()
    again = parse_config(format_config(cfg))
    assert again == cfg
    assert format_config(again) == format_config(cfg)


def test_round_trip_with_meta():
    cfg = RunConfig(lr=0.0005, alpha=0.5, positional=False)
    cfg.meta = {"note": "hello world", "input_sha1": "abc123"}
    again = parse_config(format_config(cfg))
    assert again == cfg
    assert again.meta["note"] == "hello world"


def test_parse_ignores_comments_and_blanks():
    cfg = parse_config("# a comment\n\nseed = 3\n  \n# more\nd = 16\n")
    assert cfg.seed == 3 and cfg.d == 16


def test_parse_unknown_key():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("learning_rate = 0.1\n")


def test_parse_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("seed = 1\nseed = 2\n")


def test_parse_bad_value_names_key_and_line():
    with pytest.raises(ConfigError, match="line 2.*'seed'"):
        parse_config("d = 8\nseed = soon\n")


def test_parse_missing_equals():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("just some words\n")


def test_parse_bools():
    assert parse_config("positional = yes\n").positional is True
    assert parse_config("positional = 0\n").positional is False
    with pytest.raises(ConfigError):
        parse_config("positional = maybe\n")


def test_float_formatting_survives_round_trip():
    cfg = RunConfig(lr=0.001, noise_sigma=0.30000000000000004)
    text = format_config(cfg)
    assert "lr = 0.001\n" in text
    assert parse_config(text).noise_sigma == cfg.noise_sigma


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(str(tmp_path / "nope.cfg"))


# ---------------------------------------------------------------- validation


@pytest.mark.parametrize("overrides,key", [
    (dict(data="videos"), "data"),
    (dict(data="features"), "feature_dir"),
    (dict(k_tasks=0), "k_tasks"),
    (dict(classes_per_task=0), "classes_per_task"),
    (dict(base_classes=1), "base_classes"),
    (dict(d=0), "d"),
    (dict(sparse_len=9), "sparse_len"),
    (dict(sparse_len=0), "sparse_len"),
    (dict(n_exemplars=0), "n_exemplars"),
    (dict(mr_scope="sometimes"), "mr_scope"),
    (dict(prompt_scope="none"), "prompt_scope"),
    (dict(retrieval_arch="magic"), "retrieval_arch"),
    (dict(storage_strategy="latest"), "storage_strategy"),
    (dict(retrieval_input="both"), "retrieval_input"),
    (dict(alpha=-1.0), "alpha"),
    (dict(beta=-0.5), "beta"),
    (dict(prompt_len=16), "prompt_len"),
    (dict(lr=0.0), "lr"),
    (dict(epochs_incremental=0), "epochs_incremental"),
    (dict(epochs_rehearsal=0), "epochs_rehearsal"),
    (dict(batch_size=0), "batch_size"),
    (dict(n_heads=3), "n_heads"),
    (dict(encoder_layers=0), "encoder_layers"),
    (dict(train_clips=0), "train_clips"),
    (dict(noise_sigma=-0.1), "noise_sigma"),
    (dict(bank_size=4), "bank_size"),
    (dict(seed=-1), "seed"),
])
def test_validate_rejects(overrides, key):
    cfg = RunConfig(**overrides)
    with pytest.raises(ConfigError) as err:
        validate_config(cfg)
    assert err.value.key == key


def test_validate_accepts_defaults_and_variants():
    validate_config(RunConfig())
    validate_config(RunConfig(mr_scope="none", alpha=0.0, beta=0.0))
    validate_config(RunConfig(prompt_len=16, alpha=0.0))
    validate_config(RunConfig(bank_size=12))


def test_prompt_len_needs_alpha_off():
    with pytest.raises(ConfigError, match="alpha"):
        validate_config(RunConfig(prompt_len=16))


def test_config_with_keeps_meta():
    cfg = RunConfig()
    cfg.meta = {"note": "x"}
    out = config_with(cfg, seed=5)
    assert out.seed == 5 and out.meta == {"note": "x"}
    assert cfg.seed == 0


# ---------------------------------------------------------------- cli


@pytest.fixture()
def cfg_file(tmp_path):
    path = str(tmp_path / "tiny.cfg")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(TINY)
    return path


def test_cli_run_writes_outputs(cfg_file, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["run", "--config", cfg_file, "--out", out]) == 0
    stdout = capsys.readouterr().out
    assert "task 1:" in stdout and "task 2:" in stdout
    assert os.path.exists(os.path.join(out, "results.csv"))
    assert os.path.exists(os.path.join(out, "manifest.txt"))
    assert os.path.exists(os.path.join(out, "memory.bin"))
    assert os.path.exists(os.path.join(out, "modules.npz"))


def test_cli_run_twice_byte_identical(cfg_file, tmp_path):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["run", "--config", cfg_file, "--out", out1]) == 0
    assert main(["run", "--config", cfg_file, "--out", out2]) == 0
    for name in ("results.csv", "memory.bin"):
        with open(os.path.join(out1, name), "rb") as fh:
            b1 = fh.read()
        with open(os.path.join(out2, name), "rb") as fh:
            b2 = fh.read()
        assert b1 == b2, name


def test_cli_run_seed_override_changes_results(cfg_file, tmp_path):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["run", "--config", cfg_file, "--out", out1]) == 0
    assert main(["run", "--config", cfg_file, "--out", out2, "--seed", "9"]) == 0
    with open(os.path.join(out1, "results.csv")) as fh:
        r1 = fh.read()
    with open(os.path.join(out2, "results.csv")) as fh:
        r2 = fh.read()
    assert r1 != r2


def test_cli_run_missing_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.cfg")]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_run_invalid_config(tmp_path, capsys):
    path = str(tmp_path / "bad.cfg")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n_heads = 3\n")
    assert main(["run", "--config", path]) == 2
    assert "n_heads" in capsys.readouterr().err


def test_cli_analyze_roundtrip(cfg_file, tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["run", "--config", cfg_file, "--out", out]) == 0
    capsys.readouterr()
    assert main(["analyze", "--run", out]) == 0
    stdout = capsys.readouterr().out
    assert "task 1:" in stdout and "task 2:" in stdout
    assert os.path.exists(os.path.join(out, "distances.csv"))


def test_cli_analyze_missing_run(tmp_path, capsys):
    assert main(["analyze", "--run", str(tmp_path / "empty")]) == 1
    assert "error" in capsys.readouterr().err


def test_cli_analyze_baseline_run_fails(tmp_path, capsys):
    cfg = str(tmp_path / "base.cfg")
    with open(cfg, "w", encoding="utf-8") as fh:
        fh.write(TINY + "mr_scope = none\nalpha = 0.0\nbeta = 0.0\n")
    out = str(tmp_path / "out")
    assert main(["run", "--config", cfg, "--out", out]) == 0
    assert main(["analyze", "--run", out]) == 1


def test_cli_ablate_losses(cfg_file, capsys):
    assert main(["ablate", "--preset", "losses", "--config", cfg_file,
                 "--seeds", "1"]) == 0
    stdout = capsys.readouterr().out
    for label in ("no_matching", "static_only", "temporal_only", "both"):
        assert label in stdout


def test_cli_ablate_unknown_preset(cfg_file):
    with pytest.raises(SystemExit) as err:
        main(["ablate", "--preset", "everything", "--config", cfg_file])
    assert err.value.code == 2


def test_cli_gradcheck_passes(capsys):
    assert main(["gradcheck"]) == 0
    assert "passed" in capsys.readouterr().out


def test_cli_gradcheck_names_corrupted_op(monkeypatch, capsys):
    real_gelu = T.gelu

    def bad_gelu(x):
        good = real_gelu(x)

        def backward():
            # pretend the local derivative is 1 everywhere
            T._accum(x, out.grad)

        out = T._node(good.data, (x,), backward)
        return out

    monkeypatch.setattr(memcil.tensor, "gelu", bad_gelu)
    assert main(["gradcheck"]) == 1
    stdout = capsys.readouterr().out
    assert "gelu" in stdout and "FAIL" in stdout


def test_cli_gradcheck_tol_flag(capsys):
    # an absurdly tight tolerance turns finite-difference noise into failures
    assert main(["gradcheck", "--tol", "1e-14"]) == 1
    assert "FAIL" in capsys.readouterr().out
