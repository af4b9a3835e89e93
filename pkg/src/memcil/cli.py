"""Command-line entry point.

Subcommands:
  run       execute a benchmark from a config file and write outputs
  gradcheck finite-difference check of every block's gradients
  ablate    run a named ablation preset over several seeds
  analyze   distance analysis of a persisted run directory

Exit codes: 0 success, 1 runtime failure, 2 config error.
"""

import argparse
import os
import sys

import numpy as np

from . import tensor as T
from .blocks import Classifier, FfnBlock, MhcaBlock, MrModule, TemporalEncoder
from .config import config_with, load_config, validate_config
from .driver import (
    ABLATION_PRESETS,
    DISTANCES_NAME,
    analyze_run,
    distances_csv_text,
    run_ablation,
    run_benchmark,
    write_outputs,
)
from .errors import ConfigError
from .rng import named_rng


def _parser():
    p = argparse.ArgumentParser(prog="memcil",
                                description="dual-memory incremental learning on features")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a benchmark from a config file")
    run.add_argument("--config", required=True, help="path to a key = value config file")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--out", default=None, help="override the output directory")
    run.set_defaults(func=cmd_run)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--tol", type=float, default=1e-4, help="max relative error")
    gc.set_defaults(func=cmd_gradcheck)

    ab = sub.add_parser("ablate", help="run an ablation preset")
    ab.add_argument("--preset", required=True, choices=sorted(ABLATION_PRESETS))
    ab.add_argument("--config", required=True)
    ab.add_argument("--seeds", type=int, default=3, help="number of consecutive seeds")
    ab.set_defaults(func=cmd_ablate)

    an = sub.add_parser("analyze", help="distance analysis of a run directory")
    an.add_argument("--run", required=True, help="directory written by `memcil run`")
    an.set_defaults(func=cmd_analyze)
    return p


def cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = config_with(cfg, seed=args.seed)
    if args.out is not None:
        cfg = config_with(cfg, out_dir=args.out)
    validate_config(cfg)
    result = run_benchmark(cfg)
    for i in range(len(result.aa)):
        print(f"task {i + 1}: aa={result.aa[i]:.4f} aia={result.aia[i]:.4f} "
              f"bwf={result.bwf[i]:.4f}")
    usage = result.usage_rows[-1]
    print(f"memory: episodic {usage.episodic_bytes} B + semantic "
          f"{usage.semantic_bytes} B = {usage.total_bytes} B "
          f"({usage.total_mib:.3f} MiB)")
    for name, path in sorted(write_outputs(result, cfg.out_dir).items()):
        print(f"wrote {path}")
    return 0


def _weighted_sum(out, weight):
    return T.sum_all(T.mul(out, T.constant(weight)))


def _gradcheck_suite():
    """Named (builder, params) pairs; each builder returns a scalar loss
    closure over the listed parameters, rebuilt from data on every call."""
    checks = []

    def add_check(name, make):
        checks.append((name, make))

    def op_matmul():
        rng = named_rng(7, "gradcheck.matmul")
        a = T.parameter(rng.normal(size=(3, 4)))
        b = T.parameter(rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        ps = T.ParamSet()
        ps.add("a", a)
        ps.add("b", b)
        return lambda: _weighted_sum(T.matmul(a, b), w), ps

    def op_softmax():
        rng = named_rng(7, "gradcheck.softmax")
        x = T.parameter(rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))
        ps = T.ParamSet()
        ps.add("x", x)
        return lambda: _weighted_sum(T.softmax_rows(x), w), ps

    def op_layer_norm():
        rng = named_rng(7, "gradcheck.layer_norm")
        x = T.parameter(rng.normal(size=(4, 6)))
        gamma = T.parameter(rng.normal(size=6))
        beta = T.parameter(rng.normal(size=6))
        w = rng.normal(size=(4, 6))
        ps = T.ParamSet()
        ps.add("x", x)
        ps.add("gamma", gamma)
        ps.add("beta", beta)
        return lambda: _weighted_sum(T.layer_norm(x, gamma, beta), w), ps

    def op_gelu():
        rng = named_rng(7, "gradcheck.gelu")
        x = T.parameter(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4))
        ps = T.ParamSet()
        ps.add("x", x)
        return lambda: _weighted_sum(T.gelu(x), w), ps

    def op_l2_loss():
        rng = named_rng(7, "gradcheck.l2")
        a = T.parameter(rng.normal(size=(3, 4)))
        b = T.parameter(rng.normal(size=(3, 4)))
        ps = T.ParamSet()
        ps.add("a", a)
        ps.add("b", b)
        return lambda: T.l2_loss(a, b), ps

    def op_masked_ce():
        rng = named_rng(7, "gradcheck.masked_ce")
        logits = T.parameter(rng.normal(size=(4, 6)))
        labels = np.array([0, 2, 3, 0])
        ps = T.ParamSet()
        ps.add("logits", logits)
        return lambda: T.masked_cross_entropy(logits, labels, (0, 2, 3)), ps

    def block_mhca():
        rng = named_rng(7, "gradcheck.mhca")
        block = MhcaBlock(8, 2, rng)
        q = T.parameter(rng.normal(size=(2, 8)))
        kv = T.parameter(rng.normal(size=(3, 8)))
        w = rng.normal(size=(2, 8))
        ps = block.parameters("mhca")
        ps.add("q", q)
        ps.add("kv", kv)
        return lambda: _weighted_sum(block(q, kv), w), ps

    def block_ffn():
        rng = named_rng(7, "gradcheck.ffn")
        block = FfnBlock(8, rng)
        x = T.parameter(rng.normal(size=(3, 8)))
        w = rng.normal(size=(3, 8))
        ps = block.parameters("ffn")
        ps.add("x", x)
        return lambda: _weighted_sum(block(x), w), ps

    def block_encoder():
        rng = named_rng(7, "gradcheck.encoder")
        enc = TemporalEncoder(8, 2, rng, n_layers=2, max_len=6)
        frames = T.parameter(rng.normal(size=(4, 8)))
        w = rng.normal(size=(1, 8))
        ps = enc.parameters("encoder")
        ps.add("frames", frames)
        return lambda: _weighted_sum(enc.encode(frames), w), ps

    def block_classifier():
        rng = named_rng(7, "gradcheck.classifier")
        head = Classifier(8)
        head.grow(4, rng)
        z = T.parameter(rng.normal(size=(3, 8)))
        labels = np.array([0, 2, 1])
        ps = head.parameters("head")
        ps.add("z", z)
        return lambda: T.masked_cross_entropy(head.logits(z), labels, (0, 1, 2, 3)), ps

    def block_mr():
        rng = named_rng(7, "gradcheck.mr")
        mr = MrModule(8, 2, rng)
        prompt = T.parameter(rng.normal(0.0, 0.02, size=(4, 8)))
        sparse = T.parameter(rng.normal(size=(2, 8)))
        w = rng.normal(size=(4, 8))
        ps = mr.parameters("mr")
        ps.add("prompt", prompt)
        ps.add("sparse", sparse)
        return lambda: _weighted_sum(mr.retrieve(prompt, sparse), w), ps

    def composite_loss():
        rng = named_rng(7, "gradcheck.composite")
        enc = TemporalEncoder(8, 2, rng, n_layers=1, max_len=4)
        head = Classifier(8)
        head.grow(3, rng)
        mr = MrModule(8, 2, rng)
        prompt = T.parameter(rng.normal(0.0, 0.02, size=(4, 8)))
        clips = [T.constant(rng.normal(size=(4, 8))) for _ in range(2)]
        sparses = [T.constant(c.data[[1, 3]]) for c in clips]
        labels = np.array([0, 1])
        ps = T.ParamSet()
        ps.extend(enc.parameters("encoder"))
        ps.extend(head.parameters("head"))
        ps.extend(mr.parameters("mr"))
        ps.add("prompt", prompt)

        def loss():
            zs = []
            sm_terms = []
            tm_terms = []
            for dense, sparse in zip(clips, sparses):
                z = enc.encode(dense)
                zs.append(z)
                retrieved = mr.retrieve(prompt, sparse)
                sm_terms.append(T.l2_loss(retrieved, dense))
                tm_terms.append(T.l2_loss(enc.encode(retrieved), z))
            ce = T.masked_cross_entropy(head.logits(T.concat_rows(zs)), labels, (0, 1, 2))
            sm = T.scale(T.add_n(sm_terms), 0.5)
            tm = T.scale(T.add_n(tm_terms), 0.5)
            return T.add(T.add(ce, sm), tm)

        return loss, ps

    add_check("matmul", op_matmul)
    add_check("softmax_rows", op_softmax)
    add_check("layer_norm", op_layer_norm)
    add_check("gelu", op_gelu)
    add_check("l2_loss", op_l2_loss)
    add_check("masked_cross_entropy", op_masked_ce)
    add_check("mhca_block", block_mhca)
    add_check("ffn_block", block_ffn)
    add_check("temporal_encoder", block_encoder)
    add_check("classifier", block_classifier)
    add_check("mr_module", block_mr)
    add_check("composite_loss", composite_loss)
    return checks


def cmd_gradcheck(args):
    failed = []
    for name, make in _gradcheck_suite():
        fn, params = make()
        report = T.grad_check(fn, params, tol=args.tol)
        worst = report.worst()
        status = "ok  " if report.ok else "FAIL"
        print(f"{status} {name:<22} params={len(params):<4} "
              f"max_rel_err={worst.max_rel_err:.3e} (worst: {worst.name})")
        if not report.ok:
            failed.append(name)
            for entry in report.entries:
                if not entry.ok:
                    print(f"     bad gradient: {entry.name} "
                          f"rel_err={entry.max_rel_err:.3e}")
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}")
        return 1
    print("gradient check passed for all blocks")
    return 0


def cmd_ablate(args):
    cfg = load_config(args.config)
    validate_config(cfg)
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    table = run_ablation(args.preset, cfg, n_seeds=args.seeds)
    print(table.format(), end="")
    return 0


def cmd_analyze(args):
    rows = analyze_run(args.run)
    for r in rows:
        verdict = "ok" if r.ok else "NOT-CLOSER"
        print(f"task {r.task_id}: clips={r.n_clips} d_sparse={r.d_sparse:.4f} "
              f"d_retrieved={r.d_retrieved:.4f} d_random={r.d_random:.4f} [{verdict}]")
    path = os.path.join(args.run, DISTANCES_NAME)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(distances_csv_text(rows))
    print(f"wrote {path}")
    all_ok = all(r.ok for r in rows)
    print("retrieved features closest for every task" if all_ok
          else "retrieved features NOT closest for every task")
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure: bad files, bad state
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
