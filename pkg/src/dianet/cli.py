"""Command-line entry point: train, eval, params, gradcheck, analyze, sweep.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical explosion,
4 I/O error. Every file a command writes goes under its output directory.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .analysis import capture_traces, emit_heatmap_csv, integration_matrix
from .backbone import count_model_params
from .checkpoint import load_checkpoint, save_trace
from .config import ExperimentConfig, load_config
from .data import synth_task, load_cifar, cifar_split_files
from .errors import ConfigError
from .gradcheck import SCOPES, run_suite
from .train import TrainConfig, evaluate, load_datasets, train

EXIT_OK, EXIT_CONFIG, EXIT_EXPLOSION, EXIT_IO = 0, 2, 3, 4


class CheckpointError(Exception):
    """Checkpoint missing, unreadable or malformed."""


def _err(msg: str) -> None:
    print(f"dianet: {msg}", file=sys.stderr)


def _load_cfg(args) -> ExperimentConfig:
    overrides = {"seed": args.seed} if getattr(args, "seed", None) is not None else None
    return load_config(args.config, overrides)


def _load_model(path):
    try:
        return load_checkpoint(path)
    except (OSError, ConfigError, KeyError, ValueError) as e:
        raise CheckpointError(f"cannot load checkpoint {path}: {e}") from None


def _test_split(cfg: TrainConfig, stats):
    """Held-out split normalized with the training statistics stored in a checkpoint."""
    if cfg.dataset == "synth":
        return synth_task(cfg.seed, cfg.test_subset or 1000, cfg.num_classes, cfg.difficulty,
                          stats=stats, sample_seed=1)
    variant = "c10" if cfg.dataset == "cifar10" else "c100"
    _, test_files = cifar_split_files(cfg.data_dir, variant)
    return load_cifar(test_files, variant, stats=stats, limit=cfg.test_subset)


def _checkpoint_stats(meta):
    if "norm_mean" not in meta:
        return None
    return np.asarray(meta["norm_mean"]), np.asarray(meta["norm_std"])


def _train_cfg_from(meta, args) -> TrainConfig:
    if args.config:
        return _load_cfg(args).train
    if "train" not in meta:
        raise ConfigError("checkpoint carries no training config; pass --config")
    return TrainConfig(**meta["train"])


def run_train(cfg: ExperimentConfig, out_dir: str, fault_step: int | None = None) -> int:
    result = train(cfg.network, cfg.train, out_dir, fault_step=fault_step)
    rec = result.record
    if result.exploded:
        ev = rec.explosions[0]
        loc = "" if ev.stage is None else f" stage {ev.stage} block {ev.block}"
        print(f"explosion at step {ev.step}: {ev.where}{loc}")
        return EXIT_EXPLOSION
    acc = rec.series("accuracy", "test")
    print(f"steps {len(rec.series('loss'))} final_loss {rec.series('loss')[-1]:.4f} "
          f"test_top1 {acc[-1]:.4f}" if acc else "done")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    return run_train(cfg, args.out or cfg.out_dir, args.inject_fault)


def cmd_eval(args) -> int:
    net, meta = _load_model(args.checkpoint)
    tcfg = _train_cfg_from(meta, args)
    data = _test_split(tcfg, _checkpoint_stats(meta))
    print(f"top1 {evaluate(net, data):.4f}")
    return EXIT_OK


def _expected_weights(kind: str, n: int, r: int, cells: int, blocks: int) -> int | None:
    if kind == "dia_lstm" and n % r == 0:
        return 10 * n * n // r * cells
    if kind == "standard_lstm":
        return 8 * n * n * cells
    if kind == "se" and n % r == 0:
        return blocks * 2 * n * n // r
    if kind == "none":
        return 0
    return None


def cmd_params(args) -> int:
    cfg = _load_cfg(args).network
    report = count_model_params(cfg)
    print(f"{'stage':>5} {'width':>6} {'blocks':>6} {'attention':>13} {'backbone':>10} "
          f"{'increment':>10} {'weights':>9} {'expected':>9}  check")
    ok = True
    for i, (spec, row) in enumerate(zip(cfg.stages, report.stages)):
        kind = cfg.attention_in_stage(i)
        n = spec.channels
        exp = _expected_weights(kind, n, cfg.reduction, cfg.cells, spec.blocks)
        flag = "-" if exp is None else ("MATCH" if exp == row["attention_weights"] else "MISMATCH")
        ok &= flag != "MISMATCH"
        print(f"{i:>5} {n:>6} {spec.blocks:>6} {kind:>13} {row['backbone']:>10} {row['attention']:>10} "
              f"{row['attention_weights']:>9} {'-' if exp is None else exp:>9}  {flag}")
    print(f"stem {report.stem}  classifier {report.classifier}")
    print(f"attention increment {report.attention_total}")
    print(f"total {report.total}")
    return EXIT_OK if ok else 1


def cmd_gradcheck(args) -> int:
    failed = False
    for scope in (SCOPES if args.scope == "all" else [args.scope]):
        for res in run_suite(scope, seed=args.seed or 0, corrupt=args.corrupt_gradients):
            status = "ok" if res.passed else "FAIL"
            failed |= not res.passed
            print(f"{scope:>8} {res.name:<24} {res.error:.3e} < {res.tolerance:.0e}  {status}")
    return 1 if failed else EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load_cfg(args)
    net, meta = _load_model(args.checkpoint)
    n_stages = len(net.stages)
    if args.stage is not None:
        if not 0 <= args.stage < n_stages:
            raise ConfigError(f"stage {args.stage} out of range (model has {n_stages} stages)")
        if net.stages[args.stage].unit is None:
            raise ConfigError(f"stage {args.stage} has no recurrent attention unit to analyze")
        stages = [args.stage]
    else:
        stages = [i for i, st in enumerate(net.stages) if st.unit is not None]
        if not stages:
            raise ConfigError("model has no stage with a recurrent attention unit")
    data = _test_split(cfg.train, _checkpoint_stats(meta))
    images = data.images[:cfg.analysis_samples]
    out = args.out or cfg.out_dir
    os.makedirs(out, exist_ok=True)
    for s in stages:
        trace = capture_traces(net, images, s)
        save_trace(os.path.join(out, f"trace_stage{s}.dia"), trace)
        matrix = integration_matrix(trace, cfg.forest)
        path = os.path.join(out, f"heatmap_stage{s}.csv")
        emit_heatmap_csv(matrix, path)
        note = f" (degenerate rows {matrix.degenerate_rows})" if matrix.degenerate_rows else ""
        print(f"stage {s}: {trace.layers} layers -> {path}{note}")
    return EXIT_OK


def _sweep_names(paths) -> list[str]:
    names, seen = [], {}
    for p in paths:
        base = os.path.splitext(os.path.basename(p))[0]
        k = seen.get(base, 0)
        seen[base] = k + 1
        names.append(base if k == 0 else f"{base}_{k}")
    return names


def cmd_sweep(args) -> int:
    # every config is validated before anything runs
    cfgs = [load_config(p, {"seed": args.seed} if args.seed is not None else None) for p in args.configs]
    out = args.out or cfgs[0].out_dir
    names = _sweep_names(args.configs)
    jobs = max(1, args.jobs)

    def one(i):
        return run_train(cfgs[i], os.path.join(out, names[i]))

    with ThreadPoolExecutor(jobs) as ex:
        codes = list(ex.map(one, range(len(cfgs))))
    for name, code in zip(names, codes):
        print(f"{name}: {'exploded' if code == EXIT_EXPLOSION else 'ok'}")
    return max(codes)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dianet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True, required=True):
        if config:
            sp.add_argument("--config", required=required, help="key = value experiment config")
        sp.add_argument("--seed", type=int, help="override the config seed")

    sp = sub.add_parser("train", help="train a model, write run.csv and model.dia")
    common(sp)
    sp.add_argument("--out", help="output directory (default: out_dir from the config)")
    sp.add_argument("--inject-fault", type=int, default=None, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="top-1 accuracy of a checkpoint on the held-out split")
    common(sp, required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("params", help="per-stage parameter counts against closed forms")
    common(sp)
    sp.set_defaults(func=cmd_params)

    sp = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    sp.add_argument("scope", nargs="?", default="all", choices=[*SCOPES, "all"])
    sp.add_argument("--seed", type=int)
    sp.add_argument("--corrupt-gradients", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("analyze", help="feature-integration heatmaps per stage")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--stage", type=int, help="zero-based stage (default: every stage with a unit)")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("sweep", help="train several configs on threads, one subdirectory each")
    sp.add_argument("configs", nargs="+")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="parent output directory")
    sp.add_argument("--jobs", type=int, default=2)
    sp.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as e:
        _err(str(e))
        return EXIT_CONFIG
    except (CheckpointError, OSError) as e:
        _err(str(e))
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
