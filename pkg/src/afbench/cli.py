"""Command-line entry point: ``afbench <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 invalid input or data, 3 numerical
failure. Failures print one JSON object on a single line to stderr. Every
run prints its resolved configuration as JSON to stderr before doing any
work. ``AFB_SEED`` in the environment overrides ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from collections import OrderedDict
from dataclasses import asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .errors import AfbenchError, ArgumentError, IoError, ValidationError
from .forces import FlowField, drag_lift, write_forces_csv
from .graph import build_radius_graph
from .mesh import PhysicsConfig, list_samples, read_sample, write_sample
from .models import KINDS as MODEL_KINDS
from .models import ModelConfig, graph_input, load_checkpoint, param_count, predict, save_checkpoint
from .pipeline import (
    TrainConfig,
    evaluate_model,
    model_gradient_errors,
    score_report,
    train,
    write_history,
    write_per_sample_errors,
    write_report,
)
from .preprocess import NormStats, denormalize_targets, fit_norm_stats, normalize_inputs
from .synthetic import KINDS as CASE_KINDS
from .synthetic import corpus_specs, generate

GRADCHECK_TOL = 1e-4
SEED_ENV = "AFB_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for numeric kernels (default: all cores)")
    common.add_argument("--deterministic", action="store_true",
                        help="single thread and no wall-clock values in outputs")
    return common


def _physics_flags(p):
    p.add_argument("--nu", type=float, default=1e-5, help="kinematic viscosity (m^2/s)")
    p.add_argument("--rho", type=float, default=1.0, help="density used for pressure forces")


def build_parser() -> argparse.ArgumentParser:
    defaults = TrainConfig()
    parser = _Parser(prog="afbench", description="Airfoil RANS graph-learning benchmark tools.")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    common = [_common()]

    p = sub.add_parser("gen-synthetic", parents=common, help="write an analytic-flow corpus")
    p.add_argument("--case", choices=CASE_KINDS, required=True)
    p.add_argument("--n-samples", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-surface", type=int, help="surface segments per sample")
    p.add_argument("--n-volume", type=int, help="volume nodes per sample")
    p.add_argument("--layout", choices=("random", "polar"), help="cylinder volume layout")
    _physics_flags(p)

    p = sub.add_parser("build-graph", parents=common, help="radius graph over one sample's nodes")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--radius", type=float, default=defaults.radius)
    p.add_argument("--max-neighbors", type=int, default=defaults.train_max_neighbors)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit-stats", parents=common, help="fit normalization statistics")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--out", default="stats.json")

    p = sub.add_parser("train", parents=common, help="train one model")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--subsample-n", type=int, default=defaults.subsample_n)
    p.add_argument("--radius", type=float, default=defaults.radius)
    p.add_argument("--max-neighbors", type=int, default=defaults.train_max_neighbors)
    p.add_argument("--eval-max-neighbors", type=int, default=defaults.eval_max_neighbors)
    p.add_argument("--max-lr", type=float, default=defaults.max_lr)
    p.add_argument("--lambda", dest="lam", type=float, default=defaults.lambda_surface)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="optional JSON-lines file with one record per epoch")
    _physics_flags(p)

    p = sub.add_parser("eval", parents=common, help="score checkpoints on a test set")
    p.add_argument("--test-dir", required=True)
    p.add_argument("--ckpt", action="append", required=True,
                   help="checkpoint; repeat for several trainings or models")
    p.add_argument("--stats", required=True)
    p.add_argument("--report", default="out.csv",
                   help="CSV report; a .json twin is written next to it")
    p.add_argument("--per-sample", help="optional per-sample relative force error CSV")
    p.add_argument("--max-neighbors", type=int, default=defaults.eval_max_neighbors)
    p.add_argument("--lambda", dest="lam", type=float, default=defaults.lambda_surface)
    p.add_argument("--seed", type=int, default=0)
    _physics_flags(p)

    p = sub.add_parser("forces", parents=common, help="surface stresses and drag/lift of one sample")
    p.add_argument("--sample", required=True)
    p.add_argument("--field", choices=("true", "ckpt"), default="true")
    p.add_argument("--ckpt", help="checkpoint, required with --field ckpt")
    p.add_argument("--stats", help="normalization statistics, required with --field ckpt")
    p.add_argument("--max-neighbors", type=int, default=defaults.eval_max_neighbors)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="forces.csv")
    _physics_flags(p)

    p = sub.add_parser("gradcheck", parents=common, help="finite-difference check of a model")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nodes", type=int, default=30)
    p.add_argument("--max-entries", type=int, default=6,
                   help="entries probed per parameter array (0 probes all)")
    return parser


def _apply_env(args) -> None:
    override = os.environ.get(SEED_ENV)
    if override is not None and hasattr(args, "seed"):
        try:
            args.seed = int(override)
        except ValueError as exc:
            raise ArgumentError(f"{SEED_ENV}={override!r} is not an integer") from exc


def _physics(args) -> PhysicsConfig:
    return PhysicsConfig(nu=args.nu, rho=args.rho)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, subsample_n=args.subsample_n,
        radius=args.radius, train_max_neighbors=args.max_neighbors,
        eval_max_neighbors=args.eval_max_neighbors, max_lr=args.max_lr,
        lambda_surface=args.lam, seed=args.seed,
    )


def resolve_config(argv) -> dict:
    """Parse ``argv`` and return the configuration the command would run with."""
    args = build_parser().parse_args(argv)
    _apply_env(args)
    return _resolved(args)


def _resolved(args) -> dict:
    out = OrderedDict(command=args.command)
    out.update({k: v for k, v in vars(args).items() if k not in ("command", "nu", "rho")})
    out["threads"] = 1 if args.deterministic else args.threads
    if hasattr(args, "nu"):
        out["physics"] = asdict(_physics(args))
    if args.command == "train":
        out["train_config"] = _train_config(args).to_json()
    return dict(out)


def _load_dir(directory):
    paths = list_samples(directory)
    if not paths:
        raise ValidationError(f"no .afm samples in {directory}")
    return [read_sample(p) for p in paths]


def _train_meta_path(ckpt) -> Path:
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.name + ".train.json")


def _write_json(path, data) -> None:
    try:
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_synthetic(args) -> int:
    if args.n_samples < 0:
        raise ArgumentError("--n-samples must be >= 0")
    overrides = {k: v for k, v in (("n_surface", args.n_surface), ("n_volume", args.n_volume),
                                   ("layout", args.layout)) if v is not None}
    physics = _physics(args)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc}") from exc
    for k, spec in enumerate(corpus_specs(args.case, args.n_samples, args.seed, **overrides)):
        sample = generate(spec, physics)
        write_sample(sample, out / f"{args.case}_{k:04d}.afm", physics,
                     provenance=json.dumps(asdict(spec), sort_keys=True))
    print(json.dumps({"written": args.n_samples, "out_dir": str(out)}))
    return 0


def cmd_build_graph(args) -> int:
    sample = read_sample(args.input)
    graph = build_radius_graph(sample.node_pos, args.radius, args.max_neighbors, args.seed)
    _write_json(args.out, graph.to_json())
    print(json.dumps({"nodes": graph.n_nodes, "edges": len(graph.edges)}))
    return 0


def cmd_fit_stats(args) -> int:
    stats = fit_norm_stats(_load_dir(args.train_dir))
    stats.save(args.out)
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    stats = NormStats.load(args.stats)
    dataset = _load_dir(args.train_dir)
    model_config = ModelConfig(args.model, radius=cfg.radius)
    start = time.perf_counter()
    params, history = train(dataset, model_config, cfg, stats)
    elapsed = time.perf_counter() - start
    save_checkpoint(params, args.out)
    _write_json(_train_meta_path(args.out), {
        "train_config": cfg.to_json(),
        "physics": asdict(_physics(args)),
        "train_time": None if args.deterministic else elapsed,
        "params": param_count(params),
    })
    if args.history:
        write_history(history, args.history)
    last = history[-1] if history else None
    print(json.dumps({"epochs": len(history), "final_loss": last.loss if last else None}))
    return 0


def cmd_eval(args) -> int:
    stats = NormStats.load(args.stats)
    test_set = _load_dir(args.test_dir)
    physics = _physics(args)
    cfg = TrainConfig(eval_max_neighbors=args.max_neighbors, lambda_surface=args.lam, seed=args.seed)
    workers = 1 if args.deterministic else max(1, args.threads)
    groups: dict[str, list] = OrderedDict()
    for path in args.ckpt:
        params = load_checkpoint(path)
        result = evaluate_model(params, test_set, stats, cfg, physics, workers=workers)
        meta_path = _train_meta_path(path)
        train_time = json.loads(meta_path.read_text()).get("train_time") if meta_path.exists() else None
        groups.setdefault(params.config.kind, []).append((param_count(params), result, train_time))
    rows, entries = [], []
    for kind, runs in groups.items():
        rows.append(score_report(kind, runs[0][0], [r for _, r, _ in runs],
                                 [t for _, _, t in runs], timings=not args.deterministic))
        entries.extend((kind, k, r) for k, (_, r, _) in enumerate(runs))
    write_report(rows, args.report)
    if args.per_sample:
        write_per_sample_errors(entries, args.per_sample)
    print(json.dumps({"rows": len(rows), "report": str(args.report)}))
    return 0


def cmd_forces(args) -> int:
    sample = read_sample(args.sample)
    physics = _physics(args)
    if args.field == "true":
        field = sample.targets
    else:
        if not (args.ckpt and args.stats):
            raise ArgumentError("--field ckpt needs --ckpt and --stats")
        params = load_checkpoint(args.ckpt)
        stats = NormStats.load(args.stats)
        graph = graph_input(params.config, sample.node_pos, args.max_neighbors, args.seed)
        out = predict(params, normalize_inputs(sample.inputs(), stats), graph)
        field = denormalize_targets(out, sample.surface_mask, stats)
    forces = drag_lift(sample, FlowField(field), physics)
    write_forces_csv(sample, forces, args.out)
    print(json.dumps({
        "drag": forces.drag, "lift": forces.lift,
        "integral_tau": forces.integral_tau.tolist(), "integral_wp": forces.integral_wp.tolist(),
    }))
    return 0


def cmd_gradcheck(args) -> int:
    if args.nodes < 4 or args.nodes > 50:
        raise ArgumentError("--nodes must be in [4, 50]")
    errors = model_gradient_errors(args.model, args.seed, args.nodes, args.max_entries or None)
    worst = max(errors, key=errors.get)
    ok = errors[worst] < GRADCHECK_TOL
    print(json.dumps({"model": args.model, "max_error": errors[worst], "worst": worst,
                      "tolerance": GRADCHECK_TOL, "passed": ok}))
    return 0 if ok else 3


COMMANDS = {
    "gen-synthetic": cmd_gen_synthetic,
    "build-graph": cmd_build_graph,
    "fit-stats": cmd_fit_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "forces": cmd_forces,
    "gradcheck": cmd_gradcheck,
}


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    return code


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        return _fail("UsageError", str(exc), 1)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        _apply_env(args)
        print(json.dumps(_resolved(args), sort_keys=True), file=sys.stderr)
        threads = 1 if args.deterministic else max(1, args.threads)
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](args)
    except AfbenchError as exc:
        return _fail(type(exc).__name__, str(exc), exc.exit_code)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(type(exc).__name__, str(exc), 3)
    except OSError as exc:
        return _fail("IoError", str(exc), 2)


def main() -> None:
    sys.exit(run())
