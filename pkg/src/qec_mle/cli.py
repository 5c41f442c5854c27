"""Command-line front end: ``qec-mle <command> [flags]``.

Every command prints one JSON object on stdout and exits with a nonzero
status on error. Outputs depend only on inputs and ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .decode import decode, evaluate_ler
from .dem import SHOT_FORMATS, encode_bits, load_dem, read_shots, sample_shots, save_dem, write_shots
from .generate import CODES, generate_dem
from .mle import BACKENDS, PriorParams, TrainConfig, make_backend, mean_relative_error, train
from .verify import SUITES, run_suite


class CliError(Exception):
    """Usage or input error reported as JSON."""


def _emit(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _threads(args) -> int:
    return max(1, args.threads or os.cpu_count() or 1)


def _read(args, model):
    if not args.shots:
        raise CliError("--shots is required")
    return read_shots(args.shots, model.n_detectors, args.format, has_logical=not args.no_labels)


def cmd_gen(args) -> dict:
    model = generate_dem(args.code, args.distance, args.rounds, args.error_rate)
    out = args.out or "-"
    if out == "-":
        raise CliError("--out is required")
    save_dem(model, out)
    return {
        "command": "gen",
        "out": out,
        "n_detectors": model.n_detectors,
        "n_mechanisms": model.n_mechanisms,
        "graphlike": model.is_graphlike,
        "max_detectors_per_mechanism": max(len(m.detectors) for m in model.mechanisms),
    }


def cmd_sample(args) -> dict:
    model = load_dem(args.dem)
    if args.shots_count is None and not args.shots:
        raise CliError("--shots (number of shots) is required")
    n = int(args.shots_count if args.shots_count is not None else args.shots)
    batch = sample_shots(model, n, args.seed)
    if not args.out:
        raise CliError("--out is required")
    write_shots(batch, args.out, args.format, append_logical=not args.no_labels)
    return {
        "command": "sample",
        "out": args.out,
        "shots": n,
        "format": args.format,
        "mean_detection_rate": float(batch.syndromes.mean()) if n else 0.0,
        "logical_flip_rate": float(batch.logicals.mean()) if n else 0.0,
    }


def _train_config(args, n: int) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    over = {}
    for key in ("epochs", "batch_size", "learning_rate", "optimizer", "window", "tolerance"):
        val = getattr(args, key)
        if val is not None:
            over[key] = val
    over["seed"] = args.seed
    cfg = replace(cfg, **over)
    if cfg.batch_size > n:
        cfg = replace(cfg, batch_size=n)
    return cfg


def cmd_estimate(args) -> dict:
    model = load_dem(args.dem)
    batch = _read(args, model)
    if not args.out:
        raise CliError("--out is required")
    cfg = _train_config(args, len(batch))
    ref = None
    if args.reference:
        ref_model = load_dem(args.reference)
        if ref_model.n_mechanisms != model.n_mechanisms:
            raise CliError("reference model has a different number of mechanisms")
        ref = ref_model.priors
    init = PriorParams.from_theta(model.priors, args.backend)
    params, trace = train(
        model,
        batch,
        init,
        cfg,
        theta_ref=ref,
        likelihood=make_backend(model, args.backend),
        checkpoint=args.checkpoint,
        resume=args.resume,
        stop_after=args.stop_after,
    )
    # Logits that never moved map back to the exact input priors.
    theta = np.where(params.phi == init.phi, model.priors, params.theta)
    save_dem(model.with_priors(theta), args.out)
    if args.trace:
        Path(args.trace).write_text(trace.to_csv(timings=args.timings))
    doc = {
        "command": "estimate",
        "out": args.out,
        "backend": args.backend,
        "epochs": trace.epochs,
        "converged": trace.converged,
        "initial_nll": trace.initial_nll,
        "final_nll": trace.nll[-1] if trace.nll else trace.initial_nll,
    }
    if ref is not None:
        doc["initial_rel_err"] = trace.initial_rel_err
        doc["final_rel_err"] = mean_relative_error(theta, ref)
    return doc


def cmd_decode(args) -> dict:
    model = load_dem(args.dem)
    batch = _read(args, model)
    res = decode(model, model.priors, batch, args.backend)
    if args.out:
        Path(args.out).write_bytes(encode_bits(res.predicted_logical[:, None], args.format))
    return {
        "command": "decode",
        "out": args.out,
        "backend": args.backend,
        "shots": int(res.predicted_logical.size),
        "predicted_flips": int(res.predicted_logical.sum()),
        "ties": res.n_ties,
    }


def cmd_eval(args) -> dict:
    model = load_dem(args.dem)
    if args.no_labels:
        raise CliError("eval needs logical labels in the shot file")
    batch = _read(args, model)
    rep = evaluate_ler(model, model.priors, batch, args.backend)
    doc = {"command": "eval", "backend": args.backend, **json.loads(rep.to_json())}
    if args.out:
        Path(args.out).write_text(rep.to_json() + "\n")
    return doc


def cmd_pathfind(args) -> dict:
    from .tn import SAConfig, build_likelihood_network, optimize_path, path_report

    model = load_dem(args.dem)
    net = build_likelihood_network(model)
    cfg = SAConfig(
        seed=args.seed,
        proposals_per_temperature=args.proposals,
        max_temperatures=args.temperatures,
        n_chains=args.chains,
        threads=_threads(args),
        batch_size=args.batch,
    )
    tree = optimize_path(net, cfg, cache_dir=args.cache)
    rep = path_report(net, tree, cfg)
    if args.out:
        Path(args.out).write_text(tree.dumps() + "\n")
    return {"command": "pathfind", "out": args.out, "n_leaves": net.n_leaves, **rep.to_json()}


def cmd_verify(args) -> dict:
    names = SUITES if args.suite == "all" else (args.suite,)
    results = [run_suite(name, args.seed, args.cases) for name in names]
    passed = sum(r.passed for r in results)
    failed = sum(r.failed for r in results)
    doc = {"command": "verify", "passed": passed, "failed": failed, "suites": [r.to_json() for r in results]}
    if failed:
        _emit(doc)
        raise SystemExit(1)
    return doc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--dem", help="detector error model file")
    common.add_argument("--shots", help="shot file")
    common.add_argument("--format", choices=SHOT_FORMATS, default="01", help="shot file format")
    common.add_argument("--no-labels", action="store_true", help="shot files carry no logical column")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=None, help="worker count (default: all cores)")
    common.add_argument("--backend", choices=BACKENDS, default="tn")
    common.add_argument("--config", help="training configuration file (JSON or key = value)")
    common.add_argument("--out", help="output file")

    p = argparse.ArgumentParser(prog="qec-mle", description="Prior estimation and exact decoding for detector error models.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a memory-experiment model")
    g.add_argument("--code", choices=CODES, required=True)
    g.add_argument("--distance", "-d", type=int, required=True)
    g.add_argument("--rounds", "-r", type=int, required=True)
    g.add_argument("--error-rate", type=float, default=0.001)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sample", parents=[common], help="sample shots from a model")
    s.add_argument("--count", dest="shots_count", type=int, help="number of shots (same as --shots here)")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("estimate", parents=[common], help="train priors on shots")
    e.add_argument("--epochs", type=int)
    e.add_argument("--batch-size", type=int)
    e.add_argument("--learning-rate", "--lr", type=float)
    e.add_argument("--optimizer", choices=("adam", "sgd"))
    e.add_argument("--window", type=int)
    e.add_argument("--tolerance", type=float)
    e.add_argument("--reference", help="model with reference priors for the error trace")
    e.add_argument("--trace", help="CSV trace output")
    e.add_argument("--timings", action="store_true", help="fill the trace's seconds column")
    e.add_argument("--checkpoint", help="checkpoint file updated every epoch")
    e.add_argument("--resume", action="store_true", help="continue from --checkpoint")
    e.add_argument("--stop-after", type=int, help="stop after this many epochs in this run")
    e.set_defaults(func=cmd_estimate)

    d = sub.add_parser("decode", parents=[common], help="maximum-likelihood decode shots")
    d.set_defaults(func=cmd_decode)

    v = sub.add_parser("eval", parents=[common], help="logical error rate on labelled shots")
    v.set_defaults(func=cmd_eval)

    f = sub.add_parser("pathfind", parents=[common], help="search a contraction tree")
    f.add_argument("--proposals", type=int, default=10_000, help="proposals per temperature")
    f.add_argument("--temperatures", type=int, default=None, help="cap on temperature steps")
    f.add_argument("--chains", type=int, default=1)
    f.add_argument("--batch", type=int, default=1, help="batch size assumed by the cost model")
    f.add_argument("--cache", help="tree cache directory")
    f.set_defaults(func=cmd_pathfind)

    c = sub.add_parser("verify", parents=[common], help="cross-check backends against brute force")
    c.add_argument("--suite", choices=SUITES + ("all",), default="all")
    c.add_argument("--cases", type=int, default=10)
    c.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("sample", "estimate", "decode", "eval", "pathfind") and not args.dem:
        parser.error("--dem is required")
    try:
        doc = args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # noqa: BLE001
        _emit({"command": args.command, "error": f"{type(exc).__name__}: {exc}"})
        return 1
    _emit(doc)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
