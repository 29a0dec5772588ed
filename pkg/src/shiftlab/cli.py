"""Command-line entry point: ``shiftlab {synth,split,train,eval,exp}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .balance import WeightCollapseError
from .data import (DatasetFormatError, InfeasibleSplitError, SplitSpec, SynthParams, generate_synthetic,
                   load_dataset, load_split, make_split, num_outputs, save_dataset, save_split,
                   validate_split)
from .experiment import ExperimentPlan, network_config, run_experiment
from .net import CheckpointError, ShapeError, load_network, save_network
from .train import BatchError, TrainConfig, evaluate, train_cnbb, train_erm

EXIT_OK, EXIT_INVALID, EXIT_PARTIAL = 0, 1, 2


def _config(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8")) if path else {}


def _emit(obj, out) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_synth(args) -> int:
    cfg = _config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    ds = generate_synthetic(SynthParams(**cfg))
    save_dataset(ds, args.out)
    return EXIT_OK


def cmd_split(args) -> int:
    ds = load_dataset(args.dataset)
    cfg = _config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = SplitSpec.from_dict(cfg)
    split = make_split(ds, spec)
    problems = validate_split(ds, split, spec)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_INVALID
    save_split(split, spec, args.out)
    return EXIT_OK


def _train_config(cfg: dict, seed) -> TrainConfig:
    tc = TrainConfig.from_dict(cfg.get("train", {}))
    return replace(tc, seed=seed) if seed is not None else tc


def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    split, _ = load_split(args.split)
    cfg = _config(args.config)
    tc = _train_config(cfg, args.seed)
    netcfg = network_config(cfg.get("net", {}), ds, num_outputs(ds, split), tc.seed)
    fn = train_cnbb if args.method == "cnbb" else train_erm
    net, report = fn(ds, split, netcfg, tc)
    save_network(net, args.out)
    _emit(report.to_dict(), args.report)
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_network(args.checkpoint)
    ds = load_dataset(args.dataset)
    split, _ = load_split(args.split)
    ev = evaluate(net, ds, split, extractor_id=str(args.checkpoint))
    ev["ni"] = ev["ni"].to_dict()
    _emit(ev, args.out)
    return EXIT_OK


def cmd_exp(args) -> int:
    plan = ExperimentPlan.load(args.plan)
    if args.seed is not None:
        plan = replace(plan, seeds=(args.seed,))
    summary = run_experiment(plan, args.out, jobs=args.jobs)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_PARTIAL if summary["failed"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shiftlab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic context dataset")
    s.add_argument("--config", help="JSON file with synthesis parameters")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("split", help="build a biased train/test split")
    s.add_argument("dataset")
    s.add_argument("--config", required=True, help="JSON file with the split request")
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train one model on a split")
    s.add_argument("dataset")
    s.add_argument("split")
    s.add_argument("--method", choices=("erm", "cnbb"), default="cnbb")
    s.add_argument("--config", help="JSON file with 'net' and 'train' sections")
    s.add_argument("--report", help="write the run report here instead of stdout")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    s.add_argument("checkpoint")
    s.add_argument("dataset")
    s.add_argument("split")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("exp", help="run a sweep plan to CSV")
    s.add_argument("plan")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_exp)

    for name, sp in sub.choices.items():
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=name not in ("eval",))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, KeyError, TypeError, OSError, DatasetFormatError, InfeasibleSplitError,
            CheckpointError, ShapeError, WeightCollapseError, BatchError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
