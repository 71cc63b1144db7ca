"""Command line entry point: ``switchnet <subcommand> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import MNIST_FILES, dataset_to_idx, load_idx, synth_blobs
from .exceptions import SwitchnetError
from .gradlab import run_suite
from .harness import RunConfig, run_experiment
from .pruning import load_pruned, verify_document


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="switchnet", description="Switcher-network structure learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    t = sub.add_parser("train", help="run an experiment from a config file")
    t.add_argument("config", help="INI experiment config")
    t.add_argument("--seed", type=int, action="append", help="run only this seed (repeatable)")
    t.add_argument("--out", help="output directory")
    t.add_argument("--mode", choices=["alternating", "separate", "baseline"])
    t.add_argument("--epochs", type=int)

    g = sub.add_parser("gradcheck", help="verify the closed-form toy gradients")
    g.add_argument("--instances", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="write the JSON report here")

    r = sub.add_parser("prune-report", help="print the architecture stored in a pruned export")
    r.add_argument("path", help="export base path or its .json/.snnw file")

    m = sub.add_parser("make-data", help="write a synthetic blob dataset as IDX files")
    m.add_argument("--out", required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--classes", type=int, default=10)
    m.add_argument("--per-class", type=int, default=50)
    m.add_argument("--dims", type=int, default=20)
    m.add_argument("--spread", type=float, default=0.05)

    v = sub.add_parser("verify-data", help="sanity-check an IDX dataset directory")
    v.add_argument("directory")
    return p


def _train(args) -> int:
    if not Path(args.config).is_file():
        raise _UsageError(f"config file {args.config!r} not found")
    train = {}
    if args.mode:
        train["mode"] = args.mode
    if args.epochs is not None:
        train["epochs"] = args.epochs
    cfg = RunConfig.from_file(args.config, train=train, out=args.out,
                              seeds=tuple(args.seed) if args.seed else None)
    summary = run_experiment(cfg)
    print(f"runs={summary['runs']} acc={summary['test_acc_mean']:.4f}+-{summary['test_acc_std']:.4f} "
          f"surviving={summary['surviving_mean']} saved={summary['params_saved_pct_mean']:.2f}%")
    return 0


def _gradcheck(args) -> int:
    result = run_suite(args.instances, args.seed)
    report = result.as_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    print(json.dumps(report, indent=2))
    return 0 if result.ok else 1


def _prune_report(args) -> int:
    doc, model = load_pruned(args.path)
    arch = doc["architecture"]
    print(f"original:  {'-'.join(map(str, arch['original']))}")
    print(f"surviving: {'-'.join(map(str, arch['surviving']))}")
    print(f"params:    {arch['params_after']}/{arch['params_before']} ({arch['params_saved_pct']:.2f}% saved)")
    for k, st in enumerate(arch["factor_stats"]):
        print(f"layer {k}: pruned={st['pruned']} weakened={st['weakened']} strengthened={st['strengthened']}")
    if not verify_document(doc, model):
        print("document does not match the stored weights", file=sys.stderr)
        return 1
    return 0


def _make_data(args) -> int:
    data = synth_blobs(args.classes, args.per_class, args.dims, args.seed, args.spread)
    paths = dataset_to_idx(data, args.out)
    print(f"wrote {data.n_train} train / {data.n_test} test samples to {Path(args.out)}")
    for p in paths.values():
        print(f"  {p.name}")
    return 0


def _verify_data(args) -> int:
    d = Path(args.directory)
    for split in ("train", "test"):
        X, y = load_idx(d / MNIST_FILES[f"{split}_images"], d / MNIST_FILES[f"{split}_labels"])
        hist = np.bincount(y)
        print(f"{split}: {len(y)} images of {X.shape[1]}x{X.shape[2]}, "
              f"pixels in [{X.min():.3f}, {X.max():.3f}], labels {hist.tolist()}")
    return 0


class _UsageError(Exception):
    pass


COMMANDS = {
    "train": _train,
    "gradcheck": _gradcheck,
    "prune-report": _prune_report,
    "make-data": _make_data,
    "verify-data": _verify_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"switchnet: error: {exc}", file=sys.stderr)
        return 2
    except (SwitchnetError, OSError, ValueError) as exc:
        print(f"switchnet: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
