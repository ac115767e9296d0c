"""Command line entry point: ``echolab {generate,train,sweep,evaluate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import CsvFormatError, SyntheticSpec
from .harness import (
    ExperimentConfig,
    UsageError,
    cmd_evaluate,
    cmd_generate,
    cmd_sweep,
    cmd_train,
    format_summary,
    summarize,
)


def _parse_value(s: str):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def _experiment(args) -> ExperimentConfig:
    exp = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if getattr(args, "method", None):
        exp = replace(exp, methods=[m for item in args.method for m in item.split(",") if m])
    if args.seed is not None:
        exp = replace(exp, seed=args.seed)
    if args.out:
        exp = replace(exp, output_dir=args.out)
    if getattr(args, "repeats", None) is not None:
        exp = replace(exp, repeats=args.repeats)
    if getattr(args, "epochs", None) is not None:
        exp = replace(exp, train={**exp.train, "epochs": args.epochs})
    if getattr(args, "data", None):
        d = Path(args.data)
        exp = replace(exp, dataset={"train_csv": str(d / "train.csv"),
                                    "test_csv": str(d / "test.csv")})
    return exp


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="echolab", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, method=True):
        sp.add_argument("--config", help="experiment JSON file")
        sp.add_argument("--seed", type=int, help="base seed")
        sp.add_argument("--out", help="output directory")
        if method:
            sp.add_argument("--method", action="append",
                            help="method name(s); repeat or comma-separate")
            sp.add_argument("--repeats", type=int)
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--data", help="directory with train.csv and test.csv")

    common(sub.add_parser("generate", help="write a synthetic dataset"), method=False)
    common(sub.add_parser("train", help="train methods and write metrics"))
    sw = sub.add_parser("sweep", help="run a parameter grid")
    common(sw)
    sw.add_argument("--param", help="alpha, fraction, or any training field")
    sw.add_argument("--values", help="comma-separated grid values")
    ev = sub.add_parser("evaluate", help="group metrics of a saved model")
    ev.add_argument("--model", required=True, help="*_model.json written by train")
    ev.add_argument("--data", required=True, help="test CSV")
    ev.add_argument("--out", help="write metrics JSON here instead of stdout")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            exp = _experiment(args)
            spec = SyntheticSpec.from_dict(exp.dataset) if exp.dataset else SyntheticSpec()
            if args.seed is not None:
                spec = replace(spec, seed=args.seed)
            manifest = cmd_generate(spec, args.out or exp.output_dir)
            print(f"wrote {manifest['rows']['train']} train / {manifest['rows']['test']} test rows")
        elif args.command == "train":
            rows = cmd_train(_experiment(args))
            print(format_summary(summarize(rows)))
        elif args.command == "sweep":
            exp = _experiment(args)
            if args.param or args.values:
                sw = dict(exp.sweep or {})
                if args.param:
                    sw["param"] = args.param
                if args.values is not None:
                    sw["values"] = [_parse_value(v) for v in args.values.split(",") if v]
                exp = replace(exp, sweep=sw)
            rows = cmd_sweep(exp)
            for value in dict.fromkeys(r["value"] for r in rows):
                print(f"{rows[0]['param']} = {value}")
                print(format_summary(summarize([r for r in rows if r["value"] == value])))
        elif args.command == "evaluate":
            res = cmd_evaluate(args.model, args.data)
            text = json.dumps(res, indent=2, sort_keys=True)
            if args.out:
                Path(args.out).write_text(text + "\n")
            else:
                print(text)
    except (UsageError, CsvFormatError, ValueError, OSError) as exc:
        print(f"echolab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
