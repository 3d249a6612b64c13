"""Command-line interface.

Subcommands: ingest (WAV dir + manifest -> segment archive), run (config ->
metrics + checkpoints), summarize (metrics -> CSV/Markdown report), sample
(generator checkpoint -> generated archive).

Exit codes: 0 success, 2 config error, 3 data error, 4 resume-integrity
error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .audio import ingest_directory
from .checkpoint import CheckpointError
from .data import split_segments, write_archive, write_split_sidecar
from .experiment import (ConfigError, DataError, ExperimentConfig,
                         generate_samples, run_experiment, summarize)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RESUME = 4


def _cmd_ingest(args) -> int:
    wav_dir = Path(args.wav_dir)
    if not wav_dir.is_dir():
        raise DataError(f"wav directory does not exist: {wav_dir}")
    if not Path(args.manifest).exists():
        raise DataError(f"manifest does not exist: {args.manifest}")
    report = ingest_directory(wav_dir, args.manifest)
    if report.skipped:
        print(f"warning: {len(report.skipped)} manifest entries had no wav file",
              file=sys.stderr)
    if not report.segments:
        raise DataError("no segments produced; check the manifest and wav files")
    try:
        split = split_segments(report.segments, seed=args.split_seed)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    write_archive(args.out, report.segments, seed=args.split_seed)
    write_split_sidecar(args.out, split)
    print(f"{len(report.segments)} segments from {report.recordings} recordings "
          f"-> {args.out}")
    print(f"split sizes: train={len(split.train)} val={len(split.val)} "
          f"test={len(split.test)}")
    return EXIT_OK


def _parse_override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"--set expects KEY=VALUE, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _cmd_run(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {args.config}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    for override in args.set or []:
        key, value = _parse_override(override)
        doc[key] = value
    config = ExperimentConfig.from_dict(doc)
    metrics_path = run_experiment(config)
    print(f"metrics written to {metrics_path}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    for path in args.metrics:
        if not Path(path).exists():
            raise DataError(f"metrics file does not exist: {path}")
    report = summarize(args.metrics, out_dir=args.out,
                       train_segments=args.train_segments)
    if report.missing:
        for strat, task in report.missing:
            print(f"warning: missing cell {strat} task {task}", file=sys.stderr)
    print(f"report written to {args.out}")
    return EXIT_OK


def _cmd_sample(args) -> int:
    if not Path(args.checkpoint).exists():
        raise DataError(f"checkpoint does not exist: {args.checkpoint}")
    out = generate_samples(args.checkpoint, args.n, args.out, seed=args.seed)
    print(f"{args.n} generated segments -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soundcl",
        description="Continual sound classification with rehearsal and "
                    "generative replay")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="WAV dir + CSV manifest -> segment archive")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--manifest", required=True,
                   help="CSV of filename,class-index[,class-name]")
    p.add_argument("--out", required=True)
    p.add_argument("--split-seed", type=int, default=1234)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("run", help="run the experiment grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (value parsed as JSON)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("summarize", help="aggregate metrics into a report")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train-segments", type=int, default=None)
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("sample", help="generate segments from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_sample)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"resume integrity error: {exc}", file=sys.stderr)
        return EXIT_RESUME


if __name__ == "__main__":
    sys.exit(main())
