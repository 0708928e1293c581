"""Command-line entry point: ``avsepchain {gen-data,train,eval,ablate}``.

Exit codes: 0 success, 2 invalid config, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from .config import ExperimentConfig, load_config
from .data import Manifest, build_corpus
from .errors import (
    ConfigError,
    DegenerateInputError,
    FormatError,
    IncompatibleCheckpointError,
    InvalidArgumentError,
    NumericError,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _config(path) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig.toy()


def cmd_gen_data(args) -> int:
    manifest = build_corpus(
        args.out, n_speakers=args.speakers, n_train=args.train, n_valid=args.valid,
        n_test=args.test, seed=args.seed, duration_s=args.duration, noise_db=args.noise_db,
    )
    print(f"wrote {len(manifest.rows)} examples to {Path(args.out) / 'manifest.jsonl'}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    config = _config(args.config)
    manifest = Manifest.read(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.dumps())
    result = train(config, manifest, out)
    print(json.dumps({"checkpoint": str(result.checkpoint), "epochs": result.epochs,
                      "steps": result.steps, "best_valid_loss": result.best_valid_loss}))
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate

    config = load_config(args.config) if args.config else None
    report = evaluate(args.ckpt, Manifest.read(args.data), args.split, config)
    if args.records:
        Path(args.records).write_text(report.jsonl())
    print(report.table())
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .train import ablate, format_ablation

    config = _config(args.config)
    rows = ablate(args.suite, config, Manifest.read(args.data), args.out)
    if args.records:
        Path(args.records).write_text("".join(json.dumps(asdict(r)) + "\n" for r in rows))
    print(format_ablation(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avsepchain", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="render a synthetic audio-visual corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--speakers", type=int, default=8)
    g.add_argument("--train", type=int, default=500)
    g.add_argument("--valid", type=int, default=50)
    g.add_argument("--test", type=int, default=50)
    g.add_argument("--duration", type=float, default=2.0, help="seconds per example")
    g.add_argument("--noise-db", type=float, default=None,
                   help="add white noise this many dB below the target")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the two-stage model")
    t.add_argument("--config")
    t.add_argument("--data", required=True, help="manifest.jsonl")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="SI-SNRi / SDRi of a checkpoint on one split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--config", help="refuse checkpoints whose structure differs from this config")
    e.add_argument("--records", help="also write per-example JSON lines here")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare one ablation suite")
    a.add_argument("--suite", required=True)
    a.add_argument("--config")
    a.add_argument("--data", required=True)
    a.add_argument("--out", default="ablation")
    a.add_argument("--records")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, IncompatibleCheckpointError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, DegenerateInputError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except InvalidArgumentError as e:
        print(f"invalid argument: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
