"""Command-line entry point.

    twinfuse synth --pairs 38 --twin-correlation 0.8 --seed 7 --out data/
    twinfuse run --config data/config.json --out runs/a [--seed N] [--strict] [--modality voice]

Exit codes: 0 success, 1 config/data error, 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import DataError, InvariantError
from .synth import SynthConfig, generate_synthetic

log = logging.getLogger("twinfuse")

STAGES = {
    "extract": pipeline.extract,
    "score": pipeline.score,
    "fuse": pipeline.fuse,
    "eval": pipeline.evaluate,
}


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, type=Path, help="run config JSON")
    p.add_argument("--out", required=True, type=Path, help="run output directory")
    p.add_argument("--seed", type=int, help="training seed (overrides config)")
    p.add_argument("--strict", action="store_true", default=None,
                   help="fail instead of pruning unavailable scorers")
    p.add_argument("--modality", choices=pipeline.MODALITY_CHOICES)
    p.add_argument("--manifest", help="manifest path (overrides config)")
    p.add_argument("--embeddings", help="ear embedding table (overrides config)")
    p.add_argument("--split-policy", choices=("exclude-pair", "exclude-subject", "abort"))
    p.add_argument("--lstm-epochs", type=int)
    p.add_argument("--lstm-hidden", type=int)
    p.add_argument("--pca-k", type=int)
    p.add_argument("--dtw-normalized", action="store_true", default=None)
    p.add_argument("--print-config", action="store_true",
                   help="print the effective config and exit")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinfuse",
                                     description="Hierarchical score-level fusion for twin identification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic twin dataset")
    s.add_argument("--pairs", type=int, default=SynthConfig.n_pairs)
    s.add_argument("--twin-correlation", type=float, default=SynthConfig.twin_correlation)
    s.add_argument("--voice-noise", type=float, default=SynthConfig.voice_noise)
    s.add_argument("--voice-jitter", type=float, default=SynthConfig.voice_jitter)
    s.add_argument("--ear-noise", type=float, default=SynthConfig.ear_noise)
    s.add_argument("--ear-jitter", type=float, default=SynthConfig.ear_jitter)
    s.add_argument("--embedding-noise", type=float, default=SynthConfig.embedding_noise)
    s.add_argument("--seed", type=int, default=SynthConfig.seed)
    s.add_argument("--out", required=True, type=Path)

    r = sub.add_parser("run", help="run the full pipeline")
    _add_run_args(r)
    for name in STAGES:
        _add_run_args(sub.add_parser(name, help=f"run only the {name} stage"))
    return parser


def _overrides(args) -> dict:
    return {
        "seed": args.seed,
        "strict": args.strict,
        "modality": args.modality,
        "manifest": args.manifest,
        "embeddings": args.embeddings,
        "split_policy": args.split_policy,
        "lstm.epochs": args.lstm_epochs,
        "lstm.hidden_size": args.lstm_hidden,
        "pca.k": args.pca_k,
        "dtw_normalized": args.dtw_normalized,
    }


def _dispatch(args) -> int:
    if args.command == "synth":
        cfg = SynthConfig(n_pairs=args.pairs, twin_correlation=args.twin_correlation,
                          voice_noise=args.voice_noise, voice_jitter=args.voice_jitter,
                          ear_noise=args.ear_noise, ear_jitter=args.ear_jitter,
                          embedding_noise=args.embedding_noise, seed=args.seed)
        manifest = generate_synthetic(cfg, args.out)
        print(manifest)
        return 0

    cfg, base = pipeline.load_config(args.config, _overrides(args))
    if args.print_config:
        print(json.dumps(pipeline.config_to_dict(cfg), indent=1))
        return 0
    if args.command == "run":
        print(pipeline.run_pipeline(cfg, args.out, base))
        return 0
    run = pipeline.Run(cfg, base, args.out)
    run.out.mkdir(parents=True, exist_ok=True)
    result = STAGES[args.command](run)
    if isinstance(result, Path):
        print(result)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except InvariantError as exc:
        log.error("invariant violation: %s", exc)
        return 2
    except DataError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
