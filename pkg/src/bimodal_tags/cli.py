"""Command-line entry point: ``bimodal-tags <stage> --workspace DIR``.

Failures print a single ``error[<category>]: <message>`` line to stderr
and exit non-zero.
"""

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .errors import BimodalError, UsageError
from .pipeline import STAGES, STRATEGIES, PipelineConfig, run_all, run_stage
from .synth import generate_synthetic

EXIT_CODES = {"usage": 2}


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="bimodal-tags", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--workspace", required=True, type=Path)
    common.add_argument("--config", type=Path, help="defaults to <workspace>/config.json")
    common.add_argument("--seed", type=_u64)
    common.add_argument("--strategy", choices=STRATEGIES)
    common.add_argument("--force", action="store_true", help="overwrite existing stage artifacts")

    for stage in STAGES:
        sub.add_parser(stage, parents=[common], help=f"run the {stage} stage")
    run = sub.add_parser("run", parents=[common], help="run every stage in order")
    run.add_argument("--both", action="store_true", help="choose/evaluate with both strategies")

    synth = sub.add_parser("synth", help="write a synthetic corpus and config into the workspace")
    synth.add_argument("--workspace", required=True, type=Path)
    synth.add_argument("--seed", type=_u64, default=0)
    synth.add_argument("--n-pairs", type=int, default=200)
    synth.add_argument("--n-test", type=int, default=40)
    synth.add_argument("--clusters", type=int, default=8)
    synth.add_argument("--noise", type=float, default=0.3)
    synth.add_argument("--image-size", type=int, default=32)
    synth.add_argument("--force", action="store_true")
    return parser


def load_config(args):
    path = args.config or args.workspace / "config.json"
    if not path.exists():
        raise UsageError(f"no config at {path}; pass --config or run `synth` first")
    cfg = PipelineConfig.load(path)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.strategy is not None:
        overrides["strategy"] = args.strategy
    if overrides:
        cfg = PipelineConfig(**{**{f.name: getattr(cfg, f.name) for f in fields(cfg)}, **overrides})
    return cfg


def dispatch(args):
    if args.command == "synth":
        if (args.workspace / "config.json").exists() and not args.force:
            raise UsageError(f"{args.workspace} already holds a corpus; pass --force to regenerate")
        corpus = generate_synthetic(args.workspace, n_pairs=args.n_pairs, n_test=args.n_test,
                                    n_clusters=args.clusters, noise=args.noise, seed=args.seed,
                                    image_size=args.image_size)
        print(corpus.config)
        return
    cfg = load_config(args)
    if args.command == "run":
        strategies = list(STRATEGIES) if args.both else None
        results = run_all(cfg, args.workspace, args.force, strategies)
        for metrics in results.values():
            print(json.dumps(metrics, sort_keys=True))
        return
    result = run_stage(args.command, cfg, args.workspace, args.force)
    if args.command == "evaluate":
        print(json.dumps(result, sort_keys=True))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        dispatch(args)
    except BimodalError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
