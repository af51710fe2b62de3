"""Command-line entry point: ``potalign <stage> --out RUN_DIR ...``.

Exit codes: 0 ok, 1 usage, 2 data error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline, synth
from .config import ConfigError, PipelineConfig
from .datamodel import BundleError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_STAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p, corpus=False):
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="JSON config file (keys of PipelineConfig)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    if corpus:
        p.add_argument("--corpus", required=True, help="corpus directory holding corpus.json")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="potalign", description="Behavior discovery and alignment from motion data.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="corpus directory")
    p.add_argument("--shots", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)

    _common(sub.add_parser("extract-pots", help="PoTs and flow variation per shot"), corpus=True)
    _common(sub.add_parser("partition", help="codebook and shot partitioning"))
    p = sub.add_parser("cluster", help="cluster the intervals")
    _common(p)
    p.add_argument("--k", type=int, help="cluster count (overrides the config)")
    _common(sub.add_parser("extract-cmps", help="candidate matching pairs per cluster"))
    _common(sub.add_parser("align-homography", help="homography per CMP"))
    p = sub.add_parser("align-ttps", help="temporal TPS per CMP")
    _common(p)
    p.add_argument("--overlay", metavar="DIR", help="also write PGM overlays of the first CMPs")
    p.add_argument("--overlay-count", type=int, default=5)
    _common(sub.add_parser("evaluate", help="metrics against ground truth"))
    _common(sub.add_parser("pipeline", help="run every stage"), corpus=True)
    return ap


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "k", None) is not None:
        over["k"] = args.k
    return cfg.with_(**over) if over else cfg


def run_command(args) -> int:
    if args.command == "synth":
        if args.shots < 1:
            raise UsageError("--shots must be positive")
        synth.write_corpus(synth.generate_dataset(args.shots, seed=args.seed), args.out)
        print(f"wrote {args.shots} shots to {args.out}")
        return EXIT_OK
    if args.jobs < 1:
        raise UsageError("--jobs must be positive")
    run = pipeline.Run(args.out, load_config(args), args.jobs)
    run.init()
    cmd = args.command
    if cmd == "extract-pots":
        pipeline.stage_extract_pots(run, args.corpus)
    elif cmd == "partition":
        pipeline.stage_partition(run)
    elif cmd == "cluster":
        pipeline.stage_cluster(run)
    elif cmd == "extract-cmps":
        pipeline.stage_extract_cmps(run)
    elif cmd == "align-homography":
        pipeline.stage_align_homography(run)
    elif cmd == "align-ttps":
        pipeline.stage_align_ttps(run)
        if args.overlay:
            pipeline.write_overlays(run, args.overlay, args.overlay_count)
    elif cmd == "evaluate":
        pipeline.stage_evaluate(run)
        sys.stdout.write(run.path("metrics.txt").read_text())
    elif cmd == "pipeline":
        pipeline.run_pipeline(run, args.corpus)
        sys.stdout.write(run.path("metrics.txt").read_text())
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run_command(args)
    except UsageError as exc:
        print(f"potalign: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.StageError as exc:
        print(f"potalign: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (ConfigError, BundleError, FileNotFoundError, json.JSONDecodeError, ValueError, KeyError) as exc:
        print(f"potalign: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - any other failure is a failed stage
        logging.getLogger(__name__).debug("stage failure", exc_info=True)
        print(f"potalign: stage failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
