"""Command-line entry point.

Exit codes: 0 success, 1 pipeline or parse failure, 2 usage or I/O problem.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, example_config, load_config
from .events_io import EventFormatError
from .network import SpikeTrace
from .pipeline import PipelineError, ingest, run_experiment, write_raster

EXIT_OK, EXIT_PIPELINE, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("retina_attention")


def _classes(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(c) for c in text.split(",") if c.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_ingest(args) -> int:
    try:
        trials = ingest(args.inputs, args.out, args.classes, args.labels)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (EventFormatError, ValueError) as exc:
        log.error("parse failure: %s", exc)
        return EXIT_PIPELINE
    print(f"wrote {len(trials)} trial(s) to {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except FileNotFoundError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except ConfigError as exc:
        log.error("invalid config: %s", exc)
        return EXIT_USAGE
    if args.out:
        cfg = cfg.with_output(args.out)
    try:
        manifest = run_experiment(cfg)
    except PipelineError as exc:
        log.error("%s (partial outputs in %s)", exc, cfg.output.directory)
        return EXIT_PIPELINE
    for coding, acc in manifest["accuracy"].items():
        print(f"{coding}: accuracy {acc:.3f}")
    return EXIT_OK


def cmd_raster(args) -> int:
    trace_path = Path(args.trace)
    intervals = Path(args.intervals) if args.intervals else trace_path.with_name(trace_path.stem + "_intervals.csv")
    if not trace_path.is_file():
        log.error("trace file not found: %s", trace_path)
        return EXIT_USAGE
    if args.intervals and not intervals.is_file():
        log.error("intervals file not found: %s", intervals)
        return EXIT_USAGE
    try:
        text = intervals.read_text(encoding="utf-8") if intervals.is_file() else None
        trace = SpikeTrace.from_csv(trace_path.read_text(encoding="utf-8"), text)
    except ValueError as exc:
        log.error("malformed trace: %s", exc)
        return EXIT_PIPELINE
    counts = write_raster(trace, args.out)
    print(", ".join(f"{layer}: {n}" for layer, n in counts.items()))
    return EXIT_OK


def cmd_example_config(args) -> int:
    sys.stdout.write(example_config())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="retina-attention", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert recordings into per-trial CSV files")
    p.add_argument("inputs", nargs="+", help="AEDAT 3.1 or CSV recordings, or directories of .aedat files")
    p.add_argument("--labels", help="label table (default: <recording>_labels.csv next to each recording)")
    p.add_argument("--classes", type=_classes, default=(), help="keep only these classes, e.g. 3,5,8")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="train, infer, decode and classify as configured")
    p.add_argument("config", help="experiment INI file")
    p.add_argument("--out", help="output directory (overrides [output] directory)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("raster", help="split a spike trace into per-layer raster CSVs")
    p.add_argument("trace", help="trace CSV with t_us,layer,neuron_id rows")
    p.add_argument("--intervals", help="attention interval CSV (default: <trace>_intervals.csv if present)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_raster)

    p = sub.add_parser("example-config", help="print the default configuration")
    p.set_defaults(func=cmd_example_config)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
