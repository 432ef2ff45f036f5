"""Command-line entry point: ``dncrl run | summarize | ingest``."""
from __future__ import annotations

import argparse
import logging
import sys

from dncrl import bench
from dncrl.catalog import ingest


def _pairs(extra: list[str]) -> dict:
    """Turn ``--key value`` leftovers into config overrides."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise bench.ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:].replace("-", "_")
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise bench.ConfigError(f"missing value for {tok}")
        out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dncrl", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress per eval point")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every seed of a config and write metrics",
                         epilog="Any config key can be overridden with --key value, "
                                "e.g. --seeds '0 1 2' --n_episodes 500. Output lands in "
                                f"output_dir, relative to ${bench.OUTPUT_ROOT_VAR} when set.")
    run.add_argument("--config", required=True, help="flat key = value config file")

    summ = sub.add_parser("summarize", help="recompute summary.csv from metrics_seed*.csv")
    summ.add_argument("--dir", required=True)

    ing = sub.add_parser("ingest", help="build a recommender catalog from a movies CSV")
    ing.add_argument("--movies", required=True, help="movieId,title,genres CSV")
    ing.add_argument("--out", required=True, help="catalog CSV to write")
    ing.add_argument("--tokenizer", choices=("genre", "words"), default="genre")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if extra and args.command != "run":
        parser.error(f"unrecognized arguments: {' '.join(extra)}")

    if args.command == "run":
        try:
            cfg = bench.load_config(args.config, _pairs(extra))
        except bench.ConfigError as exc:
            print(f"dncrl run: config error: {exc}", file=sys.stderr)
            return bench.EXIT_CONFIG
        status = bench.run_experiment(cfg)
        if status == bench.EXIT_SKIPPED:
            print(f"dncrl run: skipped, {cfg.method} cannot enumerate this action space",
                  file=sys.stderr)
        else:
            print(cfg.resolved_output())
        return status

    if args.command == "summarize":
        try:
            rows = bench.summarize_dir(args.dir)
        except (FileNotFoundError, ValueError) as exc:
            print(f"dncrl summarize: {exc}", file=sys.stderr)
            return bench.EXIT_CONFIG
        for r in rows:
            print(f"{r['episode']:>8d}  mean {r['mean']:10.3f}  std {r['std']:9.3f}  "
                  f"n={r['n_seeds']}")
        return bench.EXIT_OK

    try:
        catalog = ingest(args.movies, args.out, args.tokenizer)
    except (OSError, ValueError) as exc:
        print(f"dncrl ingest: {exc}", file=sys.stderr)
        return bench.EXIT_CONFIG
    rows, n_feat = catalog.features.shape
    print(f"catalog: {rows} unique rows x {n_feat} features -> {args.out}")
    return bench.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
