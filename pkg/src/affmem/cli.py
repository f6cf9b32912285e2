"""Command-line entry point: ``affmem <command> [--config F] [--seed N] [--out-dir D] [--workers K]``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config; flags override it")
    common.add_argument("--seed", type=int, help="run seed (config path: seed)")
    common.add_argument("--out-dir", help="output directory (config path: out_dir)")
    common.add_argument("--workers", type=int, help="parallel worker processes (config path: workers)")
    common.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config path, e.g. --set train.steps=500 (repeatable)",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="affmem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {
        "train-pk": "train the prior-knowledge model and write a checkpoint plus training log",
        "ablate": "train all eight discriminator variants and tabulate held-out CCC",
        "personalize": "run synthetic person streams through per-person affective memories",
        "gradcheck": "finite-difference check of every loss gradient",
        "eval": "score a checkpoint on held-out data or a stream CSV",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    log = logging.getLogger("affmem")
    try:
        overrides = dict(harness.parse_assignment(a) for a in args.assignments)
        for flag, path in (("seed", "seed"), ("out_dir", "out_dir"), ("workers", "workers")):
            value = getattr(args, flag)
            if value is not None:
                overrides[path] = value
        cfg = harness.load_config(args.config, overrides)
    except harness.ConfigError as exc:
        log.error("%s", exc)
        return harness.EXIT_CONFIG
    return harness.run(args.command, cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
