from __future__ import annotations

import argparse
import importlib
import logging
import sys

from actseg.config import LOG_LEVEL
from actseg.constants import EXIT_USAGE

log = logging.getLogger(__name__)

COMMANDS = [
    "actseg.commands.synth",
    "actseg.commands.train",
    "actseg.commands.predict",
    "actseg.commands.fuse",
    "actseg.commands.evaluate",
    "actseg.commands.gradcheck",
]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actseg",
        description="Region-consistent actor-action segmentation experiments.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        importlib.import_module(name).setup(subparsers)
        log.debug("Loaded command: %s", name)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=LOG_LEVEL)
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ValueError, RuntimeError, OSError) as e:
        # DatasetError and the domain errors all derive from ValueError
        log.error("%s failed: %s", args.command, e)
        log.debug("traceback", exc_info=True)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
