"""`actseg gradcheck`: finite-difference check of every differentiable op."""

from __future__ import annotations

import argparse
import logging

from actseg.config import GRADCHECK_EPS, GRADCHECK_TOLERANCE
from actseg.constants import EXIT_CHECK_FAILED, EXIT_OK
from actseg.services.gradcheck import format_report, run_gradcheck

log = logging.getLogger(__name__)


def run(args: argparse.Namespace) -> int:
    results = run_gradcheck(args.seed, args.eps, args.tolerance, inject_fault=args.inject_fault)
    print(format_report(results))
    failed = [r.operation for r in results if not r.passed]
    if failed:
        log.error(f"Gradient check failed for: {', '.join(failed)}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def setup(subparsers) -> None:
    p = subparsers.add_parser("gradcheck", help="verify analytic gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=GRADCHECK_EPS)
    p.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE)
    p.add_argument("--inject-fault", action="store_true", help="corrupt each analytic gradient by +0.1")
    p.set_defaults(handler=run)
