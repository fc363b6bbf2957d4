"""Command-line entry point.

Exit codes: 0 = campaign ran and found no crashes, 1 = crashes found,
2 = usage or annotation-spec error, 3 = worker/protocol failure.
"""

from __future__ import annotations

import argparse
import shlex
import sys
import time
from typing import Optional, Sequence

from .orchestrator import CampaignConfig, run_campaign
from .parser import SpecError, parse_spec
from .report import build_report, write_report
from .wire import ProtocolError, WorkerSession

EXIT_OK = 0
EXIT_CRASHES = 1
EXIT_USAGE = 2
EXIT_WORKER = 3


def _build_argparser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="anvil",
        description=(
            "Generate constraint-satisfying random inputs for an annotated "
            "subject, run them through a worker process, and report "
            "deduplicated crashes."
        ),
    )
    p.add_argument("--spec", required=True, help="annotation file (.an)")
    p.add_argument(
        "--worker",
        required=True,
        help="worker command line; the subject module id is appended",
    )
    p.add_argument("--seed", type=int, default=0, help="campaign seed (u64)")
    p.add_argument("--max-examples", type=int, default=None)
    p.add_argument(
        "--timeout", type=float, default=None, help="default per-case timeout (s)"
    )
    p.add_argument(
        "--only",
        action="append",
        default=None,
        metavar="NAME",
        help="test only this function (repeatable)",
    )
    p.add_argument("--report", default=None, help="write machine report here")
    p.add_argument("--format", choices=("human", "machine"), default="human")
    p.add_argument("--boundary-bias", type=float, default=None)
    p.add_argument("--size-budget", type=int, default=None)
    p.add_argument("--shrink-budget", type=int, default=None)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = _build_argparser().parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else 0

    try:
        with open(args.spec, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        print(f"anvil: cannot read spec: {e}", file=sys.stderr)
        return EXIT_USAGE

    try:
        spec = parse_spec(text)
    except SpecError as e:
        print(f"anvil: {args.spec}: {e}", file=sys.stderr)
        return EXIT_USAGE

    only = set(args.only) if args.only else None
    if only:
        known = set(spec.functions) | set(spec.generators) | set(spec.module_tests)
        unknown = only - known
        if unknown:
            print(
                f"anvil: --only names not in spec: {', '.join(sorted(unknown))}",
                file=sys.stderr,
            )
            return EXIT_USAGE

    overrides = {
        "max_examples": args.max_examples,
        "default_timeout_s": args.timeout,
        "boundary_bias": args.boundary_bias,
        "size_budget": args.size_budget,
        "shrink_budget": args.shrink_budget,
    }
    try:
        cfg = CampaignConfig(
            seed=args.seed,
            **{k: v for k, v in overrides.items() if v is not None},
        )
    except ValueError as e:
        print(f"anvil: {e}", file=sys.stderr)
        return EXIT_USAGE

    cmd = shlex.split(args.worker) + [spec.subject]
    worker = WorkerSession(cmd)
    started = time.monotonic()
    try:
        worker.start()
        results, recipes = run_campaign(spec, cfg, worker, only=only)
    except ProtocolError as e:
        print(f"anvil: worker failure: {e}", file=sys.stderr)
        return EXIT_WORKER
    finally:
        worker.close()
    elapsed = time.monotonic() - started

    report = build_report(spec, cfg, results, recipes)
    if args.report:
        try:
            with open(args.report, "wb") as fh:
                fh.write(write_report(report, "machine"))
        except OSError as e:
            print(f"anvil: cannot write report: {e}", file=sys.stderr)
            return EXIT_USAGE
    out = write_report(report, args.format, elapsed_s=elapsed)
    sys.stdout.buffer.write(out)
    sys.stdout.buffer.flush()
    return EXIT_CRASHES if report.unique_bugs > 0 else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
