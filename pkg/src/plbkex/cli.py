"""Command-line entry point: ``plbkex run | pair | selftest``."""

from __future__ import annotations

import argparse
import sys

from .config import ConfigInvalid, load_scenario
from .sim import run_scenario, summarize

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_CONFIG = 2
EXIT_UNSOUND = 3


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text, 0)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def format_summary(config, summary: dict) -> str:
    n = summary["runs"]
    lines = [
        f"scenario: variant={config.variant.value} adversary={config.adversary.label} "
        f"seed={config.seed} runs={n}",
        f"both accepted:            {summary['both_accepted']}/{n}",
        f"soundness violations:     {summary['soundness_violations']}",
        f"impersonation undetected: {summary['impersonation_undetected']}",
        f"user failures:            {summary['user_failures']}",
    ]
    if summary["aborts"]:
        lines.append("aborts:")
        lines.extend(f"  {key:<32} {count}" for key, count in summary["aborts"].items())
    return "\n".join(lines)


def cmd_run(args) -> int:
    path = args.scenario_path or args.scenario
    if not path:
        print("error: a scenario file is required", file=sys.stderr)
        return EXIT_CONFIG
    overrides = {k: v for k, v in (("seed", args.seed), ("runs", args.runs)) if v is not None}
    try:
        config = load_scenario(path, overrides)
    except OSError as exc:
        print(f"error: cannot read {path}: {exc.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigInvalid as exc:
        print(f"{path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    reports = run_scenario(config)
    summary = summarize(reports)
    text = format_summary(config, summary)
    if args.summary:
        print(text)
    else:
        lines = "".join(r.to_json() + "\n" for r in reports)
        if args.out:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(lines)
            print(text)
        else:
            sys.stdout.write(lines)
            print(text, file=sys.stderr)
    return EXIT_UNSOUND if summary["soundness_violations"] else EXIT_OK


def cmd_pair(args) -> int:
    from .pairing import run_pair, run_spammer

    if args.role == "spammer":
        if not args.code:
            print("error: spammer needs --code", file=sys.stderr)
            return EXIT_CONFIG
        return run_spammer(args.ledger, args.code, args.count)
    return run_pair(args.role, args.ledger, round_s=args.round_ms / 1000)


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(seeds=args.seeds, inject_fault=args.inject_fault)
    for r in results:
        print(r.line())
    ok = all(r.ok for r in results)
    print("selftest passed" if ok else "selftest FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plbkex", description="Ledger-assisted key exchange simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario file and report per-run JSON lines")
    run.add_argument("scenario", nargs="?", help="scenario file")
    run.add_argument("--scenario", dest="scenario_path", metavar="PATH", help="scenario file")
    run.add_argument("--seed", type=_u64, help="override the scenario seed")
    run.add_argument("--runs", type=_positive, help="override the number of runs")
    run.add_argument("--out", metavar="PATH", help="write JSON lines here instead of stdout")
    run.add_argument("--summary", action="store_true", help="print only the summary table")
    run.set_defaults(func=cmd_run)

    pair = sub.add_parser("pair", help="interactive two-terminal pairing demo")
    pair.add_argument("role", choices=("initiator", "responder", "spammer"))
    pair.add_argument("--ledger", required=True, metavar="PATH", help="Unix socket path of the shared ledger")
    pair.add_argument("--round-ms", type=_positive, default=250, help="ledger round length (initiator only)")
    pair.add_argument("--code", help="context code to spam (spammer only)")
    pair.add_argument("--count", type=_positive, default=1, help="fake events to submit (spammer only)")
    pair.set_defaults(func=cmd_pair)

    st = sub.add_parser("selftest", help="Merkle and soundness self-checks")
    st.add_argument("--seeds", type=_positive, default=50, help="seeds per soundness configuration")
    st.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    st.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
