"""bench command line: run benchmarks, compare reports, emit demo traces."""

import argparse
import sys

from .bench import compare_reports, load_config, read_report, run_benchmark
from .memory import MigrationProfile, format_profile_table

_EPILOG = """\
Any config key can be overridden with an environment variable named
BENCH_<KEY> (upper-cased key), e.g. BENCH_N_STEPS=5 BENCH_MODE=discrete.
"""


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Cavity-flow benchmark harness with lane dispatch and "
                    "memory-mode modelling.",
        epilog=_EPILOG,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark config, write "
                                       "report and trace")
    p_run.add_argument("config")

    p_cmp = sub.add_parser("compare", help="normalized speedup of report A "
                                           "over report B")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")

    p_trc = sub.add_parser("trace", help="single-repeat run with simulated "
                                         "migration delays; writes the "
                                         "trace file only")
    p_trc.add_argument("config")
    return parser


def _cmd_run(args):
    config = load_config(args.config)
    report = run_benchmark(config)
    profile = MigrationProfile(**{
        k: v for k, v in report["migration_profile"].items()
        if k != "migration_fraction"})
    print(f"FOM: {report['fom_seconds_per_step']:.6f} s/step "
          f"over {len(report['fom_per_repeat'])} repeat(s)")
    print(format_profile_table({config.mode: profile}))
    print(f"report: {config.report_path}")
    print(f"trace:  {config.trace_path}")
    if report["errors"]:
        print(f"warning: {len(report['errors'])} repeat(s) failed",
              file=sys.stderr)
        return 1
    return 0


def _cmd_compare(args):
    speedup = compare_reports(read_report(args.report_a),
                              read_report(args.report_b))
    print(f"normalized speedup: {speedup:.4f}")
    return 0


def _cmd_trace(args):
    config = load_config(args.config)
    config.simulate_delay = True
    config.repeats = 1
    run_benchmark(config, write_report=False)
    print(f"trace: {config.trace_path}")
    return 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"run": _cmd_run, "compare": _cmd_compare, "trace": _cmd_trace}
    try:
        return handlers[args.command](args)
    except Exception as exc:
        print(f"bench {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
