"""Command line entry point.

Subcommands read a JSON run configuration::

    thermoch run CONFIG            simulate, write CSV/VTK as configured
    thermoch converge-space CONFIG spatial self-convergence table
    thermoch converge-time CONFIG  temporal self-convergence table
    thermoch check CONFIG          structural identities, one line each

Failures print a JSON object ``{"error": ..., "message": ...}`` on stderr
and exit with a nonzero status.
"""

import argparse
import json
import logging
import sys

from . import driver


def _summary(records):
    last = records[-1]
    return {
        "steps": last.step,
        "time": last.time,
        "mass": last.mass,
        "energy": last.energy,
        "entropy": last.entropy,
        "theta_min": min(r.theta_min for r in records),
    }


def _print_table(table, args):
    if args.json:
        print(json.dumps(table.to_dict(), indent=2))
    else:
        print(table.format())


def cmd_run(cfg, args):
    _, records = driver.run_simulation(cfg)
    print(json.dumps(_summary(records), indent=2))
    return 0


def cmd_converge_space(cfg, args):
    _print_table(driver.self_convergence_space(cfg), args)
    return 0


def cmd_converge_time(cfg, args):
    _print_table(driver.self_convergence_time(cfg), args)
    return 0


def cmd_check(cfg, args):
    results = driver.check_structure(cfg)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


COMMANDS = {
    "run": cmd_run,
    "converge-space": cmd_converge_space,
    "converge-time": cmd_converge_time,
    "check": cmd_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="thermoch", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON run configuration")
        if name.startswith("converge"):
            p.add_argument("--json", action="store_true", help="print the table as JSON")
    return parser


def _fail(kind, message, **extra):
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            _fail("usage", "invalid command line")
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        cfg = driver.load_config(args.config)
        return COMMANDS[args.command](cfg, args)
    except driver.ConfigError as exc:
        _fail("config", str(exc))
        return 2
    except driver.SimulationError as exc:
        _fail("simulation", str(exc), step=exc.step, level=exc.level)
        return 3
    except OSError as exc:
        _fail("io", str(exc))
        return 4


if __name__ == "__main__":
    sys.exit(main())
