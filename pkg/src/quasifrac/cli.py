"""Command-line entry point.

::

    quasifrac run <scenario.cfg | bundled name> [--out DIR] [--steps K] [--every J]
    quasifrac validate <scenario.cfg>
    quasifrac oracle <scenario.cfg> [--out DIR] [--coarsen F]

Exit codes: 0 success, 1 configuration or output error, 2 solver failure,
terminal load step, or a failed oracle check.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
import time
from pathlib import Path

from .config import ScenarioError, build_problem, bundled_scenario_path, bundled_scenarios, load_scenario
from .export import export_fields, write_snapshot
from .oracle import MAX_ORACLE_NODES, format_reports, reports_to_csv, run_oracle_suite
from .solver import run_evolution

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2

logger = logging.getLogger("quasifrac")


def _thread_limit():
    """Honour ``QUASIFRAC_THREADS`` (0 or unset = library default)."""
    raw = os.environ.get("QUASIFRAC_THREADS", "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ScenarioError("QUASIFRAC_THREADS", f"expected an integer, got {raw!r}") from None
    if n < 0:
        raise ScenarioError("QUASIFRAC_THREADS", "must be >= 0")
    if n == 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _check_writable(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    probe = directory / ".quasifrac-write-test"
    probe.write_text("")
    probe.unlink()


def _scenario(arg: str) -> Path:
    # an existing file wins; otherwise try the bundled scenario of that name
    path = Path(arg)
    if not path.exists() and arg in bundled_scenarios():
        return bundled_scenario_path(arg)
    return path


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quasifrac", description="Quasistatic nonlocal fracture simulations.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario and export results")
    run.add_argument("scenario", type=_scenario, help="scenario file or bundled scenario name")
    run.add_argument("--out", type=Path, help="output directory (default: from the scenario)")
    run.add_argument("--steps", type=int, help="run only the first K load steps")
    run.add_argument("--every", type=int, help="export fields every J recorded steps")

    val = sub.add_parser("validate", help="parse a scenario and report problems")
    val.add_argument("scenario", type=_scenario, help="scenario file or bundled scenario name")

    ora = sub.add_parser("oracle", help="brute-force cross-checks on a coarsened copy of a scenario")
    ora.add_argument("scenario", type=_scenario, help="scenario file or bundled scenario name")
    ora.add_argument("--out", type=Path, help="directory for oracle.csv (default: from the scenario)")
    ora.add_argument("--coarsen", type=float, default=4.0, help="mesh coarsening factor (default 4)")
    ora.add_argument("--seed", type=int, default=0)
    return p


def _cmd_validate(args) -> int:
    cfg = load_scenario(args.scenario)
    print(f"{args.scenario}: ok ({cfg.name}, h = {cfg.geometry.h:g} mm, horizon = {cfg.geometry.horizon:g} mm, "
          f"{cfg.steps} load steps)")
    return EXIT_OK


def _cmd_run(args) -> int:
    cfg = load_scenario(args.scenario)
    if args.steps is not None and args.steps < 1:
        raise ScenarioError("--steps", "must be at least 1")
    if args.every is not None and args.every < 1:
        raise ScenarioError("--every", "must be at least 1")
    out = args.out if args.out is not None else cfg.output.directory
    every = args.every if args.every is not None else cfg.output.every
    try:
        _check_writable(out)
    except OSError as exc:
        print(f"error: output directory {out} is not writable: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG
    energy = out / "energy.csv"
    if energy.exists():
        energy.unlink()

    problem = build_problem(cfg)
    t0 = time.perf_counter()
    record = run_evolution(problem.nodes, problem.graph, problem.model, cfg.schedule, cfg.newton, steps=args.steps)
    elapsed = time.perf_counter() - t0
    try:
        last = len(record.steps)
        for N in range(1, last + 1):
            export_fields(record, N, out, fields=(N % every == 0 or N == last))
        if record.terminal_step is not None:
            write_snapshot(record, record.terminal_step, out, prefix="terminal_")
    except OSError as exc:
        print(f"error: writing results to {out} failed: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG

    broken = record.steps[-1].broken_total if record.steps else 0
    print(f"{cfg.name}: {record.status} after {len(record.steps)} recorded steps in {elapsed:.1f} s; "
          f"{broken} broken bonds; results in {out}")
    if record.status != "completed":
        print(f"{record.status}: {record.message}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _cmd_oracle(args) -> int:
    cfg = load_scenario(args.scenario)
    if not args.coarsen > 0:
        raise ScenarioError("--coarsen", "must be positive")
    small = cfg.coarsened(args.coarsen)
    problem = build_problem(small)
    if len(problem.nodes) > MAX_ORACLE_NODES:
        raise ScenarioError(
            "--coarsen", f"{len(problem.nodes)} nodes after coarsening; the oracle cap is {MAX_ORACLE_NODES}"
        )
    reports = run_oracle_suite(problem.nodes, problem.graph, problem.model, seed=args.seed)
    print(f"{cfg.name} coarsened x{args.coarsen:g}: {len(problem.nodes)} nodes, {len(problem.graph)} bonds")
    print(format_reports(reports))
    out = args.out if args.out is not None else cfg.output.directory
    try:
        _check_writable(out)
        (out / "oracle.csv").write_text(reports_to_csv(reports))
    except OSError as exc:
        print(f"error: cannot write oracle.csv to {out}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if all(r.passed for r in reports) else EXIT_SOLVER


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "validate": _cmd_validate, "oracle": _cmd_oracle}
    try:
        with _thread_limit():
            return handlers[args.command](args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
