"""Command-line interface: ``dba analyze|verify|evolve|examples``.

Exit codes: 0 success, 1 input or parse error, 2 the constraint algorithm did
not close, 3 inconsistent dynamics, 4 numerical failure (verification above
tolerance, unstable evolution, unsupported system).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import corpus
from .dba import (
    AnalysisReport,
    DBAError,
    InconsistentDynamics,
    NoClosure,
    analyze,
    report_to_dict,
)
from .expr import to_latex, to_text
from .numerics import (
    Grid,
    NumericError,
    build_system,
    check_eom_equivalence,
    evolve,
    polar_cutoff,
)
from .parser import LagrangianSpec, ParseError, parse

EXIT_OK, EXIT_INPUT, EXIT_NO_CLOSURE, EXIT_INCONSISTENT, EXIT_NUMERIC = range(5)

DOMAIN_LENGTH = 40.0


class _Style:
    def __init__(self, stream):
        self.on = os.environ.get("DBA_COLOR", "1") != "0" and hasattr(stream, "isatty") and stream.isatty()

    def __call__(self, text: str, code: str) -> str:
        return f"\033[{code}m{text}\033[0m" if self.on else text

    def ok(self, text: str) -> str:
        return self(text, "32")

    def bad(self, text: str) -> str:
        return self(text, "31")

    def head(self, text: str) -> str:
        return self(text, "1")


def load_input(name: str) -> tuple[str, LagrangianSpec]:
    path = Path(name)
    if path.is_file():
        return path.stem, parse(path.read_text(encoding="utf-8"))
    if name in corpus.BUILTINS:
        return name, corpus.load(name)
    raise FileNotFoundError(f"{name}: no such file or builtin system")


def render_json(report: AnalysisReport) -> str:
    return json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"


def render(report: AnalysisReport, fmt: str, style: _Style | None = None) -> str:
    if fmt == "json":
        return render_json(report)
    style = style or _Style(None)
    show = to_latex if fmt == "latex" else to_text
    lines = []

    def section(title: str) -> None:
        lines.append("")
        lines.append(style.head(title))

    lines.append(f"fields: {', '.join(report.fields)}")
    lines.append(f"Lagrangian: {show(report.lagrangian)}")
    lines.append(f"Hessian rank: {report.rank}")
    lines.append(f"iterations: {report.iterations}")
    section("constraints")
    for c in report.constraints:
        lines.append(f"  {c.label} [{c.generation_name}, {c.multiplier.text}]: {show(c.density)} = 0")
    section("multipliers")
    for a, v in report.multiplier_solution.items():
        lines.append(f"  {a.text} = {show(v)}")
    for a, v in report.implicit_multipliers.items():
        lines.append(f"  {a.text} implicit: {show(v)} = 0")
    for a in report.free_multipliers:
        lines.append(f"  {a.text} free")
    if report.assumptions:
        section("assumptions")
        lines.extend(f"  {show(a)} != 0" for a in report.assumptions)
    section("canonical Hamiltonian")
    lines.append(f"  {show(report.canonical_h)}")
    section("total Hamiltonian")
    lines.append(f"  {show(report.total_h)}")
    if report.hamilton_eoms:
        section("Hamilton equations")
        for a, v in report.hamilton_eoms.items():
            lines.append(f"  {a.text} = {show(v)}")
    section("Lagrangian equations")
    for f, v in report.lagrangian_eoms.items():
        lines.append(f"  E[{f}] = {show(v)}")
    if report.notes:
        section("notes")
        lines.extend(f"  {n}" for n in report.notes)
    return "\n".join(lines) + "\n"


def _analyze(args) -> tuple[str, LagrangianSpec, AnalysisReport]:
    name, spec = load_input(args.input)
    return name, spec, analyze(spec, max_iter=args.max_iterations)


def cmd_analyze(args, out, style) -> int:
    _, _, report = _analyze(args)
    if args.format != "json":
        out.write(f"# dba analyze {args.input} seed={args.seed}\n")
    out.write(render(report, args.format, style))
    return EXIT_OK


def cmd_verify(args, out, style) -> int:
    name, spec, report = _analyze(args)
    grid = Grid(args.grid)
    result = check_eom_equivalence(spec, report, grid, seed=args.seed, tol=args.tol)
    out.write(f"# dba verify {args.input} grid={args.grid} seed={args.seed} tol={args.tol:g}\n")
    for label, err in result.per_check.items():
        out.write(f"  {label}: {err:.3e}\n")
    for s in result.skipped:
        out.write(f"  skipped {s}\n")
    verdict = style.ok("PASS") if result.passed else style.bad("FAIL")
    out.write(f"{verdict} max relative error {result.max_rel_error:.3e}\n")
    return EXIT_OK if result.passed else EXIT_NUMERIC


def cmd_evolve(args, out, style) -> int:
    _, _, report = _analyze(args)
    name = args.input
    probe = build_system(report, Grid(args.grid, DOMAIN_LENGTH))
    cutoff = polar_cutoff(args.t_end) if any(v.mode == "log" for v in probe.variables) else None
    grid = Grid(args.grid, DOMAIN_LENGTH, cutoff)
    system = build_system(report, grid)
    if args.input not in corpus.BUILTINS:
        raise NumericError("evolve needs initial data and supports only the builtin systems")
    initial = corpus.initial_state(name, grid)
    every = max(1, int(round(0.01 / args.dt)))
    traj = evolve(system, initial, args.dt, args.t_end, monitor_every=every)
    out.write(f"# dba evolve {args.input} grid={args.grid} length={DOMAIN_LENGTH:g} "
              f"dt={args.dt:g} t_end={args.t_end:g} seed={args.seed}\n")
    out.write(traj.to_csv())
    out.write(f"# max relative hamiltonian drift {traj.relative_drift('hamiltonian'):.3e}; "
              f"mass drift {traj.relative_drift('mass'):.3e}\n")
    return EXIT_OK


def cmd_examples(args, out, style) -> int:
    if args.input:
        out.write(corpus.text(args.input))
        return EXIT_OK
    for name in corpus.BUILTINS:
        first = corpus.text(name).splitlines()[0].lstrip("# ")
        out.write(f"{name:26s} {first}\n")
    return EXIT_OK


def _power_of_two(text: str) -> int:
    n = int(text)
    if n < 16 or n & (n - 1):
        raise argparse.ArgumentTypeError("grid size must be a power of two >= 16")
    return n


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dba", description="Constraint analysis of degenerate field Lagrangians.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--max-iterations", type=int, default=10)
        sp.add_argument("--seed", type=int, default=42)

    a = sub.add_parser("analyze", help="run the constraint algorithm and print the report")
    a.add_argument("input", help="a .lag file or builtin system name")
    a.add_argument("--format", choices=("plain", "latex", "json"), default="plain")
    common(a)

    v = sub.add_parser("verify", help="compare Hamilton and Lagrangian equations on random fields")
    v.add_argument("input")
    v.add_argument("--grid", type=_power_of_two, default=256)
    v.add_argument("--tol", type=_positive, default=1e-8)
    common(v)

    e = sub.add_parser("evolve", help="integrate a builtin system in time and print monitors as CSV")
    e.add_argument("input")
    e.add_argument("--grid", type=_power_of_two, default=256)
    e.add_argument("--dt", type=_positive, default=1e-4)
    e.add_argument("--t-end", type=_positive, default=1.0)
    common(e)

    x = sub.add_parser("examples", help="list builtin systems or print one")
    x.add_argument("input", nargs="?", choices=corpus.BUILTINS)
    return p


COMMANDS = {"analyze": cmd_analyze, "verify": cmd_verify, "evolve": cmd_evolve, "examples": cmd_examples}


def main(argv: list[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    style = _Style(out)
    err = sys.stderr
    try:
        return COMMANDS[args.command](args, out, style)
    except ParseError as exc:
        err.write(f"parse error: {exc}\n")
        return EXIT_INPUT
    except (FileNotFoundError, KeyError) as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INPUT
    except NoClosure as exc:
        err.write(f"no closure: {exc}\n")
        return EXIT_NO_CLOSURE
    except InconsistentDynamics as exc:
        err.write(f"inconsistent dynamics: {exc}\n")
        return EXIT_INCONSISTENT
    except DBAError as exc:
        err.write(f"error: {exc}\n")
        return EXIT_INPUT
    except NumericError as exc:
        err.write(f"numerical failure: {exc}\n")
        return EXIT_NUMERIC


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
