"""Dirac-Bergmann constraint analysis for Lagrangians linear in velocities.

The driver builds primary constraints from the momentum definitions, then
sweeps the constraint set: every constraint is bracketed with the current
total Hamiltonian and the result, reduced on the constraint surface, either
vanishes, becomes a linear equation for the multipliers, or is appended as a
new constraint of the next generation.  Sweeps stop once nothing new appears;
the multiplier equations are then solved and substituted back.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import sympy

from .expr import (
    Expr,
    JetAtom,
    Kind,
    atom_of,
    atoms,
    is_zero,
    linear_coefficient,
    normalize,
    partial_diff,
    substitute,
    to_latex,
    to_text,
    to_tree,
)
from .parser import LagrangianSpec
from .varcalc import NotExact, euler_op, integrate_dx, poisson_with_hamiltonian, total_dx

log = logging.getLogger(__name__)

GENERATIONS = {1: "primary", 2: "secondary", 3: "tertiary"}


class DBAError(Exception):
    pass


class UnsupportedLagrangian(DBAError):
    pass


class NoClosure(DBAError):
    pass


class InconsistentDynamics(DBAError):
    pass


class UndeterminedMultipliers(DBAError):
    pass


@dataclass(frozen=True)
class Constraint:
    label: str
    generation: int
    density: Expr
    multiplier: JetAtom

    @property
    def generation_name(self) -> str:
        return GENERATIONS.get(self.generation, f"generation-{self.generation}")


@dataclass(frozen=True)
class Rule:
    """Oriented constraint: ``target`` and all its higher jets are eliminated."""

    target: JetAtom
    value: Expr


class ConstraintReducer:
    """Rewrites expressions onto the constraint surface.

    Primary constraints eliminate momenta, secondary ones eliminate the
    highest jet of the latest-declared field they contain.  Jets above an
    eliminated atom are replaced by total derivatives of its value.
    """

    def __init__(self, fields: tuple[str, ...]):
        self.fields = fields
        self.rules: list[Rule] = []
        self.assumptions: list[Expr] = []
        self._cache: dict[JetAtom, Expr] = {}

    def copy(self) -> ConstraintReducer:
        other = ConstraintReducer(self.fields)
        other.rules = list(self.rules)
        other.assumptions = list(self.assumptions)
        return other

    def add_primary(self, name: str, value: Expr) -> None:
        self._add(Rule(JetAtom(Kind.MOMENTUM, name), normalize(value)))

    def orient(self, density: Expr) -> Rule | None:
        density = self.reduce(density)
        order = {f: i for i, f in enumerate(self.fields)}
        tops: dict[str, JetAtom] = {}
        for a in atoms(density):
            if a.kind == Kind.FIELD and not a.t_order:
                if a.name not in tops or a.x_order > tops[a.name].x_order:
                    tops[a.name] = a
        for a in sorted(tops.values(), key=lambda a: -order[a.name]):
            coeff = linear_coefficient(density, a)
            if coeff is None or coeff == 0:
                continue
            if any(b.name == a.name and b.kind == Kind.FIELD and b.x_order >= a.x_order
                   for b in atoms(coeff)):
                continue
            value = normalize(a.symbol - density / coeff)
            if coeff.free_symbols:
                self.note_assumption(coeff)
            rule = Rule(a, value)
            self._add(rule)
            return rule
        return None

    def _add(self, rule: Rule) -> None:
        self.rules.append(rule)
        self._cache.clear()

    def note_assumption(self, e: Expr) -> None:
        num, _ = sympy.fraction(normalize(e))
        for factor in sympy.factor_list(num)[1]:
            f = normalize(factor[0])
            if f.free_symbols and f not in self.assumptions:
                self.assumptions.append(f)

    def _value(self, a: JetAtom) -> Expr | None:
        if a in self._cache:
            return self._cache[a]
        for rule in self.rules:
            t = rule.target
            if (t.kind, t.name, t.t_order) == (a.kind, a.name, a.t_order) and a.x_order >= t.x_order:
                v = total_dx(rule.value, a.x_order - t.x_order)
                self._cache[a] = v
                return v
        return None

    def reduce(self, e: Expr, max_rounds: int = 50) -> Expr:
        e = normalize(e)
        for _ in range(max_rounds):
            bindings = {}
            for a in atoms(e):
                v = self._value(a)
                if v is not None:
                    bindings[a] = v
            if not bindings:
                return e
            e = substitute(e, bindings)
        raise DBAError("constraint reduction did not terminate")


@dataclass
class AnalysisReport:
    fields: tuple[str, ...]
    lagrangian: Expr
    hessian: list[list[Expr]]
    rank: int
    constraints: list[Constraint]
    multiplier_solution: dict[JetAtom, Expr]
    implicit_multipliers: dict[JetAtom, Expr]
    free_multipliers: list[JetAtom]
    assumptions: list[Expr]
    canonical_h: Expr
    total_h: Expr
    hamilton_eoms: dict[JetAtom, Expr]
    lagrangian_eoms: dict[str, Expr]
    iterations: int
    reducer: ConstraintReducer = field(repr=False, compare=False)
    notes: list[str] = field(default_factory=list)

    @property
    def closed(self) -> bool:
        return not self.free_multipliers

    def on_surface(self, e: Expr) -> Expr:
        return self.reducer.reduce(e)

    def constraint(self, label: str) -> Constraint:
        return next(c for c in self.constraints if c.label == label)

    def by_generation(self, generation: int) -> list[Constraint]:
        return [c for c in self.constraints if c.generation == generation]


# --- Lagrangian-level operations ---------------------------------------------

def hessian_and_rank(spec: LagrangianSpec) -> tuple[list[list[Expr]], int]:
    vel = [spec.velocity(f) for f in spec.fields]
    first = [partial_diff(spec.density, v) for v in vel]
    hess = [[partial_diff(first[i], vj) for vj in vel] for i in range(len(vel))]
    return hess, symbolic_rank(hess)


def symbolic_rank(matrix: list[list[Expr]]) -> int:
    rows = [list(r) for r in matrix]
    rank = 0
    ncols = len(rows[0]) if rows else 0
    for col in range(ncols):
        pivot = next((i for i in range(rank, len(rows)) if not is_zero(rows[i][col])), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        p = rows[rank][col]
        for i in range(rank + 1, len(rows)):
            f = normalize(rows[i][col] / p)
            rows[i] = [normalize(rows[i][j] - f * rows[rank][j]) for j in range(ncols)]
        rank += 1
    return rank


def _require_rank_zero(spec: LagrangianSpec) -> None:
    _, rank = hessian_and_rank(spec)
    if rank > 0:
        raise UnsupportedLagrangian("partially regular Lagrangians unsupported")


def momentum_definitions(spec: LagrangianSpec) -> dict[str, Expr]:
    return {f: partial_diff(spec.density, spec.velocity(f)) for f in spec.fields}


def primary_constraints(spec: LagrangianSpec) -> list[Constraint]:
    _require_rank_zero(spec)
    out = []
    for i, (f, p) in enumerate(momentum_definitions(spec).items(), start=1):
        density = normalize(JetAtom(Kind.MOMENTUM, f).symbol - p)
        out.append(Constraint(f"c{i}", 1, density, JetAtom(Kind.MULTIPLIER, f"lam{i}")))
    return out


def canonical_hamiltonian(spec: LagrangianSpec) -> Expr:
    _require_rank_zero(spec)
    h = -spec.density
    for f, p in momentum_definitions(spec).items():
        h += p * spec.velocity(f).symbol
    h = normalize(h)
    assert not any(a.t_order for a in atoms(h)), "velocity terms failed to cancel"
    return h


# --- multiplier equations ------------------------------------------------------

@dataclass
class Solution:
    explicit: dict[JetAtom, Expr]
    implicit: dict[JetAtom, Expr]
    free: list[JetAtom]
    leftovers: list[Expr]


def _multiplier_jets(e: Expr) -> list[JetAtom]:
    return sorted(a for a in atoms(e) if a.kind == Kind.MULTIPLIER)


def _bases(e: Expr) -> list[JetAtom]:
    return sorted({a.base for a in _multiplier_jets(e)}, key=_mult_key)


def _mult_key(a: JetAtom) -> tuple:
    prefix = 0 if a.name.startswith("lam") else 1
    return prefix, int(a.name.lstrip("lamu"))


def _jet_bindings(base: JetAtom, value: Expr, e: Expr) -> dict[JetAtom, Expr]:
    return {a: total_dx(value, a.x_order) for a in atoms(e)
            if a.kind == Kind.MULTIPLIER and a.name == base.name}


def _is_affine(eq: Expr) -> bool:
    jets = _multiplier_jets(eq)
    for a in jets:
        c = partial_diff(eq, a)
        if any(b.kind == Kind.MULTIPLIER for b in atoms(c)):
            return False
    return True


def solve_multiplier_equations(
    equations: list[Expr],
    unknowns: list[JetAtom],
    reducer: ConstraintReducer,
) -> Solution:
    """Solve a linear system in multipliers and their x-derivatives.

    Strategy, repeated until no equation is left: solve for a multiplier that
    appears undifferentiated only (Gaussian pivot); set the sole multiplier of
    a homogeneous equation to zero; integrate exact equations once.  Whatever
    remains defines its multiplier implicitly through a differential equation.
    """
    eqs = [reducer.reduce(e) for e in equations]
    explicit: dict[JetAtom, Expr] = {}
    implicit: dict[JetAtom, Expr] = {}
    leftovers: list[Expr] = []

    def assign(base: JetAtom, value: Expr) -> None:
        nonlocal eqs
        value = reducer.reduce(value)
        for k, v in list(explicit.items()):
            explicit[k] = reducer.reduce(substitute(v, _jet_bindings(base, value, v)))
        explicit[base] = value
        eqs = [reducer.reduce(substitute(e, _jet_bindings(base, value, e))) for e in eqs]

    for _ in range(10 * max(1, len(eqs)) + 10):
        eqs = [e for e in eqs if e != 0]
        for e in [e for e in eqs if not _multiplier_jets(e)]:
            eqs.remove(e)
            if e.is_Number:
                raise InconsistentDynamics(f"inconsistent dynamics: {e} = 0")
            leftovers.append(e)
        if not eqs:
            break
        for e in eqs:
            if not _is_affine(e):
                raise DBAError(f"consistency condition is nonlinear in multipliers: {to_text(e)}")
        step = _pick_pivot(eqs)
        if step is not None:
            i, base, coeff = step
            e = eqs.pop(i)
            if coeff.free_symbols:
                reducer.note_assumption(coeff)
            assign(base, normalize(base.symbol - e / coeff))
            continue
        step = _pick_homogeneous(eqs)
        if step is not None:
            i, base = step
            eqs.pop(i)
            log.info("homogeneous equation for %s: taking the trivial solution", base.text)
            assign(base, sympy.Integer(0))
            continue
        progressed = False
        for i, e in enumerate(eqs):
            if all(a.x_order > 0 for a in _multiplier_jets(e)):
                try:
                    eqs[i] = reducer.reduce(integrate_dx(e))
                    progressed = True
                    break
                except NotExact:
                    pass
        if progressed:
            continue
        single = [(i, e) for i, e in enumerate(eqs) if len(_bases(e)) == 1]
        if single:
            i, e = single[0]
            base = _bases(e)[0]
            implicit[base] = e
            eqs.pop(i)
            continue
        for e in eqs:
            base = _bases(e)[0]
            implicit.setdefault(base, e)
        break
    solved = set(explicit) | set(implicit)
    free = [u for u in unknowns if u not in solved]
    return Solution(explicit, implicit, free, leftovers)


def _pick_pivot(eqs: list[Expr]):
    best = None
    for i, e in enumerate(eqs):
        bases = _bases(e)
        for base in bases:
            jets = [a for a in _multiplier_jets(e) if a.name == base.name]
            if any(a.x_order for a in jets):
                continue
            coeff = partial_diff(e, base)
            key = (len(bases), bool(coeff.free_symbols), _mult_key(base), i)
            if best is None or key < best[0]:
                best = (key, (i, base, coeff))
    return best[1] if best else None


def _pick_homogeneous(eqs: list[Expr]):
    for i, e in enumerate(eqs):
        bases = _bases(e)
        if len(bases) != 1:
            continue
        rest = substitute(e, {a: 0 for a in _multiplier_jets(e)})
        if rest == 0:
            return i, bases[0]
    return None


# --- the consistency loop --------------------------------------------------------

def _strip_content(e: Expr, reducer: ConstraintReducer) -> Expr:
    """Drop denominators and monomial factors of undifferentiated fields."""
    num, den = sympy.fraction(normalize(e))
    if den.free_symbols:
        reducer.note_assumption(den)
    gens = [s for s in num.free_symbols
            if (a := atom_of(s)).kind == Kind.FIELD and a.x_order == 0 and not a.t_order]
    if gens:
        poly = sympy.Poly(num, *gens)
        mins = [min(m[i] for m in poly.monoms()) for i in range(len(gens))]
        mono = sympy.Mul(*[g ** k for g, k in zip(gens, mins)])
        if mono != 1:
            reducer.note_assumption(mono)
            num = normalize(num / mono)
    return normalize(num)


def run_consistency_loop(
    spec: LagrangianSpec,
    h_l: Expr,
    constraints: list[Constraint],
    max_iter: int = 10,
) -> AnalysisReport:
    if not constraints:
        raise ValueError("constraint list is empty")
    reducer = ConstraintReducer(spec.fields)
    for c in constraints:
        if c.generation == 1:
            name = _momentum_name(c)
            reducer.add_primary(name, JetAtom(Kind.MOMENTUM, name).symbol - c.density)
    constraints = list(constraints)
    n_secondary = sum(1 for c in constraints if c.generation > 1)
    iterations = 0
    notes: list[str] = []
    while True:
        iterations += 1
        if iterations > max_iter:
            raise NoClosure(f"no closure after {max_iter} iterations")
        total = h_l + sympy.Add(*[c.multiplier.symbol * c.density for c in constraints])
        equations: list[Expr] = []
        new: list[Constraint] = []
        for c in constraints:
            gamma = reducer.reduce(poisson_with_hamiltonian(c.density, total))
            if gamma == 0:
                continue
            if _multiplier_jets(gamma):
                equations.append(gamma)
                continue
            if gamma.is_Number:
                raise InconsistentDynamics(f"inconsistent dynamics: {gamma} = 0 from {c.label}")
            density = _strip_content(gamma, reducer)
            n_secondary += 1
            nc = Constraint(f"ct{n_secondary}", c.generation + 1, density,
                            JetAtom(Kind.MULTIPLIER, f"mu{n_secondary}"))
            log.info("%s: bracket of %s yields new constraint %s", nc.label, c.label, to_text(density))
            if reducer.orient(density) is None:
                notes.append(f"{nc.label} could not be oriented for reduction")
            new.append(nc)
        if new:
            constraints.extend(new)
            continue
        unknowns = [c.multiplier for c in constraints]
        sol = solve_multiplier_equations(equations, unknowns, reducer)
        if sol.leftovers:
            for gamma in sol.leftovers:
                density = _strip_content(gamma, reducer)
                n_secondary += 1
                gen = max(c.generation for c in constraints) + 1
                nc = Constraint(f"ct{n_secondary}", gen, density, JetAtom(Kind.MULTIPLIER, f"mu{n_secondary}"))
                reducer.orient(density)
                constraints.append(nc)
            continue
        break
    for base, eq in sol.implicit.items():
        notes.append(f"{base.text} is fixed by the differential equation {to_text(eq)} = 0")
    if sol.free:
        notes.append("undetermined multipliers: " + ", ".join(a.text for a in sol.free))
    return _assemble(spec, h_l, constraints, sol, reducer, iterations, notes)


def _momentum_name(c: Constraint) -> str:
    names = [a.name for a in atoms(c.density) if a.kind == Kind.MOMENTUM]
    return names[0]


def _assemble(spec, h_l, constraints, sol: Solution, reducer, iterations, notes) -> AnalysisReport:
    total = normalize(h_l + sympy.Add(*[c.multiplier.symbol * c.density for c in constraints]))
    for base, value in sol.explicit.items():
        total = substitute(total, _jet_bindings(base, value, total))
    hess, rank = hessian_and_rank(spec)
    report = AnalysisReport(
        fields=spec.fields,
        lagrangian=spec.density,
        hessian=hess,
        rank=rank,
        constraints=constraints,
        multiplier_solution=dict(sorted(sol.explicit.items(), key=lambda kv: _mult_key(kv[0]))),
        implicit_multipliers=sol.implicit,
        free_multipliers=sol.free,
        assumptions=list(reducer.assumptions),
        canonical_h=h_l,
        total_h=total,
        hamilton_eoms={},
        lagrangian_eoms={f: euler_op(spec.density, f) for f in spec.fields},
        iterations=iterations,
        reducer=reducer,
        notes=notes,
    )
    if not sol.free:
        report.hamilton_eoms = hamilton_eoms(report)
    return report


def hamilton_eoms(report: AnalysisReport) -> dict[JetAtom, Expr]:
    """Velocities of fields and momenta generated by the total Hamiltonian."""
    if report.free_multipliers:
        names = ", ".join(a.text for a in report.free_multipliers)
        raise UndeterminedMultipliers(f"undetermined multipliers remain: {names}")
    out = {}
    for f in report.fields:
        fa = JetAtom(Kind.FIELD, f)
        pa = JetAtom(Kind.MOMENTUM, f)
        out[fa.dt()] = report.on_surface(euler_op(report.total_h, pa))
        out[pa.dt()] = report.on_surface(-euler_op(report.total_h, fa))
    return out


def lagrangian_check_residuals(report: AnalysisReport) -> dict[str, Expr]:
    """Each Lagrangian EOM evaluated along the Hamiltonian flow on the surface."""
    out = {}
    for f, e in report.lagrangian_eoms.items():
        bindings = {}
        for a in atoms(e):
            if a.t_order:
                v = report.hamilton_eoms[JetAtom(a.kind, a.name, 0, 1)]
                bindings[a] = total_dx(v, a.x_order)
        out[f] = report.on_surface(substitute(e, bindings))
    return out


def cross_check_lagrangian(spec: LagrangianSpec, report: AnalysisReport) -> bool:
    if normalize(spec.density - report.lagrangian) != 0:
        raise ValueError("report was produced from a different Lagrangian")
    return all(r == 0 for r in lagrangian_check_residuals(report).values())


def analyze(spec: LagrangianSpec, max_iter: int = 10) -> AnalysisReport:
    constraints = primary_constraints(spec)
    return run_consistency_loop(spec, canonical_hamiltonian(spec), constraints, max_iter)


def with_multipliers(report: AnalysisReport, overrides: Mapping[JetAtom, Any]) -> AnalysisReport:
    """Copy of ``report`` with some multiplier values replaced (for mutation tests)."""
    solution = dict(report.multiplier_solution)
    solution.update({k: normalize(v) for k, v in overrides.items()})
    total = normalize(report.canonical_h + sympy.Add(
        *[c.multiplier.symbol * c.density for c in report.constraints]))
    for base, value in solution.items():
        total = substitute(total, _jet_bindings(base, value, total))
    out = replace(report, multiplier_solution=solution, total_h=total, hamilton_eoms={})
    out.hamilton_eoms = hamilton_eoms(out)
    return out


# --- serialization -------------------------------------------------------------------

def _expr_entry(e: Expr) -> dict:
    return {"text": to_text(e), "latex": to_latex(e), "tree": to_tree(e)}


def report_to_dict(report: AnalysisReport) -> dict:
    return {
        "fields": list(report.fields),
        "hessian": [[_expr_entry(x) for x in row] for row in report.hessian],
        "rank": report.rank,
        "constraints": [
            {"label": c.label, "generation": c.generation_name,
             "multiplier": c.multiplier.text, "density": _expr_entry(c.density)}
            for c in report.constraints
        ],
        "multipliers": {a.text: _expr_entry(v) for a, v in report.multiplier_solution.items()},
        "implicit_multipliers": {a.text: _expr_entry(v) for a, v in report.implicit_multipliers.items()},
        "free_multipliers": [a.text for a in report.free_multipliers],
        "assumptions": [_expr_entry(a) for a in report.assumptions],
        "canonical_hamiltonian": _expr_entry(report.canonical_h),
        "total_hamiltonian": _expr_entry(report.total_h),
        "hamilton_eoms": {a.text: _expr_entry(v) for a, v in report.hamilton_eoms.items()},
        "lagrangian_eoms": {f: _expr_entry(v) for f, v in report.lagrangian_eoms.items()},
        "iterations": report.iterations,
        "notes": list(report.notes),
    }
