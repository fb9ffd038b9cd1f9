"""Pseudo-spectral evaluation and time stepping of symbolic field equations.

Jets are produced by Fourier differentiation on a periodic grid.  Expressions
are compiled into closures over numpy arrays; with ``dealias=True`` every
nonlinear product is passed through the 2/3-rule filter.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np
import sympy

from .dba import AnalysisReport
from .expr import Expr, JetAtom, Kind, atom_of, atoms, normalize
from .parser import LagrangianSpec
from .varcalc import total_dx

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


class CompileError(NumericError):
    pass


class EvolutionError(NumericError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} at step {step}")
        self.step = step


@dataclass(frozen=True)
class Grid:
    """Periodic grid on [0, length).

    Nonlinear products are filtered with the 2/3 rule; ``cutoff`` lowers the
    largest retained wavenumber further (see :func:`polar_cutoff`).
    """

    n: int
    length: float = 2 * math.pi
    cutoff: float | None = None

    def __post_init__(self):
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError("grid size must be a power of two >= 16")
        if self.length <= 0:
            raise ValueError("domain length must be positive")
        if self.cutoff is not None and self.cutoff <= 0:
            raise ValueError("cutoff must be positive")

    @functools.cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.n) * (self.length / self.n)

    @property
    def dx(self) -> float:
        return self.length / self.n

    @functools.cached_property
    def k(self) -> np.ndarray:
        return 2 * np.pi * np.fft.rfftfreq(self.n, d=self.dx)

    @functools.cached_property
    def _keep(self) -> np.ndarray:
        keep = np.arange(self.k.size) < self.n / 3
        if self.cutoff is not None:
            keep &= self.k <= self.cutoff
        return keep

    def deriv(self, f: np.ndarray, order: int = 1) -> np.ndarray:
        if order == 0:
            return f
        mult = (1j * self.k) ** order
        if order % 2:
            mult[-1] = 0.0  # Nyquist mode has no odd derivative
        return np.fft.irfft(mult * np.fft.rfft(f), n=self.n)

    def dealias(self, f: np.ndarray) -> np.ndarray:
        return np.fft.irfft(np.fft.rfft(f) * self._keep, n=self.n)

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.dx)


@dataclass
class FieldState:
    """Sampled seed jets keyed by jet text (``phi``, ``theta_x``, ``phi_t``)."""

    values: dict[str, np.ndarray]
    time: float = 0.0

    def check(self, grid: Grid) -> None:
        for k, v in self.values.items():
            if v.shape != (grid.n,):
                raise ValueError(f"{k}: expected {grid.n} samples, got {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{k}: non-finite samples")


def _bell(w: list[np.ndarray], n: int) -> np.ndarray:
    """Complete Bell polynomial Y_n(w[1], ..., w[n]) so that D^n e^u = e^u Y_n."""
    y = [np.ones_like(w[0])]
    for m in range(n):
        y.append(sum(math.comb(m, i) * y[m - i] * w[i + 1] for i in range(m + 1)))
    return y[n]


class _Jets:
    """Lazily differentiated jets of the seed arrays.

    A seed keyed ``ln(f)`` stores the logarithm of a positive field; jets of
    ``f`` are then rebuilt from derivatives of the logarithm, which keeps
    quotients such as ``f_xxx/f`` accurate where ``f`` is tiny.
    """

    def __init__(self, grid: Grid, seeds: Mapping[str, np.ndarray]):
        self.grid = grid
        self.logs: dict[str, list[np.ndarray]] = {}
        self.seeds: dict[JetAtom, np.ndarray] = {}
        for k, v in seeds.items():
            v = np.asarray(v, dtype=float)
            if k.startswith("ln(") and k.endswith(")"):
                self.logs[k[3:-1]] = [v]
            else:
                self.seeds[atom_of(sympy.Symbol(k))] = v
        self.cache: dict[JetAtom, np.ndarray] = dict(self.seeds)

    def __call__(self, a: JetAtom) -> np.ndarray:
        if a in self.cache:
            return self.cache[a]
        if a.kind == Kind.FIELD and a.name in self.logs and not a.t_order:
            w = self.logs[a.name]
            while len(w) <= a.x_order:
                w.append(self.grid.deriv(w[0], len(w)))
            out = np.exp(w[0])
            if a.x_order:
                out = out * _bell(w, a.x_order)
            self.cache[a] = out
            return out
        lower = [s for s in self.seeds
                 if (s.kind, s.name, s.t_order) == (a.kind, a.name, a.t_order) and s.x_order < a.x_order]
        if not lower:
            raise NumericError(f"no samples for jet {a.text}")
        s = max(lower, key=lambda s: s.x_order)
        out = self.grid.deriv(self.seeds[s], a.x_order - s.x_order)
        self.cache[a] = out
        return out


Node = Callable[[_Jets], np.ndarray]


class Evaluator:
    """Pointwise evaluator of one expression on a grid."""

    def __init__(self, e: Expr, grid: Grid, dealias: bool = False, allow: Iterable[Kind] = (Kind.FIELD,)):
        self.expr = normalize(e)
        self.grid = grid
        self.dealias = dealias
        allow = set(allow)
        for a in atoms(self.expr):
            if a.kind not in allow:
                raise CompileError(f"cannot compile {a.kind.name.lower()} atom {a.text}")
        # distribute numerators so each term keeps only its own denominator
        self._root = self._build(sympy.expand(self.expr))

    def __call__(self, state: FieldState | Mapping[str, np.ndarray] | _Jets) -> np.ndarray:
        if isinstance(state, _Jets):
            jets = state
        else:
            values = state.values if isinstance(state, FieldState) else state
            jets = _Jets(self.grid, values)
        out = self._root(jets)
        return np.broadcast_to(out, (self.grid.n,)).astype(float, copy=True)

    def _mul(self, a: np.ndarray, b: np.ndarray, filtered: bool = True) -> np.ndarray:
        out = a * b
        if filtered and self.dealias and np.ndim(out):
            out = self.grid.dealias(out)
        return out

    @staticmethod
    def _nonzero(v):
        bad = np.flatnonzero(np.asarray(v) == 0)
        if bad.size:
            raise NumericError(f"division by zero at index {int(bad[0])}")
        return v

    def _build(self, e: Expr, filtered: bool = True) -> Node:
        """Closure evaluating ``e``; ``filtered=False`` switches off dealiasing
        below this node (used for quotients, where the filter's absolute
        round-off would be amplified by a small denominator)."""
        if isinstance(e, sympy.Symbol):
            a = atom_of(e)
            return lambda jets: jets(a)
        if isinstance(e, sympy.Rational):
            c = float(e)
            return lambda jets: c
        if isinstance(e, sympy.Add):
            kids = [self._build(x, filtered) for x in e.args]
            return lambda jets: sum(k(jets) for k in kids)
        if isinstance(e, sympy.Mul):
            # denominators are applied pointwise, and a quotient is not filtered
            quotient = any(x.is_Pow and x.exp < 0 for x in e.args)
            filtered = filtered and not quotient
            num = [self._build(x, filtered) for x in e.args if not (x.is_Pow and x.exp < 0)]
            den = [(self._build(x.base, False), -int(x.exp)) for x in e.args if x.is_Pow and x.exp < 0]

            def mul(jets):
                scalars = 1.0
                arrays = []
                for k in num:
                    v = k(jets)
                    if np.ndim(v):
                        arrays.append(v)
                    else:
                        scalars *= v
                out = scalars
                if arrays:
                    out = arrays[0]
                    for v in arrays[1:]:
                        out = self._mul(out, v, filtered)
                    out = scalars * out
                for k, n in den:
                    out = out / self._nonzero(k(jets) ** n)
                return out
            return mul
        if isinstance(e, sympy.Pow):
            n = int(e.exp)
            base = self._build(e.base, filtered)

            def power(jets):
                b = base(jets)
                out = b
                for _ in range(n - 1):
                    out = self._mul(out, b, filtered)
                if n < 0:
                    return 1.0 / self._nonzero(b ** -n)
                return out
            return power
        if isinstance(e, sympy.log):
            arg = self._build(e.args[0], filtered)

            def ln(jets):
                v = arg(jets)
                bad = np.flatnonzero(np.asarray(v) <= 0)
                if bad.size:
                    raise NumericError(f"ln of non-positive sample at index {int(bad[0])}")
                return np.log(v)
            return ln
        raise CompileError(f"unsupported node {type(e).__name__}")


def compile(e: Expr, grid: Grid, dealias: bool = False) -> Evaluator:  # noqa: A001
    return Evaluator(e, grid, dealias=dealias)


# --- symbolic vs. Lagrangian verification ------------------------------------------

@dataclass
class Comparison:
    label: str
    lagrangian_side: Expr
    hamilton_side: Expr


@dataclass
class EquivalenceResult:
    max_rel_error: float
    tol: float
    per_check: dict[str, float]
    skipped: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def eom_comparisons(report: AnalysisReport) -> tuple[list[Comparison], list[str]]:
    """Pair each Lagrangian EOM with its Hamiltonian counterpart on the surface.

    A Lagrangian EOM with a single time jet is solved for it and compared with
    the matching x-derivative of the Hamiltonian velocity.  One without time
    jets is a constraint and must vanish on the surface.
    """
    out, skipped = [], []
    for f, e in report.lagrangian_eoms.items():
        e = report.on_surface(e)
        tjets = sorted(a for a in atoms(e) if a.t_order)
        if not tjets:
            out.append(Comparison(f"{f}: constraint", e, sympy.Integer(0)))
            continue
        if len(tjets) > 1:
            skipped.append(f"{f}: several time jets")
            continue
        tau = tjets[0]
        coeff = normalize(sympy.diff(e, tau.symbol))
        lag = normalize(tau.symbol - e / coeff)
        ham = total_dx(report.hamilton_eoms[JetAtom(tau.kind, tau.name, 0, 1)], tau.x_order)
        if any(a.kind == Kind.MULTIPLIER for a in atoms(ham)):
            skipped.append(f"{tau.text}: implicit multiplier")
            continue
        out.append(Comparison(tau.text, lag, ham))
    return out, skipped


def random_fields(grid: Grid, names: Iterable[str], rng: np.random.Generator,
                  modes: int = 4, offset: float = 1.5, amplitude: float = 0.125) -> dict[str, np.ndarray]:
    """Band-limited periodic samples bounded below by offset - 2*modes*amplitude."""
    out = {}
    phase = 2 * np.pi * grid.x / grid.length
    for name in names:
        a = rng.uniform(-amplitude, amplitude, size=(2, modes))
        f = np.full(grid.n, offset)
        for m in range(modes):
            f += a[0, m] * np.cos((m + 1) * phase) + a[1, m] * np.sin((m + 1) * phase)
        out[name] = f
    return out


def check_eom_equivalence(spec: LagrangianSpec, report: AnalysisReport, grid: Grid,
                          seed: int = 42, tol: float = 1e-8, samples: int = 20) -> EquivalenceResult:
    if normalize(spec.density - report.lagrangian) != 0:
        raise ValueError("report was produced from a different Lagrangian")
    comparisons, skipped = eom_comparisons(report)
    compiled = [(c.label, compile(c.lagrangian_side, grid), compile(c.hamilton_side, grid))
                for c in comparisons]
    guards = [compile(a, grid) for a in report.assumptions]
    rng = np.random.default_rng(seed)
    per: dict[str, float] = {c.label: 0.0 for c in comparisons}
    for _ in range(samples):
        for attempt in range(10):
            jets = _Jets(grid, random_fields(grid, report.fields, rng))
            if all(np.min(np.abs(g(jets))) > 1e-6 for g in guards):
                break
        else:
            raise NumericError("could not sample fields away from the recorded assumptions")
        for label, lag, ham in compiled:
            lv, hv = lag(jets), ham(jets)
            err = float(np.max(np.abs(lv - hv)) / max(1.0, float(np.max(np.abs(lv)))))
            per[label] = max(per[label], err)
    worst = max(per.values(), default=0.0)
    return EquivalenceResult(worst, tol, per, skipped)


def residual(report: AnalysisReport, analytic_fields: Mapping[str, np.ndarray], grid: Grid) -> float:
    """Largest |Lagrangian EOM| on sampled data that includes time derivatives."""
    jets = _Jets(grid, analytic_fields)
    worst = 0.0
    for e in report.lagrangian_eoms.values():
        ev = Evaluator(e, grid)
        worst = max(worst, float(np.max(np.abs(ev(jets)))))
    return worst


# --- time evolution -------------------------------------------------------------------

@dataclass(frozen=True)
class Variable:
    """An evolved quantity: a field, its gradient, or its logarithm."""

    field: str
    mode: str  # "value", "gradient" or "log"

    @property
    def key(self) -> str:
        if self.mode == "gradient":
            return JetAtom(Kind.FIELD, self.field, 1).text
        if self.mode == "log":
            return f"ln({self.field})"
        return self.field

    @property
    def public_key(self) -> str:
        return self.field if self.mode == "log" else self.key


@dataclass
class EvolutionSystem:
    report: AnalysisReport
    grid: Grid
    variables: list[Variable]
    rhs: dict[Variable, Evaluator]
    monitors: dict[str, Evaluator]

    def tendency(self, values: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        jets = _Jets(self.grid, values)
        return {v.key: self.grid.dealias(self.rhs[v](jets)) for v in self.variables}

    def measure(self, values: Mapping[str, np.ndarray]) -> dict[str, float]:
        jets = _Jets(self.grid, values)
        return {name: self.grid.integrate(ev(jets)) for name, ev in self.monitors.items()}

    def internal(self, values: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        out = {}
        for v in self.variables:
            if v.public_key not in values:
                raise ValueError(f"initial data lacks {v.public_key}")
            a = np.asarray(values[v.public_key], dtype=float).copy()
            if v.mode == "log":
                bad = np.flatnonzero(a <= 0)
                if bad.size:
                    raise NumericError(f"{v.field} must stay positive (index {int(bad[0])})")
                a = np.log(a)
            out[v.key] = a
        return out

    def external(self, values: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {v.public_key: np.exp(values[v.key]) if v.mode == "log" else values[v.key].copy()
                for v in self.variables}


def polar_cutoff(t_end: float, budget: float = 25.0) -> float:
    """Largest wavenumber to keep when an amplitude is evolved as a logarithm.

    Where the amplitude decays like exp(-|x|), perturbations of (ln f, theta_x)
    at wavenumber k grow like exp(2 k t).  Keeping k <= budget / (2 t_end)
    bounds the amplification of round-off by exp(budget).
    """
    return budget / (2 * max(t_end, 1e-12))


def _singular_fields(e: Expr) -> set[str]:
    """Fields that occur in a denominator or under a logarithm."""
    names = {a.name for a in atoms(sympy.fraction(e)[1])}
    for node in sympy.preorder_traversal(e):
        if isinstance(node, sympy.log):
            names |= {a.name for a in atoms(node)}
    return names


def build_system(report: AnalysisReport, grid: Grid, dealias: bool = True) -> EvolutionSystem:
    """Method-of-lines system for the independent fields of ``report``.

    Fields eliminated by a constraint are not evolved.  A field entering every
    equation only through x-derivatives is evolved as its first derivative,
    and a field that is divided by or sits under a logarithm is evolved as its
    logarithm (it has to stay positive anyway).
    """
    eliminated = {r.target.name for r in report.reducer.rules
                  if r.target.kind == Kind.FIELD and r.target.x_order == 0}
    awkward = [r.target.text for r in report.reducer.rules
               if r.target.kind == Kind.FIELD and r.target.x_order > 0]
    if awkward:
        raise EvolutionError("constraints fixing derivative jets (" + ", ".join(awkward)
                             + ") have no explicit evolution")
    free = [f for f in report.fields if f not in eliminated]
    rhs_sym = {f: report.hamilton_eoms[JetAtom(Kind.FIELD, f, 0, 1)] for f in free}
    for f, r in rhs_sym.items():
        if any(a.kind != Kind.FIELD for a in atoms(r)):
            raise EvolutionError(f"velocity of {f} depends on unresolved multipliers")
    energy = report.on_surface(report.canonical_h)
    exprs = list(rhs_sym.values()) + [energy]
    singular = set().union(*(_singular_fields(e) for e in exprs))
    variables, rhs = [], {}
    for f in free:
        if all(a.x_order > 0 for e in exprs for a in atoms(e) if a.name == f):
            var, r = Variable(f, "gradient"), total_dx(rhs_sym[f])
        elif f in singular:
            var, r = Variable(f, "log"), normalize(rhs_sym[f] / JetAtom(Kind.FIELD, f).symbol)
        else:
            var, r = Variable(f, "value"), rhs_sym[f]
        rhs[var] = Evaluator(r, grid, dealias=dealias)
        variables.append(var)
    first = variables[0]
    mass = (JetAtom(Kind.FIELD, first.field, 1) if first.mode == "gradient"
            else JetAtom(Kind.FIELD, first.field)).symbol ** 2
    monitors = {
        "mass": Evaluator(mass, grid),
        "hamiltonian": Evaluator(energy, grid),
    }
    return EvolutionSystem(report, grid, variables, rhs, monitors)


@dataclass
class Trajectory:
    times: np.ndarray
    monitors: dict[str, np.ndarray]
    final: FieldState
    snapshots: list[FieldState]
    steps: int

    def relative_drift(self, name: str) -> float:
        series = self.monitors[name]
        ref = abs(series[0]) if series[0] != 0 else 1.0
        return float(np.max(np.abs(series - series[0])) / ref)

    def to_csv(self) -> str:
        names = list(self.monitors)
        lines = [",".join(["t", *names])]
        for i, t in enumerate(self.times):
            lines.append(",".join([f"{t:.10g}", *(f"{self.monitors[n][i]:.16e}" for n in names)]))
        return "\n".join(lines) + "\n"


def evolve(system: EvolutionSystem, initial: FieldState | Mapping[str, np.ndarray], dt: float,
           t_end: float, monitor_every: int = 1, snapshot_times: Iterable[float] = (),
           blowup: float = 1e6) -> Trajectory:
    """Classical four-stage Runge-Kutta in time.

    ``initial`` is keyed like the evolved variables (``phi``, ``theta_x``, ...);
    the returned states use the same keys.
    """
    if dt <= 0 or t_end < 0:
        raise ValueError("need dt > 0 and t_end >= 0")
    t = initial.time if isinstance(initial, FieldState) else 0.0
    values = system.internal(initial.values if isinstance(initial, FieldState) else initial)
    names = list(values)
    limit = blowup * (1.0 + max(float(np.max(np.abs(v))) for v in values.values()))
    nsteps = int(round((t_end - t) / dt))
    pending = sorted(snapshot_times)
    times, series = [t], {k: [v] for k, v in system.measure(values).items()}
    snaps = []

    def axpy(a, u, s):
        return {n: u[n] + a * s[n] for n in names}

    for step in range(1, nsteps + 1):
        try:
            with np.errstate(over="raise", invalid="raise", divide="raise", under="ignore"):
                k1 = system.tendency(values)
                k2 = system.tendency(axpy(dt / 2, values, k1))
                k3 = system.tendency(axpy(dt / 2, values, k2))
                k4 = system.tendency(axpy(dt, values, k3))
        except (NumericError, FloatingPointError) as exc:
            raise EvolutionError(str(exc), step) from exc
        values = {n: values[n] + dt / 6 * (k1[n] + 2 * k2[n] + 2 * k3[n] + k4[n]) for n in names}
        t += dt
        for n, v in values.items():
            if not np.all(np.isfinite(v)):
                raise EvolutionError(f"non-finite values in {n}", step)
            if np.max(np.abs(v)) > limit:
                raise EvolutionError(f"{n} grew beyond {limit:.3g}", step)
        if step % monitor_every == 0 or step == nsteps:
            times.append(t)
            for k, v in system.measure(values).items():
                series[k].append(v)
        while pending and t >= pending[0] - dt / 2:
            pending.pop(0)
            snaps.append(FieldState(system.external(values), t))
    return Trajectory(np.array(times), {k: np.array(v) for k, v in series.items()},
                      FieldState(system.external(values), t), snaps, nsteps)


def snapshot_csv(grid: Grid, state: FieldState) -> str:
    names = list(state.values)
    lines = [",".join(["x", *names])]
    for i, x in enumerate(grid.x):
        lines.append(",".join([f"{x:.10g}", *(f"{state.values[n][i]:.16e}" for n in names)]))
    return "\n".join(lines) + "\n"
