"""Canonical symbolic expressions over jet variables.

Expressions are plain sympy objects restricted to rational constants, jet
symbols, sums, products, integer powers and ``log``.  Every jet symbol encodes
a :class:`JetAtom` in its name, so an expression can always be mapped back to
the atoms it contains.  Canonical form is the reduced rational function
produced by :func:`sympy.cancel`, with ``log(u)`` kept as an opaque generator.
"""

from __future__ import annotations

import enum
import functools
import json
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Mapping

import sympy
from sympy.printing.str import StrPrinter

Expr = sympy.Expr

GREEK = {
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
    "iota", "kappa", "lambda", "mu", "nu", "xi", "rho", "sigma", "tau",
    "upsilon", "phi", "chi", "psi", "omega",
}

_MULTIPLIER_RE = re.compile(r"^(lam|mu)[0-9]+$")
_SYMBOL_RE = re.compile(r"^(pi_)?([A-Za-z][A-Za-z0-9]*)(?:_(x*)(t?))?$")


class Kind(enum.IntEnum):
    FIELD = 0
    MOMENTUM = 1
    MULTIPLIER = 2


class SymbolicZeroDivision(ZeroDivisionError):
    pass


@dataclass(frozen=True, order=True)
class JetAtom:
    """A field, momentum or multiplier tagged with its derivative orders.

    Ordering is kind first, then name, x_order, t_order.
    """

    kind: Kind
    name: str
    x_order: int = 0
    t_order: int = 0

    def __post_init__(self) -> None:
        if self.x_order < 0:
            raise ValueError("x_order must be non-negative")
        if self.t_order not in (0, 1):
            raise ValueError("t_order must be 0 or 1")
        if self.kind == Kind.MULTIPLIER:
            if self.t_order:
                raise ValueError("multipliers carry no time derivative")
            if not _MULTIPLIER_RE.match(self.name):
                raise ValueError(f"bad multiplier name {self.name!r}")
        elif not is_valid_field_name(self.name):
            raise ValueError(f"bad field name {self.name!r}")

    @property
    def text(self) -> str:
        base = "pi_" + self.name if self.kind == Kind.MOMENTUM else self.name
        suffix = "x" * self.x_order + "t" * self.t_order
        return f"{base}_{suffix}" if suffix else base

    @property
    def symbol(self) -> sympy.Symbol:
        return _symbol(self.text)

    @property
    def base(self) -> JetAtom:
        return JetAtom(self.kind, self.name)

    def dx(self, n: int = 1) -> JetAtom:
        return JetAtom(self.kind, self.name, self.x_order + n, self.t_order)

    def dt(self) -> JetAtom:
        if self.t_order:
            raise ValueError(f"{self.text} already carries a time derivative")
        return JetAtom(self.kind, self.name, self.x_order, 1)

    def latex(self) -> str:
        name = "\\" + self.name if self.name in GREEK else self.name
        if self.kind == Kind.MOMENTUM:
            name = f"\\pi_{{{name}}}"
        elif self.kind == Kind.MULTIPLIER:
            m = re.match(r"(lam|mu)([0-9]+)", self.name)
            name = (r"\lambda_{%s}" if m.group(1) == "lam" else r"\tilde{\lambda}_{%s}") % m.group(2)
        if self.x_order == 0 and not self.t_order:
            return name
        xs = "x" * self.x_order if self.x_order < 3 else f"{self.x_order}x"
        sub = xs + ("t" if self.t_order else "")
        if self.kind == Kind.FIELD:
            return f"{name}_{{{sub}}}"
        return f"\\left({name}\\right)_{{{sub}}}"


def is_valid_field_name(name: str) -> bool:
    return (
        re.fullmatch(r"[A-Za-z][A-Za-z0-9]*", name) is not None
        and not _MULTIPLIER_RE.match(name)
        and name not in {"pi", "ln", "Dx", "Dt", "L", "fields"}
    )


@functools.lru_cache(maxsize=None)
def _symbol(text: str) -> sympy.Symbol:
    return sympy.Symbol(text)


def field(name: str, x: int = 0, t: int = 0) -> JetAtom:
    return JetAtom(Kind.FIELD, name, x, t)


def momentum(name: str, x: int = 0) -> JetAtom:
    return JetAtom(Kind.MOMENTUM, name, x)


def multiplier(name: str, x: int = 0) -> JetAtom:
    return JetAtom(Kind.MULTIPLIER, name, x)


@functools.lru_cache(maxsize=None)
def atom_of(sym: sympy.Symbol) -> JetAtom:
    m = _SYMBOL_RE.match(sym.name)
    if m is None:
        raise ValueError(f"{sym.name!r} is not a jet symbol")
    pi, name, xs, ts = m.groups()
    x, t = len(xs or ""), int(bool(ts))
    if pi:
        return JetAtom(Kind.MOMENTUM, name, x, t)
    if _MULTIPLIER_RE.match(name):
        return JetAtom(Kind.MULTIPLIER, name, x, t)
    return JetAtom(Kind.FIELD, name, x, t)


def atoms(e: Expr) -> set[JetAtom]:
    return {atom_of(s) for s in e.free_symbols}


def sorted_atoms(e: Expr) -> list[JetAtom]:
    return sorted(atoms(e))


# --- canonical form -------------------------------------------------------

_ALLOWED = (sympy.Add, sympy.Mul, sympy.Pow, sympy.log, sympy.Symbol, sympy.Rational)


def _check_domain(e: Expr) -> None:
    for node in sympy.preorder_traversal(e):
        if node in (sympy.zoo, sympy.oo, -sympy.oo, sympy.nan):
            raise SymbolicZeroDivision("symbolic division by zero")
        if not isinstance(node, _ALLOWED):
            raise TypeError(f"unsupported node {type(node).__name__} in {e}")
        if isinstance(node, sympy.Pow) and not node.exp.is_Integer:
            raise TypeError(f"non-integer exponent in {node}")


def _prepare(e: Expr) -> Expr:
    """Normalize log arguments and reject zero denominators, bottom-up."""
    if e.is_Atom:
        return e
    args = [_prepare(a) for a in e.args]
    if isinstance(e, sympy.log):
        arg = sympy.cancel(args[0])
        if arg == 0:
            raise SymbolicZeroDivision("symbolic division by zero")
        return sympy.log(arg)
    if isinstance(e, sympy.Pow) and e.exp.is_negative:
        if sympy.cancel(args[0]) == 0:
            raise SymbolicZeroDivision("symbolic division by zero")
    return e.func(*args)


def normalize(e: Any) -> Expr:
    """Return the canonical form of ``e``; ``is_zero`` iff this is ``0``."""
    e = sympy.sympify(e)
    if e.is_Atom:
        _check_domain(e)
        return e
    _check_domain(e)
    if e.has(sympy.log):
        e = _prepare(e)
    elif any(isinstance(p, sympy.Pow) and p.exp.is_negative and p.base.is_Add
             for p in sympy.preorder_traversal(e)):
        e = _prepare(e)
    out = sympy.cancel(e)
    _check_domain(out)
    return out


def is_zero(e: Any) -> bool:
    return normalize(e) == 0


def partial_diff(e: Expr, a: JetAtom) -> Expr:
    return normalize(sympy.diff(e, a.symbol))


def substitute(e: Expr, bindings: Mapping[JetAtom, Any]) -> Expr:
    if not bindings:
        return normalize(e)
    return normalize(sympy.sympify(e).xreplace(
        {a.symbol: sympy.sympify(v) for a, v in bindings.items()}))


def linear_coefficient(e: Expr, a: JetAtom) -> Expr | None:
    """Coefficient of ``a`` if ``e`` is affine in it, otherwise None."""
    c = partial_diff(e, a)
    if a.symbol in c.free_symbols:
        return None
    return c


def evaluate(e: Expr, env: Mapping[JetAtom, float], digits: int = 30) -> float:
    """High-precision point evaluation."""
    subs = {a.symbol: sympy.Float(v, digits) for a, v in env.items()}
    return float(sympy.sympify(e).evalf(digits, subs=subs))


# --- rendering --------------------------------------------------------------

class _TextPrinter(StrPrinter):
    def _print_log(self, expr):
        return f"ln({self._print(expr.args[0])})"


def to_text(e: Expr) -> str:
    """Plain text in the input grammar, e.g. ``phi_xx/phi``."""
    return _TextPrinter().doprint(sympy.sympify(e)).replace("**", "^")


def to_latex(e: Expr) -> str:
    e = sympy.sympify(e)
    names = {s: atom_of(s).latex() for s in e.free_symbols}
    return sympy.latex(e, symbol_names=names, ln_notation=True)


def to_tree(e: Expr) -> dict:
    """JSON-ready tree: node kind plus children."""
    e = sympy.sympify(e)
    if isinstance(e, sympy.Symbol):
        a = atom_of(e)
        return {"node": "atom", "kind": a.kind.name.lower(), "name": a.name,
                "x_order": a.x_order, "t_order": a.t_order}
    if isinstance(e, sympy.Rational):
        return {"node": "const", "value": str(e)}
    if isinstance(e, sympy.Add):
        return {"node": "add", "children": [to_tree(a) for a in e.args]}
    if isinstance(e, sympy.Mul):
        return {"node": "mul", "children": [to_tree(a) for a in e.args]}
    if isinstance(e, sympy.Pow):
        return {"node": "pow", "exponent": int(e.exp), "children": [to_tree(e.base)]}
    if isinstance(e, sympy.log):
        return {"node": "ln", "children": [to_tree(e.args[0])]}
    raise TypeError(f"cannot encode {type(e).__name__}")


def from_tree(tree: Mapping[str, Any]) -> Expr:
    node = tree["node"]
    if node == "atom":
        kind = Kind[tree["kind"].upper()]
        return JetAtom(kind, tree["name"], tree["x_order"], tree["t_order"]).symbol
    if node == "const":
        f = Fraction(tree["value"])
        return sympy.Rational(f.numerator, f.denominator)
    kids = [from_tree(c) for c in tree["children"]]
    if node == "add":
        return sympy.Add(*kids)
    if node == "mul":
        return sympy.Mul(*kids)
    if node == "pow":
        return sympy.Pow(kids[0], tree["exponent"])
    if node == "ln":
        return sympy.log(kids[0])
    raise ValueError(f"unknown node kind {node!r}")


def to_json(e: Expr) -> str:
    return json.dumps(to_tree(e), sort_keys=True)


def from_json(text: str) -> Expr:
    return normalize(from_tree(json.loads(text)))


def total_sum(terms: Iterable[Any]) -> Expr:
    return sympy.Add(*[sympy.sympify(t) for t in terms])
