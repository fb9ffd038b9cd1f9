"""Total derivatives, Euler operators and the local Poisson bracket."""

from __future__ import annotations

from typing import Iterable

import sympy

from .expr import (
    Expr,
    JetAtom,
    Kind,
    atom_of,
    atoms,
    normalize,
    partial_diff,
)


class NotExact(ValueError):
    """Raised when a density is not a total x-derivative."""


def total_dx(e: Expr, n: int = 1) -> Expr:
    e = sympy.sympify(e)
    for _ in range(n):
        terms = [sympy.diff(e, s) * atom_of(s).dx().symbol for s in e.free_symbols]
        e = normalize(sympy.Add(*terms))
    return e


def total_dt(e: Expr) -> Expr:
    """Time derivative of a density free of time jets.

    Each jet maps to the same jet with the time flag set; multipliers are
    rejected because their time evolution is not part of the jet space.
    """
    e = sympy.sympify(e)
    terms = []
    for s in e.free_symbols:
        a = atom_of(s)
        if a.t_order:
            raise ValueError(f"input already contains the time jet {a.text}")
        if a.kind == Kind.MULTIPLIER:
            raise ValueError(f"no time derivative for multiplier {a.text}")
        terms.append(sympy.diff(e, s) * a.dt().symbol)
    return normalize(sympy.Add(*terms))


def _target(f: str | JetAtom) -> JetAtom:
    if isinstance(f, str):
        return JetAtom(Kind.FIELD, f)
    return f.base


def euler_op(e: Expr, f: str | JetAtom) -> Expr:
    """Variational derivative of the density ``e`` with respect to ``f``.

    ``f`` is a field name or a base JetAtom (use a momentum atom to vary with
    respect to a momentum).  Jets are summed up to the highest order present.
    """
    e = sympy.sympify(e)
    target = _target(f)
    result = []
    for a in atoms(e):
        if a.kind != target.kind or a.name != target.name:
            continue
        d = partial_diff(e, a)
        if a.t_order:
            d = total_dt(d)
            d = -d
        result.append((-1) ** a.x_order * total_dx(d, a.x_order))
    return normalize(sympy.Add(*result))


def dependent_bases(e: Expr, kinds: Iterable[Kind] = (Kind.FIELD, Kind.MOMENTUM)) -> list[JetAtom]:
    kinds = set(kinds)
    return sorted({a.base for a in atoms(e) if a.kind in kinds})


def _constant_term(e: Expr) -> Expr:
    num, den = sympy.fraction(e)
    if den.free_symbols:
        return sympy.Integer(0)
    const, _ = sympy.expand(num).as_coeff_add()
    return normalize(const / den)


def equal_mod_dx(a: Expr, b: Expr, *, strict_constant: bool = False) -> bool:
    """True when ``a`` and ``b`` differ by a total x-derivative.

    Additive constants are ignored unless ``strict_constant`` is set.
    """
    d = normalize(sympy.sympify(a) - sympy.sympify(b))
    if d == 0:
        return True
    for base in dependent_bases(d):
        if euler_op(d, base) != 0:
            return False
    if strict_constant:
        return _constant_term(d) == 0
    return True


def integrate_dx(e: Expr, max_steps: int = 200) -> Expr:
    """Return ``g`` with ``total_dx(g) == e``; the integration constant is 0.

    Works jet by jet from the highest order down; raises NotExact when ``e``
    is not a total derivative.
    """
    rem = normalize(e)
    g = sympy.Integer(0)
    for _ in range(max_steps):
        if rem == 0:
            return normalize(g)
        jets = [a for a in atoms(rem) if a.x_order > 0]
        if not jets:
            raise NotExact("density is not a total x-derivative")
        top = max(jets, key=lambda a: (a.x_order, a))
        coeff = partial_diff(rem, top)
        if top.symbol in coeff.free_symbols:
            raise NotExact(f"nonlinear in the top jet {top.text}")
        lower = JetAtom(top.kind, top.name, top.x_order - 1, top.t_order)
        piece = sympy.integrate(coeff, lower.symbol)
        if piece.has(sympy.Integral):
            raise NotExact(f"could not integrate coefficient of {top.text}")
        piece = normalize(piece)
        new_rem = normalize(rem - total_dx(piece))
        order = max((a.x_order for a in atoms(new_rem)), default=0)
        if order > top.x_order:
            raise NotExact("integration did not reduce the jet order")
        g += piece
        rem = new_rem
    raise NotExact("integration did not terminate")


def poisson_with_hamiltonian(c: Expr, h: Expr) -> Expr:
    """Local bracket {c(x), ∫h dx} with the convention {ψ, π_ψ} = +1.

    Multipliers inside ``h`` are carried through as inert functions of x.
    """
    c = getattr(c, "density", c)
    c = sympy.sympify(c)
    h = sympy.sympify(h)
    cache: dict[JetAtom, Expr] = {}

    def var(base: JetAtom) -> Expr:
        if base not in cache:
            cache[base] = euler_op(h, base)
        return cache[base]

    terms = []
    for a in atoms(c):
        if a.t_order:
            raise ValueError("constraint densities may not contain time jets")
        if a.kind == Kind.FIELD:
            conj = JetAtom(Kind.MOMENTUM, a.name)
            sign = 1
        elif a.kind == Kind.MOMENTUM:
            conj = JetAtom(Kind.FIELD, a.name)
            sign = -1
        else:
            continue
        terms.append(sign * partial_diff(c, a) * total_dx(var(conj), a.x_order))
    return normalize(sympy.Add(*terms))
