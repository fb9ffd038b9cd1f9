from __future__ import annotations

import functools
import re

import pytest
import sympy

from diracjet import corpus, dba
from diracjet.expr import Kind, atom_of

X, T = sympy.symbols("x t")


@functools.lru_cache(maxsize=None)
def load(name: str):
    spec = corpus.load(name)
    return spec, dba.analyze(spec)


@pytest.fixture(scope="session")
def systems():
    """Parsed spec and analysis report for every builtin, computed once."""
    return load


def as_functions(e):
    """Rewrite jet symbols as derivatives of functions of (x, t).

    Used to check jet-space calculus against sympy's own differentiation.
    """
    subs = {}
    for s in e.free_symbols:
        a = atom_of(s)
        assert a.kind == Kind.FIELD
        f = sympy.Function(a.name)(X, T)
        d = f
        if a.x_order:
            d = sympy.Derivative(d, (X, a.x_order))
        if a.t_order:
            d = sympy.Derivative(d, T)
        subs[s] = d
    return e.xreplace(subs)


def sym(text: str):
    """Build an expression from plain jet text such as ``phi_xx/phi``."""
    names = {n: sympy.Symbol(n) for n in re.findall(r"[A-Za-z_][A-Za-z0-9_]*", text) if n != "ln"}
    return sympy.sympify(text.replace("^", "**"), locals={**names, "ln": sympy.log})


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line; the test still asserts on its own."""

    def record(criterion: str, passed: bool, detail: str) -> bool:
        _VERDICTS.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
