"""Reader for ``.lag`` files: a field declaration plus a Lagrangian density.

::

    # cubic nonlinear Schroedinger, polar form
    fields phi, theta
    L = -1/2*Dt(theta)*phi^2 + 1/2*phi^4 - 1/2*Dx(phi)^2 - 1/2*Dx(theta)^2*phi^2

Operators bind as ``^`` > unary minus > ``* /`` > ``+ -``; ``^`` is right
associative and takes integer exponents.  ``Dx(e)`` expands the total spatial
derivative, ``Dt(f)`` is the velocity of a declared field and ``ln(e)`` is the
natural logarithm.  Jet names such as ``phi_xx`` or ``theta_t`` are accepted
as shorthand for the corresponding ``Dx``/``Dt`` forms.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import sympy

from .expr import Expr, JetAtom, Kind, atoms, is_valid_field_name, normalize
from .varcalc import total_dx


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.message = message
        self.line = line
        self.col = col


@dataclass(frozen=True)
class LagrangianSpec:
    fields: tuple[str, ...]
    density: Expr
    source_span_map: dict = field(default_factory=dict, compare=False, repr=False)

    def velocity(self, name: str) -> JetAtom:
        return JetAtom(Kind.FIELD, name, 0, 1)


@dataclass(frozen=True)
class Token:
    kind: str  # num, ident, op, eof
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(r"\s*(?:(\d+)|([A-Za-z_][A-Za-z0-9_]*)|(.))")


def tokenize(text: str, line0: int = 1, col0: int = 1) -> list[Token]:
    tokens = []
    for lineno, raw in enumerate(text.split("\n"), start=line0):
        line = raw.split("#", 1)[0].rstrip()
        base = col0 if lineno == line0 else 1
        pos = 0
        while pos < len(line):
            m = _TOKEN_RE.match(line, pos)
            if m is None or m.end() == pos:
                break
            num, ident, op = m.groups()
            start = m.start(m.lastindex) + base
            if num is not None:
                tokens.append(Token("num", num, lineno, start))
            elif ident is not None:
                tokens.append(Token("ident", ident, lineno, start))
            elif op is not None:
                if op not in "+-*/^(),=":
                    raise ParseError(f"unexpected character {op!r}", lineno, start)
                tokens.append(Token("op", op, lineno, start))
            pos = m.end()
    last = tokens[-1] if tokens else Token("eof", "", line0, col0)
    tokens.append(Token("eof", "", last.line, last.col + len(last.text)))
    return tokens


class _ExprParser:
    def __init__(self, tokens: list[Token], fields: tuple[str, ...]):
        self.tokens = tokens
        self.pos = 0
        self.fields = fields
        self.spans: dict[str, list[tuple[int, int]]] = {}

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        if self.tok.text != text:
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")
        return self.advance()

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        raise ParseError(message, tok.line, tok.col)

    def parse(self) -> Expr:
        e = self.expr(in_dx=False)
        if self.tok.kind != "eof":
            self.error(f"unexpected {self.tok.text!r}")
        return e

    def expr(self, in_dx: bool) -> Expr:
        e = self.term(in_dx)
        while self.tok.text in ("+", "-"):
            op = self.advance().text
            rhs = self.term(in_dx)
            e = e + rhs if op == "+" else e - rhs
        return e

    def term(self, in_dx: bool) -> Expr:
        e = self.unary(in_dx)
        while self.tok.text in ("*", "/"):
            op = self.advance()
            rhs = self.unary(in_dx)
            if op.text == "*":
                e = e * rhs
            else:
                if normalize(rhs) == 0:
                    self.error("symbolic division by zero", op)
                e = e / rhs
        return e

    def unary(self, in_dx: bool) -> Expr:
        if self.tok.text == "-":
            self.advance()
            return -self.unary(in_dx)
        if self.tok.text == "+":
            self.advance()
            return self.unary(in_dx)
        return self.power(in_dx)

    def power(self, in_dx: bool) -> Expr:
        base = self.primary(in_dx)
        if self.tok.text != "^":
            return base
        caret = self.advance()
        start = self.tok
        exponent = normalize(self.unary(in_dx))
        if not exponent.is_Integer:
            self.error("exponent must be an integer", start)
        if exponent.is_negative and normalize(base) == 0:
            self.error("symbolic division by zero", caret)
        return base ** exponent

    def primary(self, in_dx: bool) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return sympy.Integer(int(tok.text))
        if tok.text == "(":
            self.advance()
            e = self.expr(in_dx)
            self.expect(")")
            return e
        if tok.kind != "ident":
            self.error(f"unexpected {tok.text or 'end of input'!r}")
        self.advance()
        if tok.text in ("Dx", "Dt", "ln"):
            return self.call(tok, in_dx)
        return self.jet(tok, in_dx)

    def call(self, tok: Token, in_dx: bool) -> Expr:
        self.expect("(")
        if tok.text == "ln":
            arg = self.expr(in_dx)
            self.expect(")")
            if normalize(arg) == 0:
                self.error("ln of zero", tok)
            return sympy.log(arg)
        if tok.text == "Dx":
            arg = self.expr(in_dx=True)
            self.expect(")")
            return total_dx(arg)
        # Dt: the argument must be a bare declared field
        arg = self.tok
        if arg.kind != "ident" or arg.text not in self.fields or self.tokens[self.pos + 1].text != ")":
            self.error("Dt argument must be a declared field", arg)
        if in_dx:
            self.error("Dt may not appear inside Dx", tok)
        self.advance()
        self.expect(")")
        self._note(arg.text, arg)
        return JetAtom(Kind.FIELD, arg.text, 0, 1).symbol

    def jet(self, tok: Token, in_dx: bool) -> Expr:
        name, _, suffix = tok.text.partition("_")
        if name not in self.fields:
            self.error(f"undeclared identifier {tok.text!r}", tok)
        if not re.fullmatch(r"x*t?", suffix):
            self.error(f"undeclared identifier {tok.text!r}", tok)
        t = suffix.endswith("t")
        if t and (in_dx or len(suffix) > 1):
            self.error("time jets must be first order with no spatial derivative", tok)
        self._note(name, tok)
        return JetAtom(Kind.FIELD, name, suffix.count("x"), int(t)).symbol

    def _note(self, name: str, tok: Token) -> None:
        self.spans.setdefault(name, []).append((tok.line, tok.col))


def parse(text: str) -> LagrangianSpec:
    if not text.isascii():
        bad = next(i for i, ch in enumerate(text) if not ch.isascii())
        line = text.count("\n", 0, bad) + 1
        col = bad - (text.rfind("\n", 0, bad) + 1) + 1
        raise ParseError("only ASCII input is supported", line, col)
    tokens = tokenize(text)
    pos = 0

    def at(i: int) -> Token:
        return tokens[min(i, len(tokens) - 1)]

    if at(0).text != "fields":
        raise ParseError("expected 'fields' declaration", at(0).line, at(0).col)
    pos = 1
    names: list[str] = []
    spans: dict[str, list[tuple[int, int]]] = {}
    while True:
        t = at(pos)
        if t.kind != "ident":
            raise ParseError("expected a field name", t.line, t.col)
        if not is_valid_field_name(t.text):
            raise ParseError(f"invalid field name {t.text!r}", t.line, t.col)
        if t.text in names:
            raise ParseError(f"field {t.text!r} declared twice", t.line, t.col)
        names.append(t.text)
        spans[t.text] = [(t.line, t.col)]
        pos += 1
        if at(pos).text != ",":
            break
        pos += 1
    decl_line = at(pos - 1).line
    t = at(pos)
    if t.text != "L" or t.line == decl_line:
        raise ParseError("expected 'L =' on a new line", t.line, t.col)
    if at(pos + 1).text != "=":
        raise ParseError("expected '='", at(pos + 1).line, at(pos + 1).col)
    parser = _ExprParser(tokens[pos + 2:], tuple(names))
    density = normalize(parser.parse())
    for name, where in parser.spans.items():
        spans.setdefault(name, []).extend(where)
    for a in atoms(density):
        if a.kind != Kind.FIELD:
            raise ParseError(f"unexpected atom {a.text}", 1, 1)
    return LagrangianSpec(tuple(names), density, spans)


def parse_file(path: str | Path) -> LagrangianSpec:
    return parse(Path(path).read_text(encoding="utf-8"))
