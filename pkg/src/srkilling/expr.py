"""Exact symbolic scalar expressions over chart coordinates.

The expression language is deliberately tiny: rational constants, declared
coordinate variables, the four arithmetic operations, integer and rational
powers via ``pow(e, p/q)``, and the unary functions ``sin``, ``cos``,
``exp``, ``neg``.  Constants are stored as :class:`fractions.Fraction`, so
arithmetic on polynomial data stays exact until a point evaluation.

Simplification is best effort (constant folding, 0/1 identities, exponent
merging); correctness of every downstream computation rests on evaluation
agreement, never on canonical forms.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

# symbolic determinants of rational-function matrices produce deep trees
sys.setrecursionlimit(max(sys.getrecursionlimit(), 100_000))

__all__ = [
    "Expression",
    "Const",
    "Var",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Neg",
    "Pow",
    "Call",
    "ExprError",
    "ParseError",
    "EvalError",
    "parse_expression",
    "differentiate",
    "evaluate",
    "compile_expression",
    "to_string",
    "const",
    "var",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_",
    "call",
    "ZERO",
    "ONE",
]


class ExprError(Exception):
    """Base class for expression-layer errors."""


class ParseError(ExprError):
    """Syntax or identifier error; carries the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class EvalError(ExprError):
    """Numeric evaluation failure (division by zero, bad root, non-finite)."""


class Expression:
    """Base AST node.  Nodes are immutable and safe to share."""

    __slots__ = ()

    def __str__(self) -> str:
        return to_string(self)


@dataclass(frozen=True, slots=True)
class Const(Expression):
    value: Fraction


@dataclass(frozen=True, slots=True)
class Var(Expression):
    name: str


@dataclass(frozen=True, slots=True)
class Add(Expression):
    a: Expression
    b: Expression


@dataclass(frozen=True, slots=True)
class Sub(Expression):
    a: Expression
    b: Expression


@dataclass(frozen=True, slots=True)
class Mul(Expression):
    a: Expression
    b: Expression


@dataclass(frozen=True, slots=True)
class Div(Expression):
    a: Expression
    b: Expression


@dataclass(frozen=True, slots=True)
class Neg(Expression):
    a: Expression


@dataclass(frozen=True, slots=True)
class Pow(Expression):
    base: Expression
    exponent: Fraction  # rational, stored exactly


@dataclass(frozen=True, slots=True)
class Call(Expression):
    fn: str  # one of "sin", "cos", "exp"
    arg: Expression


FUNCTIONS = ("sin", "cos", "exp")

ZERO = Const(Fraction(0))
ONE = Const(Fraction(1))


def const(v) -> Const:
    return Const(Fraction(v))


def var(name: str) -> Var:
    return Var(name)


# ---------------------------------------------------------------------------
# Smart constructors: every rewrite the simplifier knows happens here, at
# construction time, so parser and differentiator emit simplified trees.
# ---------------------------------------------------------------------------


def add(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    if isinstance(a, Const) and a.value == 0:
        return b
    if isinstance(b, Const) and b.value == 0:
        return a
    return Add(a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if isinstance(b, Const) and b.value == 0:
        return a
    if isinstance(a, Const) and a.value == 0:
        return neg(b)
    if a is b:
        return ZERO
    return Sub(a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    if isinstance(a, Const):
        if a.value == 0:
            return ZERO
        if a.value == 1:
            return b
        if a.value == -1:
            return neg(b)
    if isinstance(b, Const):
        if b.value == 0:
            return ZERO
        if b.value == 1:
            return a
        if b.value == -1:
            return neg(a)
    return Mul(a, b)


def div(a: Expression, b: Expression) -> Expression:
    if isinstance(b, Const):
        if b.value == 0:
            raise EvalError("symbolic division by the constant zero")
        if isinstance(a, Const):
            return Const(a.value / b.value)
        if b.value == 1:
            return a
    if isinstance(a, Const) and a.value == 0:
        return ZERO
    if a is b:
        return ONE
    return Div(a, b)


def neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.a
    return Neg(a)


def pow_(base: Expression, exponent) -> Expression:
    r = Fraction(exponent)
    if r == 0:
        return ONE
    if r == 1:
        return base
    if isinstance(base, Const) and r.denominator == 1:
        if r >= 0:
            return Const(base.value**r.numerator)
        if base.value == 0:
            raise EvalError("symbolic zero raised to a negative power")
        return Const(Fraction(1) / base.value**(-r.numerator))
    if isinstance(base, Pow):
        return pow_(base.base, base.exponent * r)
    return Pow(base, r)


def call(fn: str, arg: Expression) -> Expression:
    if fn not in FUNCTIONS:
        raise ExprError(f"unknown function {fn!r}")
    return Call(fn, arg)


def simplify(e: Expression) -> Expression:
    """Rebuild ``e`` bottom-up through the smart constructors."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Add):
        return add(simplify(e.a), simplify(e.b))
    if isinstance(e, Sub):
        return sub(simplify(e.a), simplify(e.b))
    if isinstance(e, Mul):
        return mul(simplify(e.a), simplify(e.b))
    if isinstance(e, Div):
        return div(simplify(e.a), simplify(e.b))
    if isinstance(e, Neg):
        return neg(simplify(e.a))
    if isinstance(e, Pow):
        return pow_(simplify(e.base), e.exponent)
    if isinstance(e, Call):
        return call(e.fn, simplify(e.arg))
    raise TypeError(f"not an Expression: {e!r}")


# ---------------------------------------------------------------------------
# Parsing.  Grammar (whitespace-insensitive, UTF-8):
#   expr   := term (("+"|"-") term)*
#   term   := factor (("*"|"/") factor)*
#   factor := ("-")? atom ("^" integer)?
#   atom   := number | ident | ident "(" expr ")" | "(" expr ")"
#           | "pow" "(" expr "," rational ")"
#   number := integer ("/" integer)?
# ---------------------------------------------------------------------------


class _Tokenizer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def take(self) -> str:
        c = self.peek()
        self.pos += 1
        return c

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            raise ParseError(f"expected {ch!r}", self.pos)
        self.pos += 1

    def integer(self) -> int:
        self.skip_ws()
        start = self.pos
        if self.peek() == "-":
            self.pos += 1
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        tok = self.text[start : self.pos]
        if not tok or tok == "-":
            raise ParseError("expected integer", start)
        return int(tok)

    def ident(self) -> str:
        self.skip_ws()
        start = self.pos
        while self.pos < len(self.text) and (
            self.text[self.pos].isalnum() or self.text[self.pos] == "_"
        ):
            self.pos += 1
        return self.text[start : self.pos]


class _Parser:
    def __init__(self, text: str, variables: list[str]):
        self.t = _Tokenizer(text)
        self.vars = set(variables)

    def parse(self) -> Expression:
        e = self.expr()
        self.t.skip_ws()
        if self.t.pos != len(self.t.text):
            raise ParseError("unexpected trailing input", self.t.pos)
        return e

    def expr(self) -> Expression:
        e = self.term()
        while True:
            c = self.t.peek()
            if c == "+":
                self.t.take()
                e = add(e, self.term())
            elif c == "-":
                self.t.take()
                e = sub(e, self.term())
            else:
                return e

    def term(self) -> Expression:
        e = self.factor()
        while True:
            c = self.t.peek()
            if c == "*":
                self.t.take()
                e = mul(e, self.factor())
            elif c == "/":
                self.t.take()
                pos = self.t.pos
                self.t.skip_ws()
                if self.t.pos >= len(self.t.text):
                    raise ParseError("division with empty denominator", pos)
                e = div(e, self.factor())
            else:
                return e

    def factor(self) -> Expression:
        negate = False
        if self.t.peek() == "-":
            self.t.take()
            negate = True
        e = self.atom()
        if self.t.peek() == "^":
            self.t.take()
            e = pow_(e, Fraction(self.t.integer()))
        return neg(e) if negate else e

    def atom(self) -> Expression:
        c = self.t.peek()
        pos = self.t.pos
        if c == "(":
            self.t.take()
            e = self.expr()
            self.t.expect(")")
            return e
        if c.isdigit():
            # number := integer ("/" integer)?  The rational form is handled
            # by the term-level "/" plus constant folding, which keeps
            # division left-associative.
            return Const(Fraction(self.t.integer()))
        if c.isalpha() or c == "_":
            name = self.t.ident()
            if name == "pow":
                self.t.expect("(")
                base = self.expr()
                self.t.expect(",")
                p = self.t.integer()
                q = 1
                if self.t.peek() == "/":
                    self.t.take()
                    q = self.t.integer()
                    if q == 0:
                        raise ParseError("zero denominator in exponent", self.t.pos)
                self.t.expect(")")
                return pow_(base, Fraction(p, q))
            if name in FUNCTIONS:
                self.t.expect("(")
                arg = self.expr()
                self.t.expect(")")
                return call(name, arg)
            if name in self.vars:
                return Var(name)
            raise ParseError(f"unknown identifier {name!r}", pos)
        raise ParseError("expected number, identifier or parenthesis", pos)


def parse_expression(text: str, variables: list[str]) -> Expression:
    """Parse ``text`` over the declared variable names.

    Raises :class:`ParseError` with the byte offset on syntax errors and on
    identifiers that are neither declared variables nor built-in functions.
    """
    return _Parser(text, variables).parse()


# ---------------------------------------------------------------------------
# Printing.  Output re-parses to an evaluation-equivalent expression.
# ---------------------------------------------------------------------------


def to_string(e: Expression) -> str:
    return _print(e, 0)


def _print(e: Expression, prec: int) -> str:
    # precedence levels: 0 sum, 1 product, 2 unary/power, 3 atom
    if isinstance(e, Const):
        s = str(e.value)
        return f"({s})" if (e.value < 0 or e.value.denominator != 1) and prec >= 1 else s
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Add):
        s = f"{_print(e.a, 0)} + {_print(e.b, 1)}"
        return f"({s})" if prec > 0 else s
    if isinstance(e, Sub):
        s = f"{_print(e.a, 0)} - {_print(e.b, 1)}"
        return f"({s})" if prec > 0 else s
    if isinstance(e, Mul):
        s = f"{_print(e.a, 1)}*{_print(e.b, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(e, Div):
        s = f"{_print(e.a, 1)}/{_print(e.b, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(e, Neg):
        s = f"-{_print(e.a, 2)}"
        return f"({s})" if prec > 1 else s
    if isinstance(e, Pow):
        r = e.exponent
        if r.denominator == 1 and r >= 0:
            return f"{_print(e.base, 3)}^{r.numerator}"
        if r.denominator == 1:
            return f"pow({_print(e.base, 0)}, {r.numerator})"
        return f"pow({_print(e.base, 0)}, {r.numerator}/{r.denominator})"
    if isinstance(e, Call):
        return f"{e.fn}({_print(e.arg, 0)})"
    raise TypeError(f"not an Expression: {e!r}")


# ---------------------------------------------------------------------------
# Exact differentiation.
# ---------------------------------------------------------------------------


# Derivatives of shared subexpressions are shared again, which both avoids
# re-deriving common subtrees and keeps the compiled evaluation CSE tight.
_DIFF_CACHE: dict[tuple[int, str], tuple[Expression, Expression]] = {}


def differentiate(e: Expression, v: str) -> Expression:
    """Exact partial derivative of ``e`` with respect to the coordinate ``v``."""
    key = (id(e), v)
    hit = _DIFF_CACHE.get(key)
    if hit is not None and hit[0] is e:
        return hit[1]
    d = _differentiate(e, v)
    _DIFF_CACHE[key] = (e, d)
    return d


def _differentiate(e: Expression, v: str) -> Expression:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == v else ZERO
    if isinstance(e, Add):
        return add(differentiate(e.a, v), differentiate(e.b, v))
    if isinstance(e, Sub):
        return sub(differentiate(e.a, v), differentiate(e.b, v))
    if isinstance(e, Mul):
        return add(mul(differentiate(e.a, v), e.b), mul(e.a, differentiate(e.b, v)))
    if isinstance(e, Div):
        da, db = differentiate(e.a, v), differentiate(e.b, v)
        return div(sub(mul(da, e.b), mul(e.a, db)), pow_(e.b, Fraction(2)))
    if isinstance(e, Neg):
        return neg(differentiate(e.a, v))
    if isinstance(e, Pow):
        du = differentiate(e.base, v)
        return mul(mul(Const(e.exponent), pow_(e.base, e.exponent - 1)), du)
    if isinstance(e, Call):
        du = differentiate(e.arg, v)
        if e.fn == "sin":
            return mul(call("cos", e.arg), du)
        if e.fn == "cos":
            return neg(mul(call("sin", e.arg), du))
        if e.fn == "exp":
            return mul(call("exp", e.arg), du)
    raise TypeError(f"not an Expression: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation.  Scalar path raises precise errors; the compiled path is a
# vectorized numpy function over many points, with a finiteness check left
# to the caller via eval_many.
# ---------------------------------------------------------------------------


def _rational_pow(u: float, r: Fraction) -> float:
    p, q = r.numerator, r.denominator
    if q == 1:
        if u == 0.0 and p < 0:
            raise EvalError("zero raised to a negative power")
        return float(u) ** p
    if u < 0.0:
        if q % 2 == 0:
            raise EvalError(f"even root of negative value {u!r}")
        m = (-u) ** (abs(p) / q)
        m = m if p % 2 == 0 else -m
        return m if p > 0 else 1.0 / m
    if u == 0.0 and p < 0:
        raise EvalError("zero raised to a negative power")
    return u ** (p / q)


def evaluate(e: Expression, env: dict[str, float]) -> float:
    """Evaluate at a point given as a name -> value mapping (binary64)."""
    memo: dict[int, float] = {}
    try:
        val = _eval(e, env, memo)
    except OverflowError:
        raise EvalError("non-finite result (overflow)") from None
    if not math.isfinite(val):
        raise EvalError(f"non-finite result {val!r}")
    return val


def _eval(e: Expression, env: dict[str, float], memo: dict[int, float]) -> float:
    key = id(e)
    if key in memo:
        return memo[key]
    if isinstance(e, Const):
        val = float(e.value)
    elif isinstance(e, Var):
        try:
            val = float(env[e.name])
        except KeyError:
            raise EvalError(f"unbound variable {e.name!r}") from None
    elif isinstance(e, Add):
        val = _eval(e.a, env, memo) + _eval(e.b, env, memo)
    elif isinstance(e, Sub):
        val = _eval(e.a, env, memo) - _eval(e.b, env, memo)
    elif isinstance(e, Mul):
        val = _eval(e.a, env, memo) * _eval(e.b, env, memo)
    elif isinstance(e, Div):
        den = _eval(e.b, env, memo)
        if den == 0.0:
            raise EvalError("division by zero")
        val = _eval(e.a, env, memo) / den
    elif isinstance(e, Neg):
        val = -_eval(e.a, env, memo)
    elif isinstance(e, Pow):
        val = _rational_pow(_eval(e.base, env, memo), e.exponent)
    elif isinstance(e, Call):
        u = _eval(e.arg, env, memo)
        val = {"sin": math.sin, "cos": math.cos, "exp": math.exp}[e.fn](u)
    else:
        raise TypeError(f"not an Expression: {e!r}")
    memo[key] = val
    return val


def _np_rational_pow(u: np.ndarray, p: int, q: int) -> np.ndarray:
    if q == 1:
        return u.astype(float) ** p
    if q % 2 == 1:
        m = np.abs(u) ** (abs(p) / q)
        m = np.where((u < 0) & (p % 2 == 1), -m, m)
        return m if p > 0 else 1.0 / m
    # even root: negative bases yield nan, surfaced by the finiteness check
    with np.errstate(invalid="ignore"):
        return u ** (p / q)


def compile_expression(e: Expression, var_order: list[str]):
    """Compile to a vectorized function of len(var_order) numpy arrays.

    Shared subexpressions (by object identity) are evaluated once.  The
    returned function performs no finiteness checking; callers that need
    the scalar-path error behavior should use :func:`evaluate`.
    """
    order: list[Expression] = []
    seen: set[int] = set()

    def visit(node: Expression) -> None:
        if id(node) in seen:
            return
        seen.add(id(node))
        if isinstance(node, (Add, Sub, Mul, Div)):
            visit(node.a)
            visit(node.b)
        elif isinstance(node, Neg):
            visit(node.a)
        elif isinstance(node, Pow):
            visit(node.base)
        elif isinstance(node, Call):
            visit(node.arg)
        order.append(node)

    visit(e)
    index = {id(node): k for k, node in enumerate(order)}
    var_pos = {name: k for k, name in enumerate(var_order)}
    np_fns = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

    steps = []
    for node in order:
        if isinstance(node, Const):
            c = float(node.value)
            steps.append(("const", c, 0, 0))
        elif isinstance(node, Var):
            if node.name not in var_pos:
                raise EvalError(f"unbound variable {node.name!r}")
            steps.append(("var", var_pos[node.name], 0, 0))
        elif isinstance(node, Add):
            steps.append(("add", index[id(node.a)], index[id(node.b)], 0))
        elif isinstance(node, Sub):
            steps.append(("sub", index[id(node.a)], index[id(node.b)], 0))
        elif isinstance(node, Mul):
            steps.append(("mul", index[id(node.a)], index[id(node.b)], 0))
        elif isinstance(node, Div):
            steps.append(("div", index[id(node.a)], index[id(node.b)], 0))
        elif isinstance(node, Neg):
            steps.append(("neg", index[id(node.a)], 0, 0))
        elif isinstance(node, Pow):
            steps.append(
                ("pow", index[id(node.base)], node.exponent.numerator, node.exponent.denominator)
            )
        elif isinstance(node, Call):
            steps.append(("call", index[id(node.arg)], np_fns[node.fn], 0))

    def fn(*arrays):
        slots: list = [None] * len(steps)
        for k, (op, a, b, c) in enumerate(steps):
            if op == "const":
                slots[k] = a
            elif op == "var":
                slots[k] = np.asarray(arrays[a], dtype=float)
            elif op == "add":
                slots[k] = slots[a] + slots[b]
            elif op == "sub":
                slots[k] = slots[a] - slots[b]
            elif op == "mul":
                slots[k] = slots[a] * slots[b]
            elif op == "div":
                with np.errstate(divide="ignore", invalid="ignore"):
                    slots[k] = slots[a] / slots[b]
            elif op == "neg":
                slots[k] = -slots[a]
            elif op == "pow":
                with np.errstate(divide="ignore", invalid="ignore"):
                    slots[k] = _np_rational_pow(np.asarray(slots[a], dtype=float), b, c)
            elif op == "call":
                slots[k] = b(np.asarray(slots[a], dtype=float))
        out = slots[-1]
        if np.ndim(out) == 0 and arrays and np.ndim(arrays[0]) > 0:
            out = np.full(np.shape(arrays[0]), float(out))
        return np.asarray(out, dtype=float)

    return fn


# ---------------------------------------------------------------------------
# Polynomial normal form.  Expressions built from rational constants,
# variables, +, -, * and nonnegative integer powers convert to a canonical
# multivariate polynomial; normalize() rebuilds such subtrees in canonical
# form and attempts exact division for P/Q and P * Q^-k patterns.  This is
# what keeps Christoffel data of polynomial frames literally zero instead of
# zero-valued expression thickets.
# ---------------------------------------------------------------------------


class Poly:
    __slots__ = ("vars", "terms")

    def __init__(self, vars: tuple[str, ...], terms: dict[tuple[int, ...], Fraction]):
        self.vars = vars
        self.terms = {k: v for k, v in terms.items() if v != 0}

    @staticmethod
    def constant(c: Fraction) -> "Poly":
        return Poly((), {(): c} if c != 0 else {})

    @staticmethod
    def variable(name: str) -> "Poly":
        return Poly((name,), {(1,): Fraction(1)})

    def is_constant(self) -> bool:
        return all(all(e == 0 for e in k) for k in self.terms)

    def constant_value(self) -> Fraction:
        return self.terms.get((0,) * len(self.vars), Fraction(0))


def _poly_align(p: Poly, q: Poly) -> tuple[tuple[str, ...], dict, dict]:
    if p.vars == q.vars:
        return p.vars, p.terms, q.terms
    names = tuple(sorted(set(p.vars) | set(q.vars)))

    def remap(poly: Poly) -> dict:
        idx = [names.index(v) for v in poly.vars]
        out: dict[tuple[int, ...], Fraction] = {}
        for k, c in poly.terms.items():
            kk = [0] * len(names)
            for pos, e in zip(idx, k):
                kk[pos] = e
            out[tuple(kk)] = c
        return out

    return names, remap(p), remap(q)


def _poly_add(p: Poly, q: Poly, sign: int = 1) -> Poly:
    names, tp, tq = _poly_align(p, q)
    out = dict(tp)
    for k, c in tq.items():
        out[k] = out.get(k, Fraction(0)) + sign * c
    return Poly(names, out)


def _poly_mul(p: Poly, q: Poly) -> Poly:
    names, tp, tq = _poly_align(p, q)
    out: dict[tuple[int, ...], Fraction] = {}
    for k1, c1 in tp.items():
        for k2, c2 in tq.items():
            k = tuple(a + b for a, b in zip(k1, k2))
            out[k] = out.get(k, Fraction(0)) + c1 * c2
    return Poly(names, out)


def _poly_pow(p: Poly, n: int) -> Poly:
    result = Poly.constant(Fraction(1))
    base = p
    while n:
        if n & 1:
            result = _poly_mul(result, base)
        base_next = _poly_mul(base, base) if n > 1 else base
        base = base_next
        n >>= 1
    return result


def poly_div_exact(p: Poly, q: Poly) -> Poly | None:
    """Quotient p/q when the division is exact, else None (lex order)."""
    if not q.terms:
        return None
    names, tp, tq = _poly_align(p, q)
    rem = dict(tp)
    lt_q = max(tq)
    cq = tq[lt_q]
    quo: dict[tuple[int, ...], Fraction] = {}
    while rem:
        lt_r = max(rem)
        mono = tuple(a - b for a, b in zip(lt_r, lt_q))
        if any(e < 0 for e in mono):
            return None
        coeff = rem[lt_r] / cq
        quo[mono] = quo.get(mono, Fraction(0)) + coeff
        for k, c in tq.items():
            kk = tuple(a + b for a, b in zip(mono, k))
            nv = rem.get(kk, Fraction(0)) - coeff * c
            if nv == 0:
                rem.pop(kk, None)
            else:
                rem[kk] = nv
    return Poly(names, quo)


def poly_to_expr(p: Poly) -> Expression:
    if not p.terms:
        return ZERO
    parts: list[Expression] = []
    for k in sorted(p.terms, reverse=True):
        c = p.terms[k]
        term: Expression | None = None
        for name, e in zip(p.vars, k):
            if e == 0:
                continue
            fac = Var(name) if e == 1 else Pow(Var(name), Fraction(e))
            term = fac if term is None else Mul(term, fac)
        if term is None:
            term = Const(c)
        elif c == -1:
            term = Neg(term)
        elif c != 1:
            term = Mul(Const(c), term)
        parts.append(term)
    # balanced sum keeps tree depth logarithmic in the monomial count
    while len(parts) > 1:
        nxt = []
        for i in range(0, len(parts) - 1, 2):
            a, b = parts[i], parts[i + 1]
            nxt.append(Sub(a, b.a) if isinstance(b, Neg) else Add(a, b))
        if len(parts) % 2 == 1:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


_POLY_CACHE: dict[int, tuple[Expression, Poly | None]] = {}


def as_poly(e: Expression) -> Poly | None:
    key = id(e)
    hit = _POLY_CACHE.get(key)
    if hit is not None and hit[0] is e:
        return hit[1]
    p = _as_poly(e)
    _POLY_CACHE[key] = (e, p)
    return p


def _as_poly(e: Expression) -> Poly | None:
    if isinstance(e, Const):
        return Poly.constant(e.value)
    if isinstance(e, Var):
        return Poly.variable(e.name)
    if isinstance(e, Add):
        a, b = as_poly(e.a), as_poly(e.b)
        return _poly_add(a, b) if a is not None and b is not None else None
    if isinstance(e, Sub):
        a, b = as_poly(e.a), as_poly(e.b)
        return _poly_add(a, b, -1) if a is not None and b is not None else None
    if isinstance(e, Mul):
        a, b = as_poly(e.a), as_poly(e.b)
        return _poly_mul(a, b) if a is not None and b is not None else None
    if isinstance(e, Neg):
        a = as_poly(e.a)
        return _poly_mul(Poly.constant(Fraction(-1)), a) if a is not None else None
    if isinstance(e, Div):
        a, b = as_poly(e.a), as_poly(e.b)
        if a is None or b is None:
            return None
        if b.is_constant():
            c = b.constant_value()
            return _poly_mul(Poly.constant(Fraction(1) / c), a) if c != 0 else None
        return poly_div_exact(a, b)
    if isinstance(e, Pow):
        r = e.exponent
        base = as_poly(e.base)
        if base is None or r.denominator != 1 or r < 0:
            return None
        return _poly_pow(base, r.numerator)
    return None


_NORM_CACHE: dict[int, tuple[Expression, Expression]] = {}


def normalize(e: Expression) -> Expression:
    """Best-effort canonicalization; evaluation-equivalent to the input."""
    key = id(e)
    hit = _NORM_CACHE.get(key)
    if hit is not None and hit[0] is e:
        return hit[1]
    out = _normalize(e)
    _NORM_CACHE[key] = (e, out)
    _NORM_CACHE[id(out)] = (out, out)
    return out


def _normalize(e: Expression) -> Expression:
    p = as_poly(e)
    if p is not None:
        return poly_to_expr(p)
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Add):
        return add(normalize(e.a), normalize(e.b))
    if isinstance(e, Sub):
        return sub(normalize(e.a), normalize(e.b))
    if isinstance(e, Neg):
        return neg(normalize(e.a))
    if isinstance(e, Call):
        return call(e.fn, normalize(e.arg))
    if isinstance(e, Pow):
        return pow_(normalize(e.base), e.exponent)
    if isinstance(e, Div):
        a, b = normalize(e.a), normalize(e.b)
        pa, pb = as_poly(a), as_poly(b)
        if pa is not None and pb is not None:
            q = poly_div_exact(pa, pb)
            if q is not None:
                return poly_to_expr(q)
        return div(a, b)
    if isinstance(e, Mul):
        a, b = normalize(e.a), normalize(e.b)
        q = _try_pow_division(a, b)
        if q is None:
            q = _try_pow_division(b, a)
        if q is not None:
            return q
        return mul(a, b)
    raise TypeError(f"not an Expression: {e!r}")


def _try_pow_division(num: Expression, den_pow: Expression) -> Expression | None:
    """Simplify num * base^-k by exact polynomial division, possibly partially."""
    if not isinstance(den_pow, Pow):
        return None
    r = den_pow.exponent
    if r.denominator != 1 or r >= 0:
        return None
    base = as_poly(den_pow.base)
    p = as_poly(num)
    if base is None or p is None:
        return None
    k = -r.numerator
    divided = 0
    while divided < k:
        q = poly_div_exact(p, base)
        if q is None:
            break
        p = q
        divided += 1
    if divided == 0:
        return None
    left = poly_to_expr(p)
    if divided == k:
        return left
    return mul(left, pow_(den_pow.base, Fraction(-(k - divided))))


def free_variables(e: Expression) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, (Add, Sub, Mul, Div)):
        return free_variables(e.a) | free_variables(e.b)
    if isinstance(e, Neg):
        return free_variables(e.a)
    if isinstance(e, Pow):
        return free_variables(e.base)
    if isinstance(e, Call):
        return free_variables(e.arg)
    raise TypeError(f"not an Expression: {e!r}")


def is_const(e: Expression) -> bool:
    return isinstance(e, Const)
