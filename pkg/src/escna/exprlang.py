"""Small expression language for system fields, Lyapunov-like functions and
scalar input nonlinearities.

Grammar (lowest to highest precedence)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right associative
    primary := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Identifiers are restricted to a closed variable set (``t``, ``u``, ``y`` and
``x1``, ``x2``, ... by default) plus the constant ``pi``.  Expressions are
immutable; they can be evaluated, differentiated, printed back to source and
compiled to plain Python callables (``math`` or ``numpy`` backed).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

__all__ = [
    "Expr",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "ExprError",
    "ExprSyntaxError",
    "UnknownIdentifierError",
    "UnknownFunctionError",
    "ArityError",
    "UnboundVariableError",
    "DomainError",
    "FUNCTIONS",
    "parse_expr",
    "eval_expr",
    "diff_expr",
    "simplify",
    "free_vars",
    "to_source",
    "compile_exprs",
    "as_expr",
]

FUNCTIONS = {
    "cos": 1,
    "sin": 1,
    "exp": 1,
    "log": 1,
    "abs": 1,
    "sgn": 1,
    "sqrt": 1,
    "min": 2,
    "max": 2,
}
CONSTANTS = {"pi": math.pi}

_STATE_VAR = re.compile(r"x[1-9][0-9]*\Z")


class ExprError(ValueError):
    pass


class ExprSyntaxError(ExprError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnknownIdentifierError(ExprSyntaxError):
    pass


class UnknownFunctionError(ExprSyntaxError):
    pass


class ArityError(ExprSyntaxError):
    pass


class UnboundVariableError(ExprError):
    pass


class DomainError(ExprError, ArithmeticError):
    pass


# ---------------------------------------------------------------------------
# AST


class Expr:
    """Base of all expression nodes.

    Arithmetic operators build new trees, so averaged fields can be composed
    in code: ``f - gain * g * g * dv``.
    """

    __slots__ = ()

    def __add__(self, other):
        return BinOp("+", self, as_expr(other))

    def __radd__(self, other):
        return BinOp("+", as_expr(other), self)

    def __sub__(self, other):
        return BinOp("-", self, as_expr(other))

    def __rsub__(self, other):
        return BinOp("-", as_expr(other), self)

    def __mul__(self, other):
        return BinOp("*", self, as_expr(other))

    def __rmul__(self, other):
        return BinOp("*", as_expr(other), self)

    def __truediv__(self, other):
        return BinOp("/", self, as_expr(other))

    def __rtruediv__(self, other):
        return BinOp("/", as_expr(other), self)

    def __pow__(self, other):
        return BinOp("^", self, as_expr(other))

    def __neg__(self):
        return Neg(self)

    def __str__(self):
        return to_source(self)


@dataclass(frozen=True, eq=True, slots=True)
class Num(Expr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, eq=True, slots=True)
class Var(Expr):
    name: str


@dataclass(frozen=True, eq=True, slots=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True, eq=True, slots=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True, eq=True, slots=True)
class Call(Expr):
    name: str
    args: tuple


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, str):
        return parse_expr(value)
    return Num(float(value))


# ---------------------------------------------------------------------------
# Parsing

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),])
    """,
    re.VERBOSE,
)


def _tokenize(source: str):
    tokens = []
    pos = 0
    byte_pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {source[pos]!r}", byte_pos)
        text = m.group()
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, text, byte_pos))
        byte_pos += len(text.encode("utf-8"))
        pos = m.end()
    tokens.append(("end", "", byte_pos))
    return tokens


def _default_allowed(name: str) -> bool:
    return name in ("t", "u", "y") or _STATE_VAR.match(name) is not None


class _Parser:
    def __init__(self, source: str, allowed: Callable[[str], bool]):
        self.tokens = _tokenize(source)
        self.i = 0
        self.allowed = allowed

    def peek(self, k=0):
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, text):
        tok = self.take()
        if tok[1] != text:
            found = tok[1] or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", tok[2])
        return tok

    def parse(self) -> Expr:
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ExprSyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[1] == "-":
            self.take()
            # "-2" is a literal, "-2^2" is -(2^2) and "-(2)" stays a negation
            if self.peek()[0] == "num" and self.peek(1)[1] != "^":
                return Num(-float(self.take()[1]))
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.primary()
        if self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def primary(self):
        kind, text, offset = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[1] == "(":
                return self.call(text, offset)
            if text in CONSTANTS:
                return Num(CONSTANTS[text])
            if text in FUNCTIONS:
                raise ExprSyntaxError(f"function {text!r} used without arguments", offset)
            if not self.allowed(text):
                raise UnknownIdentifierError(f"unknown identifier {text!r}", offset)
            return Var(text)
        if text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = text or "end of input"
        raise ExprSyntaxError(f"unexpected token {found!r}", offset)

    def call(self, name, offset):
        if name not in FUNCTIONS:
            raise UnknownFunctionError(f"unknown function {name!r}", offset)
        self.expect("(")
        args = [self.expr()]
        while self.peek()[1] == ",":
            self.take()
            args.append(self.expr())
        self.expect(")")
        if len(args) != FUNCTIONS[name]:
            raise ArityError(
                f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}", offset
            )
        return Call(name, tuple(args))


def parse_expr(source: str, variables: Iterable[str] | None = None) -> Expr:
    """Parse ``source`` into an expression tree.

    ``variables`` closes the identifier set; by default ``t``, ``u``, ``y``
    and ``x1``, ``x2``, ... are accepted.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if variables is None:
        allowed = _default_allowed
    else:
        names = frozenset(variables)
        allowed = names.__contains__
    return _Parser(source, allowed).parse()


# ---------------------------------------------------------------------------
# Printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 4}
_NEG_PREC = 3
_ATOM = 5


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _NEG_PREC
    return _ATOM


def _fmt_literal(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _fmt_num(v: float) -> str:
    if v < 0 or (v == 0 and math.copysign(1.0, v) < 0):
        return f"(-{_fmt_literal(-v)})"
    return _fmt_literal(v)


def to_source(e: Expr) -> str:
    """Render ``e`` with minimal parentheses; ``parse_expr`` inverts it."""
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Call):
        return f"{e.name}({', '.join(to_source(a) for a in e.args)})"
    if isinstance(e, Neg):
        inner = to_source(e.arg)
        if isinstance(e.arg, Num) or _prec(e.arg) < _NEG_PREC:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        left = to_source(e.left)
        right = to_source(e.right)
        if e.op == "^":
            if _prec(e.left) <= p:
                left = f"({left})"
            if _prec(e.right) < p:
                right = f"({right})"
            return f"{left}^{right}"
        if _prec(e.left) < p:
            left = f"({left})"
        if _prec(e.right) <= p:
            right = f"({right})"
        return f"{left}{e.op}{right}" if e.op in "*/" else f"{left} {e.op} {right}"
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Evaluation


def _sgn(a):
    return (a > 0) - (a < 0)


def _div(a, b):
    if b == 0:
        raise DomainError("division by zero")
    return a / b


def _pow(a, b):
    if a == 0 and b < 0:
        raise DomainError("zero raised to a negative power")
    if a < 0 and b != math.floor(b):
        raise DomainError("negative base with non-integer exponent")
    try:
        return a**b
    except OverflowError as exc:
        raise DomainError("overflow in power") from exc


def _sqrt(a):
    if a < 0:
        raise DomainError("sqrt of negative number")
    return math.sqrt(a)


def _log(a):
    if a <= 0:
        raise DomainError("log of non-positive number")
    return math.log(a)


def _exp(a):
    try:
        return math.exp(a)
    except OverflowError as exc:
        raise DomainError("overflow in exp") from exc


_MATH_FUNCS = {
    "cos": math.cos,
    "sin": math.sin,
    "exp": _exp,
    "log": _log,
    "abs": abs,
    "sgn": _sgn,
    "sqrt": _sqrt,
    "min": min,
    "max": max,
}


def eval_expr(e: Expr, bindings: Mapping[str, float]) -> float:
    """Evaluate ``e`` in double precision.

    Raises :class:`UnboundVariableError` for a free variable missing from
    ``bindings`` and :class:`DomainError` instead of producing NaN/inf.
    """
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise UnboundVariableError(f"variable {e.name!r} is not bound") from None
    if isinstance(e, Neg):
        return -eval_expr(e.arg, bindings)
    if isinstance(e, BinOp):
        a = eval_expr(e.left, bindings)
        b = eval_expr(e.right, bindings)
        if e.op == "+":
            r = a + b
        elif e.op == "-":
            r = a - b
        elif e.op == "*":
            r = a * b
        elif e.op == "/":
            r = _div(a, b)
        else:
            r = _pow(a, b)
        if not math.isfinite(r):
            raise DomainError(f"non-finite result in {e.op!r}")
        return r
    if isinstance(e, Call):
        return float(_MATH_FUNCS[e.name](*(eval_expr(a, bindings) for a in e.args)))
    raise TypeError(f"not an expression: {e!r}")


def free_vars(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Num):
        return frozenset()
    if isinstance(e, Neg):
        return free_vars(e.arg)
    if isinstance(e, BinOp):
        return free_vars(e.left) | free_vars(e.right)
    return frozenset().union(*(free_vars(a) for a in e.args))


# ---------------------------------------------------------------------------
# Simplification and differentiation

ZERO = Num(0.0)
ONE = Num(1.0)
TWO = Num(2.0)


def _is(e, v):
    return isinstance(e, Num) and e.value == v


def simplify(e: Expr) -> Expr:
    """Constant folding plus the neutral-element rules for + - * / ^."""
    if isinstance(e, (Num, Var)):
        return e
    if isinstance(e, Neg):
        a = simplify(e.arg)
        if isinstance(a, Num):
            return Num(-a.value)
        if isinstance(a, Neg):
            return a.arg
        return Neg(a)
    if isinstance(e, Call):
        args = tuple(simplify(a) for a in e.args)
        if all(isinstance(a, Num) for a in args):
            try:
                return Num(eval_expr(Call(e.name, args), {}))
            except DomainError:
                pass
        return Call(e.name, args)
    a = simplify(e.left)
    b = simplify(e.right)
    if isinstance(a, Num) and isinstance(b, Num):
        try:
            return Num(eval_expr(BinOp(e.op, a, b), {}))
        except DomainError:
            return BinOp(e.op, a, b)
    op = e.op
    if op == "+":
        if _is(a, 0):
            return b
        if _is(b, 0):
            return a
    elif op == "-":
        if _is(b, 0):
            return a
        if _is(a, 0):
            return simplify(Neg(b))
    elif op == "*":
        if _is(a, 0) or _is(b, 0):
            return ZERO
        if _is(a, 1):
            return b
        if _is(b, 1):
            return a
        if _is(a, -1):
            return simplify(Neg(b))
        if _is(b, -1):
            return simplify(Neg(a))
    elif op == "/":
        if _is(b, 1):
            return a
    elif op == "^":
        if _is(b, 1):
            return a
        if _is(b, 0):
            return ONE
    return BinOp(op, a, b)


def _d(e: Expr, var: str) -> Expr:
    if isinstance(e, Num):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, Neg):
        return Neg(_d(e.arg, var))
    if isinstance(e, BinOp):
        a, b = e.left, e.right
        if e.op in "+-":
            return BinOp(e.op, _d(a, var), _d(b, var))
        if e.op == "*":
            return _d(a, var) * b + a * _d(b, var)
        if e.op == "/":
            return (_d(a, var) * b - a * _d(b, var)) / b ** TWO
        # a^b
        if var not in free_vars(b):
            return b * a ** (b - ONE) * _d(a, var)
        return e * (_d(b, var) * Call("log", (a,)) + b * _d(a, var) / a)
    name = e.name
    if name == "min" or name == "max":
        a, b = e.args
        da, db = _d(a, var), _d(b, var)
        # min(a,b) = (a+b-|a-b|)/2, max(a,b) = (a+b+|a-b|)/2
        kink = Call("sgn", (a - b,)) * (da - db)
        return (da + db - kink) / TWO if name == "min" else (da + db + kink) / TWO
    (a,) = e.args
    da = _d(a, var)
    if name == "cos":
        return Neg(Call("sin", (a,))) * da
    if name == "sin":
        return Call("cos", (a,)) * da
    if name == "exp":
        return e * da
    if name == "log":
        return da / a
    if name == "abs":
        return Call("sgn", (a,)) * da
    if name == "sgn":
        return ZERO
    if name == "sqrt":
        return da / (TWO * e)
    raise TypeError(f"cannot differentiate {name!r}")


def diff_expr(e: Expr, var: str) -> Expr:
    """Partial derivative of ``e`` with respect to ``var``.

    ``abs`` differentiates to ``sgn`` and ``sgn`` to 0, so the result is
    total; ``min``/``max`` follow the same piecewise convention.
    """
    return simplify(_d(e, var))


# ---------------------------------------------------------------------------
# Compilation to Python callables


def _np_div(a, b):
    if np.any(np.asarray(b) == 0):
        raise DomainError("division by zero")
    return a / b


def _np_pow(a, b):
    a_ = np.asarray(a)
    b_ = np.asarray(b)
    if np.any((a_ < 0) & (b_ != np.floor(b_))):
        raise DomainError("negative base with non-integer exponent")
    if np.any((a_ == 0) & (b_ < 0)):
        raise DomainError("zero raised to a negative power")
    return np.power(a, b)


def _np_sqrt(a):
    if np.any(np.asarray(a) < 0):
        raise DomainError("sqrt of negative number")
    return np.sqrt(a)


def _np_log(a):
    if np.any(np.asarray(a) <= 0):
        raise DomainError("log of non-positive number")
    return np.log(a)


_BACKENDS = {
    "math": (
        {
            "_div": _div,
            "_pow": _pow,
            "_sqrt": _sqrt,
            "_log": _log,
            "_exp": math.exp,
            "_sgn": _sgn,
            "_cos": math.cos,
            "_sin": math.sin,
            "_abs": abs,
            "_min": min,
            "_max": max,
        }
    ),
    "numpy": (
        {
            "_div": _np_div,
            "_pow": _np_pow,
            "_sqrt": _np_sqrt,
            "_log": _np_log,
            "_exp": np.exp,
            "_sgn": np.sign,
            "_cos": np.cos,
            "_sin": np.sin,
            "_abs": np.abs,
            "_min": np.minimum,
            "_max": np.maximum,
        }
    ),
}


def _code_num(v: float) -> str:
    return f"({v!r})" if v < 0 or math.copysign(1.0, v) < 0 else repr(v)


def _codegen(e: Expr) -> str:
    if isinstance(e, Num):
        return _code_num(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_codegen(e.arg)})"
    if isinstance(e, Call):
        return f"_{e.name}({', '.join(_codegen(a) for a in e.args)})"
    a = _codegen(e.left)
    if e.op in "+-*":
        return f"({a} {e.op} {_codegen(e.right)})"
    r = e.right
    if e.op == "/":
        if isinstance(r, Num) and r.value != 0:
            return f"({a} / {_code_num(r.value)})"
        return f"_div({a}, {_codegen(r)})"
    if isinstance(r, Num) and r.value >= 0 and r.value == int(r.value) and r.value < 64:
        return f"({a} ** {int(r.value)})"
    return f"_pow({a}, {_codegen(r)})"


def compile_exprs(
    exprs: Union[Expr, Sequence[Expr]],
    args: Sequence[str],
    backend: str = "math",
) -> Callable:
    """Compile one expression (or a sequence) into ``fn(*args)``.

    A sequence compiles to a function returning a tuple.  The ``math``
    backend is the fast scalar path; ``numpy`` accepts arrays and broadcasts.
    Variables outside ``args`` are rejected up front.
    """
    single = isinstance(exprs, Expr)
    items = [exprs] if single else list(exprs)
    allowed = set(args)
    for item in items:
        missing = free_vars(item) - allowed
        if missing:
            raise UnboundVariableError(f"unbound variable(s): {sorted(missing)}")
    bodies = [_codegen(item) for item in items]
    ret = bodies[0] if single else "(" + "".join(b + ", " for b in bodies) + ")"
    src = f"def _compiled({', '.join(args)}):\n    return {ret}\n"
    namespace = dict(_BACKENDS[backend])
    exec(compile(src, "<escna-expr>", "exec"), namespace)
    fn = namespace["_compiled"]
    fn.source = src
    return fn
