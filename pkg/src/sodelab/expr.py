"""Expression trees: parsing, evaluation, exact differentiation.

All scalar formulas in the package (Hamiltonians, conformal factors, chart
components, force blocks) are held as small immutable ASTs so that every
derivative taken downstream is symbolic and exact.  Grammar::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := base ('^' factor)?            # '^' is right-associative
    base   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')' | '-' base

Identifiers match ``[a-zA-Z][a-zA-Z0-9_]*``.  Note that the grammar binds the
leading minus inside ``base``, so ``-x^2`` parses as ``(-x)^2``.

Construction helpers (:func:`add`, :func:`mul`, ...) fold constants and drop
algebraic no-ops (``0 + x``, ``1 * x``); no other simplification is applied, so
derivative trees may be verbose but evaluate exactly.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping

from .errors import (
    EvaluationDomainError,
    ExprSyntaxError,
    UnboundVariableError,
    UnknownIdentifierError,
)

__all__ = [
    "Expression",
    "Const",
    "Var",
    "Neg",
    "Add",
    "Sub",
    "Mul",
    "Div",
    "Pow",
    "Call",
    "VariableContext",
    "parse",
    "evaluate",
    "differentiate",
    "substitute",
    "free_variables",
    "to_source",
    "compile_scalar",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_",
    "call",
    "const",
    "var",
]

_FUNCTIONS: dict[str, Callable[[float], float]] = {
    "sin": math.sin,
    "cos": math.cos,
    "exp": math.exp,
    "log": math.log,
    "sqrt": math.sqrt,
    "abs": math.fabs,
}

_IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*\Z")


class Expression:
    """Base class for immutable formula nodes.

    Python arithmetic operators are overloaded to build new trees (with the
    same constant folding as the module helpers), which keeps hand-built
    formulas readable.
    """

    __slots__ = ()

    def __add__(self, other: "Expression | float") -> "Expression":
        return add(self, _coerce(other))

    def __radd__(self, other: "Expression | float") -> "Expression":
        return add(_coerce(other), self)

    def __sub__(self, other: "Expression | float") -> "Expression":
        return sub(self, _coerce(other))

    def __rsub__(self, other: "Expression | float") -> "Expression":
        return sub(_coerce(other), self)

    def __mul__(self, other: "Expression | float") -> "Expression":
        return mul(self, _coerce(other))

    def __rmul__(self, other: "Expression | float") -> "Expression":
        return mul(_coerce(other), self)

    def __truediv__(self, other: "Expression | float") -> "Expression":
        return div(self, _coerce(other))

    def __rtruediv__(self, other: "Expression | float") -> "Expression":
        return div(_coerce(other), self)

    def __pow__(self, other: "Expression | float") -> "Expression":
        return pow_(self, _coerce(other))

    def __neg__(self) -> "Expression":
        return neg(self)

    def __str__(self) -> str:
        return to_source(self)


@dataclass(frozen=True, slots=True)
class Const(Expression):
    value: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True, slots=True)
class Var(Expression):
    name: str


@dataclass(frozen=True, slots=True)
class Neg(Expression):
    arg: Expression


@dataclass(frozen=True, slots=True)
class Add(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True, slots=True)
class Sub(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True, slots=True)
class Mul(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True, slots=True)
class Div(Expression):
    left: Expression
    right: Expression


@dataclass(frozen=True, slots=True)
class Pow(Expression):
    base: Expression
    exponent: Expression


@dataclass(frozen=True, slots=True)
class Call(Expression):
    fn: str
    arg: Expression


ZERO = Const(0.0)
ONE = Const(1.0)


def const(value: float) -> Const:
    return Const(float(value))


def var(name: str) -> Var:
    return Var(name)


def _coerce(value: "Expression | float") -> Expression:
    if isinstance(value, Expression):
        return value
    if isinstance(value, (int, float)):
        return Const(float(value))
    raise TypeError(f"cannot use {type(value).__name__} as an expression")


def _is_const(e: Expression, value: float | None = None) -> bool:
    return isinstance(e, Const) and (value is None or e.value == value)


# --- folding constructors -------------------------------------------------


def add(a: Expression, b: Expression) -> Expression:
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return Add(a, b)


def sub(a: Expression, b: Expression) -> Expression:
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    if a == b:
        return ZERO
    return Sub(a, b)


def mul(a: Expression, b: Expression) -> Expression:
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        folded = a.value * b.value
        if math.isfinite(folded):
            return Const(folded)
    return Mul(a, b)


def div(a: Expression, b: Expression) -> Expression:
    if _is_const(b, 1.0):
        return a
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0.0:
        folded = a.value / b.value
        if math.isfinite(folded):
            return Const(folded)
    return Div(a, b)


def neg(a: Expression) -> Expression:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def pow_(base: Expression, exponent: Expression) -> Expression:
    if _is_const(exponent, 1.0):
        return base
    if _is_const(exponent, 0.0):
        return ONE
    if isinstance(base, Const) and isinstance(exponent, Const):
        try:
            folded = math.pow(base.value, exponent.value)
        except (ValueError, OverflowError):
            return Pow(base, exponent)
        if math.isfinite(folded):
            return Const(folded)
    return Pow(base, exponent)


def call(fn: str, arg: Expression) -> Expression:
    if fn not in _FUNCTIONS:
        raise ValueError(f"unknown function '{fn}'")
    if isinstance(arg, Const):
        try:
            folded = _FUNCTIONS[fn](arg.value)
        except (ValueError, OverflowError):
            return Call(fn, arg)  # surfaces as a domain error at evaluation
        if math.isfinite(folded):
            return Const(folded)
    return Call(fn, arg)


# --- variable contexts ----------------------------------------------------


@dataclass(frozen=True)
class VariableContext:
    """Ordered, unique coordinate names defining point layout.

    Points are sequences ordered like :attr:`names`; the context is the single
    source of truth for name <-> index mapping across fields and charts.
    """

    names: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.names) == 0:
            raise ValueError("a variable context needs at least one name")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate coordinate names in {self.names}")
        for name in self.names:
            if not _IDENT_RE.match(name):
                raise ValueError(f"invalid coordinate name '{name}'")
            if name in _FUNCTIONS:
                raise ValueError(f"coordinate name '{name}' shadows a function")

    @classmethod
    def of(cls, *names: str) -> "VariableContext":
        return cls(tuple(names))

    @property
    def dim(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"'{name}' is not a coordinate of this context") from None

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def __iter__(self):
        return iter(self.names)

    def env(self, point) -> dict[str, float]:
        """Bind a point (sequence ordered like ``names``) to an eval environment."""
        if len(point) != len(self.names):
            raise ValueError(
                f"point has {len(point)} coordinates, context has {len(self.names)}"
            )
        return {name: float(value) for name, value in zip(self.names, point)}


def qv_context(n: int, base: str = "q", fiber: str = "v") -> VariableContext:
    """Context (q1..qn, v1..vn) for a tangent-bundle chart."""
    names = tuple(f"{base}{k}" for k in range(1, n + 1)) + tuple(
        f"{fiber}{k}" for k in range(1, n + 1)
    )
    return VariableContext(names)


def phase_context(n: int) -> VariableContext:
    """Context (q1..qn, p1..pn) for a cotangent-bundle chart."""
    return qv_context(n, base="q", fiber="p")


# --- parsing ----------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
)


def _tokenize(source: str) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    pos = 0
    while pos < len(source):
        if source[pos].isspace():
            pos += 1
            continue
        match = _TOKEN_RE.match(source, pos)
        if match is None:
            raise ExprSyntaxError(f"unexpected character '{source[pos]}'", pos)
        kind = match.lastgroup or "op"
        tokens.append((kind, match.group(), pos))
        pos = match.end()
    tokens.append(("end", "", len(source)))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str, int]], ctx: VariableContext) -> None:
        self.tokens = tokens
        self.ctx = ctx
        self.i = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def advance(self) -> tuple[str, str, int]:
        token = self.tokens[self.i]
        self.i += 1
        return token

    def expect_op(self, text: str) -> None:
        kind, value, pos = self.peek()
        if kind != "op" or value != text:
            raise ExprSyntaxError(f"expected '{text}'", pos)
        self.advance()

    def parse_expr(self) -> Expression:
        node = self.parse_term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.advance()
                rhs = self.parse_term()
                node = add(node, rhs) if value == "+" else sub(node, rhs)
            else:
                return node

    def parse_term(self) -> Expression:
        node = self.parse_factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "*/":
                self.advance()
                rhs = self.parse_factor()
                node = mul(node, rhs) if value == "*" else div(node, rhs)
            else:
                return node

    def parse_factor(self) -> Expression:
        base = self.parse_base()
        kind, value, _ = self.peek()
        if kind == "op" and value == "^":
            self.advance()
            exponent = self.parse_factor()  # right-associative
            return pow_(base, exponent)
        return base

    def parse_base(self) -> Expression:
        kind, value, pos = self.advance()
        if kind == "num":
            return Const(float(value))
        if kind == "ident":
            next_kind, next_value, _ = self.peek()
            if next_kind == "op" and next_value == "(":
                if value not in _FUNCTIONS:
                    raise UnknownIdentifierError(value, pos)
                self.advance()
                inner = self.parse_expr()
                self.expect_op(")")
                return call(value, inner)
            if value not in self.ctx:
                raise UnknownIdentifierError(value, pos)
            return Var(value)
        if kind == "op" and value == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        if kind == "op" and value == "-":
            return neg(self.parse_base())
        if kind == "end":
            raise ExprSyntaxError("unexpected end of input", pos)
        raise ExprSyntaxError(f"unexpected token '{value}'", pos)


def parse(source: str, ctx: VariableContext) -> Expression:
    """Parse ``source`` against ``ctx``; identifiers must be coordinates of ctx."""
    tokens = _tokenize(source)
    parser = _Parser(tokens, ctx)
    node = parser.parse_expr()
    kind, value, pos = parser.peek()
    if kind != "end":
        raise ExprSyntaxError(f"unexpected token '{value}'", pos)
    return node


# --- evaluation -------------------------------------------------------------


def evaluate(e: Expression, env: Mapping[str, float]) -> float:
    """Evaluate ``e`` with coordinate values from ``env``.

    Pure: neither the expression nor the environment is mutated.  Domain
    violations (division by zero, log/sqrt outside their domain, negative base
    under a fractional power) raise :class:`EvaluationDomainError`; exponent
    overflow saturates to ``inf`` so blow-up detection can see it.
    """
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return env[e.name]
        except KeyError:
            raise UnboundVariableError(f"no value bound for '{e.name}'") from None
    if isinstance(e, Neg):
        return -evaluate(e.arg, env)
    if isinstance(e, Add):
        return evaluate(e.left, env) + evaluate(e.right, env)
    if isinstance(e, Sub):
        return evaluate(e.left, env) - evaluate(e.right, env)
    if isinstance(e, Mul):
        return evaluate(e.left, env) * evaluate(e.right, env)
    if isinstance(e, Div):
        denom = evaluate(e.right, env)
        try:
            return evaluate(e.left, env) / denom
        except ZeroDivisionError:
            raise EvaluationDomainError("division by zero") from None
    if isinstance(e, Pow):
        base_value = evaluate(e.base, env)
        exp_value = evaluate(e.exponent, env)
        try:
            return math.pow(base_value, exp_value)
        except ValueError:
            raise EvaluationDomainError(
                f"pow domain error: base={base_value!r}, exponent={exp_value!r}"
            ) from None
        except OverflowError:
            return math.inf
    if isinstance(e, Call):
        arg_value = evaluate(e.arg, env)
        try:
            return _FUNCTIONS[e.fn](arg_value)
        except ValueError:
            raise EvaluationDomainError(f"{e.fn} domain error at {arg_value!r}") from None
        except OverflowError:
            return math.inf
    raise TypeError(f"not an expression node: {e!r}")


# --- differentiation --------------------------------------------------------


def differentiate(e: Expression, name: str) -> Expression:
    """Exact partial derivative of ``e`` with respect to coordinate ``name``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == name else ZERO
    if isinstance(e, Neg):
        return neg(differentiate(e.arg, name))
    if isinstance(e, Add):
        return add(differentiate(e.left, name), differentiate(e.right, name))
    if isinstance(e, Sub):
        return sub(differentiate(e.left, name), differentiate(e.right, name))
    if isinstance(e, Mul):
        return add(
            mul(differentiate(e.left, name), e.right),
            mul(e.left, differentiate(e.right, name)),
        )
    if isinstance(e, Div):
        return div(
            sub(
                mul(differentiate(e.left, name), e.right),
                mul(e.left, differentiate(e.right, name)),
            ),
            mul(e.right, e.right),
        )
    if isinstance(e, Pow):
        dbase = differentiate(e.base, name)
        dexp = differentiate(e.exponent, name)
        if _is_const(dexp, 0.0) and isinstance(e.exponent, Const):
            # d(b^c) = c * b^(c-1) * b', valid for negative bases with integer c
            c = e.exponent.value
            return mul(mul(Const(c), pow_(e.base, Const(c - 1.0))), dbase)
        # general case needs base > 0 at evaluation time
        return mul(
            e,
            add(
                mul(dexp, call("log", e.base)),
                div(mul(e.exponent, dbase), e.base),
            ),
        )
    if isinstance(e, Call):
        darg = differentiate(e.arg, name)
        if e.fn == "sin":
            return mul(call("cos", e.arg), darg)
        if e.fn == "cos":
            return neg(mul(call("sin", e.arg), darg))
        if e.fn == "exp":
            return mul(call("exp", e.arg), darg)
        if e.fn == "log":
            return div(darg, e.arg)
        if e.fn == "sqrt":
            return div(darg, mul(Const(2.0), call("sqrt", e.arg)))
        if e.fn == "abs":
            # sign(x) * x' away from zero; evaluation at zero is a domain error
            return mul(div(e.arg, call("abs", e.arg)), darg)
    raise TypeError(f"not an expression node: {e!r}")


# --- structural helpers -----------------------------------------------------


def free_variables(e: Expression) -> frozenset[str]:
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, Neg):
        return free_variables(e.arg)
    if isinstance(e, (Add, Sub, Mul, Div)):
        return free_variables(e.left) | free_variables(e.right)
    if isinstance(e, Pow):
        return free_variables(e.base) | free_variables(e.exponent)
    if isinstance(e, Call):
        return free_variables(e.arg)
    raise TypeError(f"not an expression node: {e!r}")


def substitute(e: Expression, bindings: Mapping[str, Expression]) -> Expression:
    """Replace variables by expressions, rebuilding through the folding helpers."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return bindings.get(e.name, e)
    if isinstance(e, Neg):
        return neg(substitute(e.arg, bindings))
    if isinstance(e, Add):
        return add(substitute(e.left, bindings), substitute(e.right, bindings))
    if isinstance(e, Sub):
        return sub(substitute(e.left, bindings), substitute(e.right, bindings))
    if isinstance(e, Mul):
        return mul(substitute(e.left, bindings), substitute(e.right, bindings))
    if isinstance(e, Div):
        return div(substitute(e.left, bindings), substitute(e.right, bindings))
    if isinstance(e, Pow):
        return pow_(substitute(e.base, bindings), substitute(e.exponent, bindings))
    if isinstance(e, Call):
        return call(e.fn, substitute(e.arg, bindings))
    raise TypeError(f"not an expression node: {e!r}")


# --- printing ---------------------------------------------------------------

_PREC_ADD = 1
_PREC_MUL = 2
_PREC_POW = 3
_PREC_NEG = 4
_PREC_ATOM = 5


def _prec(e: Expression) -> int:
    if isinstance(e, (Add, Sub)):
        return _PREC_ADD
    if isinstance(e, (Mul, Div)):
        return _PREC_MUL
    if isinstance(e, Pow):
        return _PREC_POW
    if isinstance(e, Neg):
        return _PREC_NEG
    return _PREC_ATOM


def _wrap(e: Expression, minimum: int) -> str:
    text = to_source(e)
    if _prec(e) < minimum:
        return f"({text})"
    return text


def to_source(e: Expression) -> str:
    """Render to text that reparses to an equivalent tree under this grammar."""
    if isinstance(e, Const):
        if e.value == int(e.value) and abs(e.value) < 1e16:
            return repr(int(e.value))
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return "-" + _wrap(e.arg, _PREC_ATOM)
    if isinstance(e, Add):
        return f"{_wrap(e.left, _PREC_ADD)} + {_wrap(e.right, _PREC_ADD + 1)}"
    if isinstance(e, Sub):
        return f"{_wrap(e.left, _PREC_ADD)} - {_wrap(e.right, _PREC_ADD + 1)}"
    if isinstance(e, Mul):
        return f"{_wrap(e.left, _PREC_MUL)}*{_wrap(e.right, _PREC_MUL + 1)}"
    if isinstance(e, Div):
        return f"{_wrap(e.left, _PREC_MUL)}/{_wrap(e.right, _PREC_MUL + 1)}"
    if isinstance(e, Pow):
        # left operand fully wrapped unless atomic: '^' grabs a bare '-x' first
        return f"{_wrap(e.base, _PREC_ATOM)}^{_wrap(e.exponent, _PREC_POW)}"
    if isinstance(e, Call):
        return f"{e.fn}({to_source(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


# --- compilation ------------------------------------------------------------


def _python_source(e: Expression) -> str:
    if isinstance(e, Const):
        return repr(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{_python_source(e.arg)})"
    if isinstance(e, Add):
        return f"({_python_source(e.left)} + {_python_source(e.right)})"
    if isinstance(e, Sub):
        return f"({_python_source(e.left)} - {_python_source(e.right)})"
    if isinstance(e, Mul):
        return f"({_python_source(e.left)} * {_python_source(e.right)})"
    if isinstance(e, Div):
        return f"({_python_source(e.left)} / {_python_source(e.right)})"
    if isinstance(e, Pow):
        return f"_pow({_python_source(e.base)}, {_python_source(e.exponent)})"
    if isinstance(e, Call):
        return f"_{e.fn}({_python_source(e.arg)})"
    raise TypeError(f"not an expression node: {e!r}")


def compile_scalar(e: Expression, ctx: VariableContext) -> Callable[..., float]:
    """Compile to ``f(point) -> float`` with the same semantics as :func:`evaluate`.

    The hot paths (integration, dense sampling, grid certification) call the
    compiled form; ``evaluate`` remains the reference tree walk.
    """
    used = free_variables(e)
    unknown = used - set(ctx.names)
    if unknown:
        raise UnboundVariableError(
            f"expression uses {sorted(unknown)} outside context {ctx.names}"
        )
    lines = ["def _compiled(_p):"]
    for index, name in enumerate(ctx.names):
        if name in used:
            lines.append(f"    {name} = _p[{index}]")
    lines.append(f"    return {_python_source(e)}")
    namespace: dict[str, object] = {
        "_pow": math.pow,
        "_sin": math.sin,
        "_cos": math.cos,
        "_exp": math.exp,
        "_log": math.log,
        "_sqrt": math.sqrt,
        "_abs": math.fabs,
        "__builtins__": {},
    }
    exec(compile("\n".join(lines), "<sodelab-expr>", "exec"), namespace)
    raw = namespace["_compiled"]

    def compiled(point, _raw=raw) -> float:
        try:
            return _raw(point)
        except (ValueError, ZeroDivisionError) as exc:
            raise EvaluationDomainError(str(exc)) from None
        except OverflowError:
            return math.inf

    return compiled
