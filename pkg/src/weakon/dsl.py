"""A small text language for vector fields, with exact forward-mode Jacobians.

Source is a list of statements separated by ``;`` or newlines::

    param b = 0.5
    dx0 = x1
    dx1 = -sin(x0) - b*x1

Expressions use ``+ - * /``, unary minus, ``^`` with a non-negative integer
literal exponent, the functions ``sin cos tanh exp``, the state variables
``x0 .. x(n-1)``, time ``t`` and declared parameters.  ``#`` starts a comment.

Evaluation accepts a single state of shape ``(n,)`` or a batch of shape
``(..., n)``; the whole batch goes through one pass over the tree.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Callable, Mapping, Sequence

import numpy as np

from . import dual
from .errors import DSLSyntaxError, EvaluationError, UndeclaredVariableError

__all__ = [
    "Node", "Num", "Var", "Time", "Param", "Neg", "BinOp", "Pow", "Call",
    "VectorFieldExpr", "ScalarExpr", "parse", "parse_scalar", "unparse",
    "FUNCTIONS",
]

FUNCTIONS = ("sin", "cos", "tanh", "exp")
_RESERVED = set(FUNCTIONS) | {"t", "param"}
_STATE_RE = re.compile(r"x(\d+)$")
_LHS_RE = re.compile(r"dx(\d+)$")


# --------------------------------------------------------------------------
# expression trees


class Node:
    __slots__ = ()


@dataclass(frozen=True)
class Num(Node):
    value: float


@dataclass(frozen=True)
class Var(Node):
    index: int


@dataclass(frozen=True)
class Time(Node):
    pass


@dataclass(frozen=True)
class Param(Node):
    name: str


@dataclass(frozen=True)
class Neg(Node):
    operand: Node


@dataclass(frozen=True)
class BinOp(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class Pow(Node):
    base: Node
    exponent: int


@dataclass(frozen=True)
class Call(Node):
    func: str
    arg: Node


def walk(node: Node):
    yield node
    if isinstance(node, Neg):
        yield from walk(node.operand)
    elif isinstance(node, BinOp):
        yield from walk(node.left)
        yield from walk(node.right)
    elif isinstance(node, Pow):
        yield from walk(node.base)
    elif isinstance(node, Call):
        yield from walk(node.arg)


def depth(node: Node) -> int:
    if isinstance(node, Neg):
        return 1 + depth(node.operand)
    if isinstance(node, BinOp):
        return 1 + max(depth(node.left), depth(node.right))
    if isinstance(node, Pow):
        return 1 + depth(node.base)
    if isinstance(node, Call):
        return 1 + depth(node.arg)
    return 1


def transform(node: Node, leaf: Callable[[Node], Node]) -> Node:
    """Rebuild ``node`` bottom-up, passing every leaf through ``leaf``."""
    if isinstance(node, Neg):
        return Neg(transform(node.operand, leaf))
    if isinstance(node, BinOp):
        return BinOp(node.op, transform(node.left, leaf), transform(node.right, leaf))
    if isinstance(node, Pow):
        return Pow(transform(node.base, leaf), node.exponent)
    if isinstance(node, Call):
        return Call(node.func, transform(node.arg, leaf))
    return leaf(node)


def shift_vars(node: Node, offset: int) -> Node:
    return transform(node, lambda n: Var(n.index + offset) if isinstance(n, Var) else n)


def inline_params(node: Node, params: Mapping[str, float]) -> Node:
    return transform(node, lambda n: Num(params[n.name]) if isinstance(n, Param) else n)


# --------------------------------------------------------------------------
# tokenizer / parser

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^(),=])
  | (?P<sep>[;\n])
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind not in ("ws", "comment"):
            toks.append(_Tok(kind, m.group(), line, pos - line_start + 1))
        if kind == "sep" and m.group() == "\n":
            line += 1
            line_start = m.end()
        pos = m.end()
    toks.append(_Tok("end", "", line, pos - line_start + 1))
    return toks


# binding powers
_BINARY = {"+": 10, "-": 10, "*": 20, "/": 20}
_UNARY_BP = 30
_POW_BP = 40


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def advance(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def error(self, msg: str, tok: _Tok | None = None):
        tok = tok or self.tok
        raise DSLSyntaxError(msg, tok.line, tok.col)

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            got = t.text or t.kind
            self.error(f"expected {want!r}, found {got!r}")
        return self.advance()

    def expression(self, rbp: int = 0) -> Node:
        left = self.prefix()
        while True:
            t = self.tok
            if t.kind != "op":
                break
            if t.text == "^":
                if _POW_BP <= rbp:
                    break
                self.advance()
                e = self.tok
                if e.kind != "num" or not re.fullmatch(r"\d+", e.text):
                    self.error("exponent must be a non-negative integer literal", e)
                self.advance()
                left = Pow(left, int(e.text))
                if self.tok.kind == "op" and self.tok.text == "^":
                    self.error("chained '^' is ambiguous; use parentheses")
                continue
            bp = _BINARY.get(t.text)
            if bp is None or bp <= rbp:
                break
            self.advance()
            right = self.expression(bp)
            left = BinOp(t.text, left, right)
        return left

    def prefix(self) -> Node:
        t = self.advance()
        if t.kind == "num":
            return Num(float(t.text))
        if t.kind == "op" and t.text == "-":
            return Neg(self.expression(_UNARY_BP))
        if t.kind == "op" and t.text == "+":
            return self.expression(_UNARY_BP)
        if t.kind == "op" and t.text == "(":
            e = self.expression()
            self.expect("op", ")")
            return e
        if t.kind == "name":
            if t.text in FUNCTIONS:
                self.expect("op", "(")
                arg = self.expression()
                self.expect("op", ")")
                return Call(t.text, arg)
            if self.tok.kind == "op" and self.tok.text == "(":
                self.error(f"unknown function {t.text!r}", t)
            if t.text == "t":
                return Time()
            m = _STATE_RE.match(t.text)
            if m:
                return _PosVar(int(m.group(1)), t.line, t.col)
            return _PosParam(t.text, t.line, t.col)
        self.error("unexpected end of input" if t.kind == "end" else f"unexpected {t.text!r}", t)

    def skip_separators(self):
        while self.tok.kind == "sep":
            self.advance()

    def end_statement(self):
        if self.tok.kind not in ("sep", "end"):
            self.error(f"unexpected {self.tok.text!r} after expression")


# positions are kept on leaves until name resolution, then dropped
@dataclass(frozen=True)
class _PosVar(Node):
    index: int
    line: int
    col: int


@dataclass(frozen=True)
class _PosParam(Node):
    name: str
    line: int
    col: int


def _resolve(node: Node, n: int | None, params: Mapping[str, float]) -> Node:
    def leaf(x: Node) -> Node:
        if isinstance(x, _PosVar):
            if n is None or x.index >= n:
                raise UndeclaredVariableError(
                    f"undeclared variable x{x.index}" + ("" if n is None else f" (n={n})"),
                    x.line, x.col)
            return Var(x.index)
        if isinstance(x, _PosParam):
            if x.name not in params:
                raise UndeclaredVariableError(f"undeclared name {x.name!r}", x.line, x.col)
            return Param(x.name)
        return x
    return transform(node, leaf)


def _const_value(node: Node, params: Mapping[str, float]) -> float:
    fn = _compile(inline_params(node, params))
    return float(fn((), 0.0))


def _parse_program(src: str, extra_params: Mapping[str, float] | None = None):
    p = _Parser(src)
    params: dict[str, float] = dict(extra_params or {})
    declared_here: set[str] = set()
    rhs: dict[int, tuple[Node, _Tok]] = {}
    while True:
        p.skip_separators()
        if p.tok.kind == "end":
            break
        head = p.expect("name")
        if head.text == "param":
            name = p.expect("name")
            if name.text in _RESERVED or _STATE_RE.match(name.text) or _LHS_RE.match(name.text):
                p.error(f"reserved name {name.text!r} cannot be a parameter", name)
            if name.text in declared_here:
                p.error(f"duplicate parameter {name.text!r}", name)
            p.expect("op", "=")
            node = p.expression()
            p.end_statement()
            for leaf in walk(node):
                if isinstance(leaf, (_PosVar, Time)):
                    p.error(f"parameter {name.text!r} must be a constant expression", name)
            node = _resolve(node, None, params)
            declared_here.add(name.text)
            # values supplied by the caller override the source default
            if extra_params is None or name.text not in extra_params:
                params[name.text] = _const_value(node, params)
            continue
        m = _LHS_RE.match(head.text)
        if not m:
            p.error(f"expected 'param' or 'dx<i>', found {head.text!r}", head)
        idx = int(m.group(1))
        if idx in rhs:
            p.error(f"duplicate definition of dx{idx}", head)
        p.expect("op", "=")
        node = p.expression()
        p.end_statement()
        rhs[idx] = (node, head)
    if not rhs:
        raise DSLSyntaxError("no 'dx<i> = ...' definitions found")
    n = len(rhs)
    for i in range(n):
        if i not in rhs:
            raise DSLSyntaxError(f"missing definition of dx{i}")
    exprs = tuple(_resolve(rhs[i][0], n, params) for i in range(n))
    return n, exprs, params


# --------------------------------------------------------------------------
# compilation to closures

_FUNCS = {"sin": dual.sin, "cos": dual.cos, "tanh": dual.tanh, "exp": dual.exp}
_OPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": lambda a, b: a / b,
}


def _compile(node: Node) -> Callable:
    """Compile a resolved tree into ``fn(xs, t)`` over floats, arrays or duals."""
    if isinstance(node, Num):
        v = node.value
        return lambda xs, t: v
    if isinstance(node, Var):
        i = node.index
        return lambda xs, t: xs[i]
    if isinstance(node, Time):
        return lambda xs, t: t
    if isinstance(node, Neg):
        f = _compile(node.operand)
        return lambda xs, t: -f(xs, t)
    if isinstance(node, BinOp):
        fl, fr, op = _compile(node.left), _compile(node.right), _OPS[node.op]
        return lambda xs, t: op(fl(xs, t), fr(xs, t))
    if isinstance(node, Pow):
        f, p = _compile(node.base), node.exponent
        if p == 0:
            return lambda xs, t: 1.0
        return lambda xs, t: f(xs, t) ** p
    if isinstance(node, Call):
        f, g = _compile(node.arg), _FUNCS[node.func]
        return lambda xs, t: g(f(xs, t))
    raise TypeError(f"cannot compile {node!r}")


def _batch_inputs(x, t, n: int):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise ValueError(f"state must have trailing dimension {n}, got shape {x.shape}")
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], t.shape)
    xs = [np.broadcast_to(x[..., i], shape) for i in range(n)]
    return xs, np.broadcast_to(t, shape), shape


def _check_finite(arr, component: int, what: str):
    if not np.all(np.isfinite(arr)):
        raise EvaluationError(f"non-finite {what}", component)


def _run(fn: Callable, xs, t, component: int):
    try:
        with np.errstate(all="ignore"):
            return fn(xs, t)
    except (ZeroDivisionError, OverflowError, ValueError) as exc:
        raise EvaluationError(str(exc) or type(exc).__name__, component) from None


# --------------------------------------------------------------------------
# public expression objects


@dataclass(frozen=True, eq=False)
class VectorFieldExpr:
    """Parsed vector field ``f(x, t)`` with ``n`` components."""

    n: int
    exprs: tuple
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.exprs) != self.n or self.n < 1:
            raise ValueError("need exactly n >= 1 component expressions")
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        for i, e in enumerate(self.exprs):
            for leaf in walk(e):
                if isinstance(leaf, Var) and not 0 <= leaf.index < self.n:
                    raise UndeclaredVariableError(f"undeclared variable x{leaf.index} in dx{i}")
                if isinstance(leaf, Param) and leaf.name not in self.params:
                    raise UndeclaredVariableError(f"undeclared name {leaf.name!r} in dx{i}")

    @cached_property
    def _compiled(self) -> tuple:
        return tuple(_compile(inline_params(e, self.params)) for e in self.exprs)

    @cached_property
    def autonomous(self) -> bool:
        return not any(isinstance(leaf, Time) for e in self.exprs for leaf in walk(e))

    def with_params(self, **values: float) -> VectorFieldExpr:
        unknown = set(values) - set(self.params)
        if unknown:
            raise UndeclaredVariableError(f"unknown parameters {sorted(unknown)}")
        return VectorFieldExpr(self.n, self.exprs, {**self.params, **values})

    def eval(self, x, t=0.0) -> np.ndarray:
        """Evaluate ``f(x, t)``; ``x`` has shape ``(n,)`` or ``(..., n)``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1 and np.ndim(t) == 0:
            if x.shape != (self.n,):
                raise ValueError(f"state must have length {self.n}, got {x.shape}")
            xs = [float(v) for v in x]
            out = np.empty(self.n)
            for i, fn in enumerate(self._compiled):
                out[i] = _run(fn, xs, float(t), i)
                _check_finite(out[i], i, "value")
            return out
        xs, tb, shape = _batch_inputs(x, t, self.n)
        out = np.empty(shape + (self.n,))
        for i, fn in enumerate(self._compiled):
            out[..., i] = _run(fn, xs, tb, i)
            _check_finite(out[..., i], i, "value")
        return out

    def eval_with_partials(self, x, t=0.0) -> tuple[np.ndarray, np.ndarray]:
        """Return ``f`` and all partials ``(..., n, n+1)``; the last column is d/dt."""
        m = self.n + 1
        x = np.asarray(x, dtype=float)
        if x.shape == (self.n,) and np.ndim(t) == 0:
            # single point: scalar values, short partial vectors
            eye = np.eye(m)
            seeds = [dual.Dual(float(v), eye[i]) for i, v in enumerate(x)]
            tt = dual.Dual(float(t), eye[-1])
            vals, parts = np.empty(self.n), np.zeros((self.n, m))
            try:
                with np.errstate(all="ignore"):
                    for i, fn in enumerate(self._compiled):
                        r = fn(seeds, tt)
                        if isinstance(r, dual.Dual):
                            vals[i], parts[i] = r.value, r.partials
                        else:
                            vals[i] = r
            except (ZeroDivisionError, OverflowError, ValueError) as exc:
                raise EvaluationError(str(exc) or type(exc).__name__, i) from None
            if not (np.isfinite(vals).all() and np.isfinite(parts).all()):
                for i in range(self.n):
                    _check_finite(vals[i], i, "value")
                    _check_finite(parts[i], i, "derivative")
            return vals, parts
        xs, tb, shape = _batch_inputs(x, t, self.n)
        seeds = dual.seed(xs + [tb], m)
        vals = np.empty(shape + (self.n,))
        parts = np.empty(shape + (self.n, m))
        for i, fn in enumerate(self._compiled):
            r = _run(fn, seeds[:-1], seeds[-1], i)
            v = np.broadcast_to(dual.value_of(r), shape)
            d = dual.partials_of(r, m, shape)
            _check_finite(v, i, "value")
            _check_finite(d, i, "derivative")
            vals[..., i] = v
            parts[..., i, :] = np.moveaxis(d, 0, -1)
        return vals, parts

    def jacobian(self, x, t=0.0) -> np.ndarray:
        """Exact Jacobian ``df_i/dx_j`` of shape ``(..., n, n)``."""
        return self.eval_with_partials(x, t)[1][..., : self.n]

    def to_source(self) -> str:
        lines = [f"param {k} = {v!r}" for k, v in self.params.items()]
        lines += [f"dx{i} = {unparse(e)}" for i, e in enumerate(self.exprs)]
        return "\n".join(lines)


@dataclass(frozen=True, eq=False)
class ScalarExpr:
    """Scalar expression over ``x0..x(n-1)`` and ``t`` (storage functions, couplings)."""

    n: int
    node: Node
    params: Mapping[str, float] = field(default_factory=dict)

    @cached_property
    def _fn(self) -> Callable:
        return _compile(inline_params(self.node, self.params))

    @cached_property
    def constant(self) -> bool:
        return not any(isinstance(leaf, (Var, Time)) for leaf in walk(self.node))

    @cached_property
    def depends_on_state(self) -> bool:
        return any(isinstance(leaf, Var) for leaf in walk(self.node))

    def eval(self, x, t=0.0):
        xs, tb, shape = _batch_inputs(x, t, self.n)
        v = np.broadcast_to(_run(self._fn, xs, tb, 0), shape).copy()
        _check_finite(v, 0, "value")
        return v[()] if shape == () else v

    def gradient(self, x, t=0.0) -> tuple[np.ndarray, np.ndarray]:
        """Return value and partials ``(..., n+1)`` (last entry is d/dt)."""
        xs, tb, shape = _batch_inputs(x, t, self.n)
        m = self.n + 1
        seeds = dual.seed(xs + [tb], m)
        r = _run(self._fn, seeds[:-1], seeds[-1], 0)
        v = np.broadcast_to(dual.value_of(r), shape)
        d = np.moveaxis(dual.partials_of(r, m, shape), 0, -1)
        _check_finite(v, 0, "value")
        _check_finite(d, 0, "derivative")
        return np.array(v), np.array(d)

    def to_source(self) -> str:
        return unparse(self.node)


def parse(src: str, params: Mapping[str, float] | None = None) -> VectorFieldExpr:
    """Parse vector-field source; ``params`` override or add parameter values."""
    n, exprs, pvals = _parse_program(src, params)
    return VectorFieldExpr(n, exprs, pvals)


def parse_scalar(src: str, n: int, params: Mapping[str, float] | None = None) -> ScalarExpr:
    p = _Parser(src)
    p.skip_separators()
    node = p.expression()
    p.skip_separators()
    if p.tok.kind != "end":
        p.error(f"unexpected {p.tok.text!r} after expression")
    params = dict(params or {})
    return ScalarExpr(n, _resolve(node, n, params), params)


# --------------------------------------------------------------------------
# printing

_PREC = {"+": 10, "-": 10, "*": 20, "/": 20}


def _fmt_num(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def unparse(node: Node, prec: int = 0) -> str:
    if isinstance(node, Num):
        s = _fmt_num(abs(node.value))
        if node.value < 0:
            s = "-" + s
            return f"({s})" if prec > _UNARY_BP else s
        return s
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Time):
        return "t"
    if isinstance(node, Param):
        return node.name
    if isinstance(node, Neg):
        s = "-" + unparse(node.operand, _UNARY_BP)
        return f"({s})" if prec > _UNARY_BP else s
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        # left-associative: right operand of equal precedence needs parens
        s = f"{unparse(node.left, p)} {node.op} {unparse(node.right, p + 1)}"
        return f"({s})" if p < prec else s
    if isinstance(node, Pow):
        s = f"{unparse(node.base, _POW_BP + 1)}^{node.exponent}"
        return f"({s})" if prec > _POW_BP else s
    if isinstance(node, Call):
        return f"{node.func}({unparse(node.arg)})"
    raise TypeError(f"cannot print {node!r}")


def sum_nodes(terms: Sequence[Node]) -> Node:
    if not terms:
        return Num(0.0)
    out = terms[0]
    for term in terms[1:]:
        out = BinOp("+", out, term)
    return out
