"""Textual IR for single-loop tensor programs: AST, parser, validator, printer.

Example program::

    func forward(a: tensor<2,3>, x: tensor<2,3>) {
      y = zeros([3])
      for i in 0..15 {
        x = add(x, a)
        z = reshape(slice(x, [1:2, 0:3]), [3])
        y = add(y, z)
      }
      return y
    }

The loop is optional so that optimized, loop-free programs stay expressible
in the same grammar.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, fields, replace
from typing import Any, Callable, Iterator, Mapping, Optional, Sequence, Union

from . import tensor as T
from .tensor import Shape, Tensor

Span = tuple[int, int]

KEYWORDS = frozenset({"func", "for", "in", "return", "tensor"})
BINARY_OPS = ("add", "sub", "mul")
UNARY_OPS = ("neg", "log", "exp")


# -- AST ------------------------------------------------------------------------
# Nodes are frozen dataclasses with structural equality. Hashes are cached
# because unrolled exit values share subtrees heavily.

def _cached_hash(self) -> int:
    h = self.__dict__.get("_hash")
    if h is None:
        h = hash((type(self).__name__,) + tuple(getattr(self, n) for n in self._key_fields))
        object.__setattr__(self, "_hash", h)
    return h


def _node(cls):
    cls = dataclass(frozen=True)(cls)
    cls._key_fields = tuple(f.name for f in fields(cls) if f.compare)
    plain_eq = cls.__eq__

    def __eq__(self, other):
        if self is other:
            return True
        if type(other) is not type(self) or hash(self) != hash(other):
            return False
        return plain_eq(self, other)

    cls.__eq__ = __eq__
    cls.__hash__ = _cached_hash
    return cls


def _span() -> Any:
    return field(default=None, compare=False, repr=False)


@_node
class Var:
    name: str
    span: Optional[Span] = _span()


@_node
class Lit:
    value: Tensor
    span: Optional[Span] = _span()


@_node
class Zeros:
    shape: Shape
    span: Optional[Span] = _span()


@_node
class Ones:
    shape: Shape
    span: Optional[Span] = _span()


@_node
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"
    span: Optional[Span] = _span()


@_node
class Unary:
    op: str
    arg: "Expr"
    span: Optional[Span] = _span()


@_node
class Scale:
    factor: float
    arg: "Expr"
    span: Optional[Span] = _span()


@_node
class Pow:
    """Element-wise ``base ** exponent``; ``base`` must be loop-invariant."""

    base: "Expr"
    exponent: "Expr"
    span: Optional[Span] = _span()


@_node
class Reshape:
    arg: "Expr"
    shape: Shape
    span: Optional[Span] = _span()


@_node
class Transpose:
    arg: "Expr"
    perm: tuple[int, ...]
    span: Optional[Span] = _span()


@_node
class Slice:
    arg: "Expr"
    bounds: tuple[tuple[int, int], ...]
    span: Optional[Span] = _span()


@_node
class Concat:
    lhs: "Expr"
    rhs: "Expr"
    axis: int
    span: Optional[Span] = _span()


@_node
class Broadcast:
    arg: "Expr"
    shape: Shape
    span: Optional[Span] = _span()


Expr = Union[Var, Lit, Zeros, Ones, Binary, Unary, Scale, Pow, Reshape, Transpose, Slice, Concat, Broadcast]


@dataclass(frozen=True)
class Assign:
    name: str
    expr: Expr
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Param:
    name: str
    shape: Shape
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Loop:
    counter: str
    trip_count: int
    body: tuple[Assign, ...]
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Program:
    name: str
    params: tuple[Param, ...]
    pre: tuple[Assign, ...]
    loop: Optional[Loop]
    post: tuple[Assign, ...]
    returns: tuple[str, ...]
    span: Optional[Span] = _span()

    def with_trip_count(self, trip_count: int) -> "Program":
        if self.loop is None:
            return self
        return replace(self, loop=replace(self.loop, trip_count=int(trip_count)))

    def statement_count(self) -> int:
        n = len(self.pre) + len(self.post)
        if self.loop is not None:
            n += len(self.loop.body)
        return n


def children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, (Binary, Concat)):
        return (e.lhs, e.rhs)
    if isinstance(e, Pow):
        return (e.base, e.exponent)
    if isinstance(e, (Unary, Scale, Reshape, Transpose, Slice, Broadcast)):
        return (e.arg,)
    return ()


def with_children(e: Expr, kids: Sequence[Expr]) -> Expr:
    if isinstance(e, (Binary, Concat)):
        return replace(e, lhs=kids[0], rhs=kids[1])
    if isinstance(e, Pow):
        return replace(e, base=kids[0], exponent=kids[1])
    if isinstance(e, (Unary, Scale, Reshape, Transpose, Slice, Broadcast)):
        return replace(e, arg=kids[0])
    return e


def walk(e: Expr) -> Iterator[Expr]:
    """Pre-order traversal visiting each distinct node object once."""
    seen: set[int] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        stack.extend(reversed(children(node)))


def free_vars(e: Expr) -> set[str]:
    return {n.name for n in walk(e) if isinstance(n, Var)}


def contains(e: Expr, pred: Callable[[Expr], bool]) -> bool:
    return any(pred(n) for n in walk(e))


def tree_size(e: Expr) -> int:
    """Node count of the fully expanded tree (shared subtrees counted per use)."""
    memo: dict[int, int] = {}

    def size(n: Expr) -> int:
        k = id(n)
        if k not in memo:
            memo[k] = 1 + sum(size(c) for c in children(n))
        return memo[k]

    return size(e)


def infer_shape(e: Expr, shapes: Mapping[str, Shape]) -> Shape:
    """Static shape of ``e``; raises the matching :class:`TensorError`."""
    memo: dict[int, Shape] = {}

    def go(n: Expr) -> Shape:
        k = id(n)
        if k in memo:
            return memo[k]
        if isinstance(n, Var):
            if n.name not in shapes:
                raise UnknownIdentifier(n.name)
            s = tuple(shapes[n.name])
        elif isinstance(n, Lit):
            s = n.value.shape
        elif isinstance(n, (Zeros, Ones)):
            s = tuple(n.shape)
        elif isinstance(n, (Binary, Pow)):
            a, b = children(n)
            s = T.binary_shape(go(a), go(b))
        elif isinstance(n, (Unary, Scale)):
            s = go(n.arg)
        elif isinstance(n, Reshape):
            s = T.reshape_shape(go(n.arg), n.shape)
        elif isinstance(n, Transpose):
            s = T.transpose_shape(go(n.arg), n.perm)
        elif isinstance(n, Slice):
            s = T.slice_shape(go(n.arg), n.bounds)
        elif isinstance(n, Concat):
            s = T.concat_shape(go(n.lhs), go(n.rhs), n.axis)
        elif isinstance(n, Broadcast):
            s = T.broadcast_shape(go(n.arg), n.shape)
        else:
            raise TypeError(f"not an expression: {n!r}")
        memo[k] = s
        return s

    return go(e)


# -- errors -----------------------------------------------------------------------

class ParseError(Exception):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.message = message
        self.line = line
        self.column = column


class UnknownIdentifier(T.TensorError):
    code = "UnknownIdentifier"

    def __init__(self, name: str):
        super().__init__(f"unknown identifier {name!r}")
        self.name = name


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    span: Optional[Span] = None

    def __str__(self) -> str:
        where = f"{self.span[0]}:{self.span[1]}: " if self.span else ""
        return f"{where}{self.code}: {self.message}"


class ValidationError(Exception):
    def __init__(self, diagnostics: Sequence[Diagnostic]):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))

    @property
    def code(self) -> str:
        return self.diagnostics[0].code


# -- lexer / parser -----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<skip>[ \t\r]+|\#[^\n]*)
  | (?P<newline>\n)
  | (?P<num>-?(?:\d+\.\d+(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\d+))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<dots>\.\.)
  | (?P<punct>[(){}\[\]<>,:=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "newline":
            line += 1
            line_start = m.end()
        elif kind != "skip":
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg: str, tok: _Tok | None = None) -> ParseError:
        tok = tok or self.tok
        found = tok.text or "end of input"
        return ParseError(f"{msg} (found {found!r})", tok.line, tok.col)

    def next(self) -> _Tok:
        t = self.tok
        self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind != "num"

    def expect(self, text: str) -> _Tok:
        if not self.at(text):
            raise self.error(f"expected {text!r}")
        return self.next()

    def ident(self) -> _Tok:
        t = self.tok
        if t.kind != "ident" or t.text in KEYWORDS:
            raise self.error("expected identifier")
        return self.next()

    def integer(self) -> int:
        t = self.tok
        if t.kind != "num" or not re.fullmatch(r"\d+", t.text):
            raise self.error("expected non-negative integer")
        self.next()
        return int(t.text)

    def signed_integer(self) -> int:
        t = self.tok
        if t.kind != "num" or not re.fullmatch(r"-?\d+", t.text):
            raise self.error("expected integer")
        self.next()
        return int(t.text)

    def number(self) -> float:
        t = self.tok
        if t.kind != "num":
            raise self.error("expected number")
        self.next()
        return float(t.text)

    def int_list(self) -> tuple[int, ...]:
        self.expect("[")
        out: list[int] = []
        if not self.at("]"):
            out.append(self.integer())
            while self.at(","):
                self.next()
                out.append(self.integer())
        self.expect("]")
        return tuple(out)

    def range_list(self) -> tuple[tuple[int, int], ...]:
        self.expect("[")
        out: list[tuple[int, int]] = []
        if not self.at("]"):
            while True:
                start = self.integer()
                self.expect(":")
                out.append((start, self.integer()))
                if not self.at(","):
                    break
                self.next()
        self.expect("]")
        return tuple(out)

    def tensor_type(self) -> Shape:
        self.expect("tensor")
        self.expect("<")
        dims: list[int] = []
        if not self.at(">"):
            dims.append(self.integer())
            while self.at(","):
                self.next()
                dims.append(self.integer())
        self.expect(">")
        return tuple(dims)

    # program := "func" IDENT "(" params ")" "{" stmt* loop? stmt* "return" idents "}"
    def program(self) -> Program:
        start = self.expect("func")
        name = self.ident().text
        self.expect("(")
        params: list[Param] = []
        if not self.at(")"):
            while True:
                p = self.ident()
                self.expect(":")
                params.append(Param(p.text, self.tensor_type(), (p.line, p.col)))
                if not self.at(","):
                    break
                self.next()
        self.expect(")")
        self.expect("{")
        pre = self.stmts()
        loop = None
        post: tuple[Assign, ...] = ()
        if self.at("for"):
            loop = self.loop()
            post = self.stmts()
        self.expect("return")
        rets = [self.ident().text]
        while self.at(","):
            self.next()
            rets.append(self.ident().text)
        self.expect("}")
        if self.tok.kind != "eof":
            raise self.error("expected end of input")
        return Program(name, tuple(params), pre, loop, post, tuple(rets), (start.line, start.col))

    def stmts(self) -> tuple[Assign, ...]:
        out = []
        while self.tok.kind == "ident" and self.tok.text not in KEYWORDS:
            t = self.next()
            self.expect("=")
            out.append(Assign(t.text, self.expr(), (t.line, t.col)))
        return tuple(out)

    def loop(self) -> Loop:
        start = self.expect("for")
        counter = self.ident().text
        self.expect("in")
        lo = self.tok
        if self.integer() != 0:
            raise self.error("loops must start at 0", lo)
        if self.tok.kind != "dots":
            raise self.error("expected '..'")
        self.next()
        trip = self.integer()
        self.expect("{")
        body = self.stmts()
        self.expect("}")
        return Loop(counter, trip, body, (start.line, start.col))

    def expr(self) -> Expr:
        t = self.tok
        span = (t.line, t.col)
        if t.kind == "num":
            return Lit(Tensor.scalar(self.number()), span)
        if t.kind != "ident":
            raise self.error("expected expression")
        if t.text == "tensor":
            shape = self.tensor_type()
            self.expect("[")
            data: list[float] = []
            if not self.at("]"):
                data.append(self.number())
                while self.at(","):
                    self.next()
                    data.append(self.number())
            self.expect("]")
            try:
                return Lit(Tensor.from_flat(shape, data), span)
            except T.TensorError as exc:
                raise ParseError(str(exc), *span) from None
        self.next()
        if not self.at("("):
            if t.text in KEYWORDS:
                raise self.error("expected expression", t)
            return Var(t.text, span)
        self.next()
        node = self.call(t.text, span, t)
        self.expect(")")
        return node

    def call(self, name: str, span: Span, tok: _Tok) -> Expr:
        if name in BINARY_OPS:
            a = self.expr()
            self.expect(",")
            return Binary(name, a, self.expr(), span)
        if name in UNARY_OPS:
            return Unary(name, self.expr(), span)
        if name == "scale":
            factor = self.number()
            self.expect(",")
            return Scale(factor, self.expr(), span)
        if name == "pow":
            a = self.expr()
            self.expect(",")
            return Pow(a, self.expr(), span)
        if name in ("reshape", "transpose", "broadcast", "slice"):
            a = self.expr()
            self.expect(",")
            if name == "reshape":
                return Reshape(a, self.int_list(), span)
            if name == "transpose":
                return Transpose(a, self.int_list(), span)
            if name == "broadcast":
                return Broadcast(a, self.int_list(), span)
            return Slice(a, self.range_list(), span)
        if name == "concat":
            a = self.expr()
            self.expect(",")
            b = self.expr()
            self.expect(",")
            return Concat(a, b, self.signed_integer(), span)
        if name in ("zeros", "ones"):
            shape = self.int_list()
            return Zeros(shape, span) if name == "zeros" else Ones(shape, span)
        raise self.error(f"unknown operation {name!r}", tok)


def parse_expr(text: str) -> Expr:
    p = _Parser(text)
    e = p.expr()
    if p.tok.kind != "eof":
        raise p.error("expected end of input")
    return e


def parse_program(text: str, validate: bool = True) -> Program:
    """Parse program text; with ``validate`` raise :class:`ValidationError` on any diagnostic."""
    prog = _Parser(text).program()
    if validate:
        diags = validate_program(prog)
        if diags:
            raise ValidationError(diags)
    return prog


# -- validation ---------------------------------------------------------------------

def validate_program(p: Program) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    shapes: dict[str, Shape] = {}

    def infer(e: Expr) -> Optional[Shape]:
        try:
            return infer_shape(e, shapes)
        except T.TensorError as exc:
            diags.append(Diagnostic(exc.code, str(exc), _locate(e, exc)))
            return None

    for prm in p.params:
        if prm.name in shapes:
            diags.append(Diagnostic("DuplicateParam", f"parameter {prm.name!r} declared twice", prm.span))
        shapes[prm.name] = tuple(prm.shape)

    def define(stmt: Assign) -> None:
        if stmt.name in shapes:
            diags.append(Diagnostic("Redefinition", f"{stmt.name!r} is already defined", stmt.span))
        s = infer(stmt.expr)
        if s is not None:
            shapes[stmt.name] = s

    for stmt in p.pre:
        define(stmt)

    if p.loop is not None:
        loop = p.loop
        if not loop.body:
            diags.append(Diagnostic("EmptyLoopBody", "loop must contain at least one statement", loop.span))
        if loop.counter in shapes:
            diags.append(Diagnostic("Redefinition", f"loop counter {loop.counter!r} shadows a variable", loop.span))
        body_shapes = dict(shapes)
        body_shapes[loop.counter] = ()
        assigned = {s.name for s in loop.body} | {loop.counter}
        saved, shapes = shapes, body_shapes
        for stmt in loop.body:
            if stmt.name == loop.counter:
                diags.append(Diagnostic("Redefinition", "cannot assign the loop counter", stmt.span))
                continue
            for n in walk(stmt.expr):
                if isinstance(n, Pow) and free_vars(n.base) & assigned:
                    diags.append(Diagnostic("NonInvariantBase", "pow base must be loop-invariant", n.span))
            s = infer(stmt.expr)
            if s is None:
                continue
            prev = shapes.get(stmt.name)
            if prev is not None and prev != s:
                diags.append(Diagnostic(
                    "ShapeMismatch",
                    f"{stmt.name!r} changes shape from {prev} to {s} inside the loop",
                    stmt.span,
                ))
            else:
                shapes[stmt.name] = s
        shapes = saved
    for stmt in p.post:
        define(stmt)
    for r in p.returns:
        if r not in shapes:
            diags.append(Diagnostic("UnknownIdentifier", f"unknown identifier {r!r} in return", p.span))
    return diags


def _locate(e: Expr, exc: Exception) -> Optional[Span]:
    # the innermost node that reproduces the error carries the useful span
    if isinstance(exc, UnknownIdentifier):
        for n in walk(e):
            if isinstance(n, Var) and n.name == exc.name:
                return n.span
    return e.span


def param_shapes(p: Program) -> dict[str, Shape]:
    return {prm.name: tuple(prm.shape) for prm in p.params}


def program_shapes(p: Program) -> dict[str, Shape]:
    """Shapes of every name visible after the loop (params, pre, carried, post)."""
    shapes = param_shapes(p)
    for stmt in p.pre:
        shapes[stmt.name] = infer_shape(stmt.expr, shapes)
    if p.loop is not None:
        inner = dict(shapes)
        inner[p.loop.counter] = ()
        for stmt in p.loop.body:
            inner[stmt.name] = infer_shape(stmt.expr, inner)
    for stmt in p.post:
        shapes[stmt.name] = infer_shape(stmt.expr, shapes)
    return shapes


# -- printing -----------------------------------------------------------------------

def format_number(x: float) -> str:
    x = float(x)
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError(f"non-finite number {x} has no textual form")
    return repr(x)


def _ints(xs: Sequence[int]) -> str:
    return "[" + ", ".join(str(int(x)) for x in xs) + "]"


def format_literal(t: Tensor) -> str:
    dims = ",".join(str(d) for d in t.shape)
    return f"tensor<{dims}>[" + ", ".join(format_number(v) for v in t.data) + "]"


def format_expr(e: Expr) -> str:
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Lit):
        return format_literal(e.value)
    if isinstance(e, Zeros):
        return f"zeros({_ints(e.shape)})"
    if isinstance(e, Ones):
        return f"ones({_ints(e.shape)})"
    if isinstance(e, Binary):
        return f"{e.op}({format_expr(e.lhs)}, {format_expr(e.rhs)})"
    if isinstance(e, Unary):
        return f"{e.op}({format_expr(e.arg)})"
    if isinstance(e, Scale):
        return f"scale({format_number(e.factor)}, {format_expr(e.arg)})"
    if isinstance(e, Pow):
        return f"pow({format_expr(e.base)}, {format_expr(e.exponent)})"
    if isinstance(e, Reshape):
        return f"reshape({format_expr(e.arg)}, {_ints(e.shape)})"
    if isinstance(e, Transpose):
        return f"transpose({format_expr(e.arg)}, {_ints(e.perm)})"
    if isinstance(e, Slice):
        rng = ", ".join(f"{a}:{b}" for a, b in e.bounds)
        return f"slice({format_expr(e.arg)}, [{rng}])"
    if isinstance(e, Concat):
        return f"concat({format_expr(e.lhs)}, {format_expr(e.rhs)}, {e.axis})"
    if isinstance(e, Broadcast):
        return f"broadcast({format_expr(e.arg)}, {_ints(e.shape)})"
    raise TypeError(f"not an expression: {e!r}")


def serialize_program(p: Program) -> str:
    def shape_text(s: Shape) -> str:
        return "tensor<" + ",".join(str(d) for d in s) + ">"

    params = ", ".join(f"{prm.name}: {shape_text(prm.shape)}" for prm in p.params)
    lines = [f"func {p.name}({params}) {{"]
    lines += [f"  {s.name} = {format_expr(s.expr)}" for s in p.pre]
    if p.loop is not None:
        lines.append(f"  for {p.loop.counter} in 0..{p.loop.trip_count} {{")
        lines += [f"    {s.name} = {format_expr(s.expr)}" for s in p.loop.body]
        lines.append("  }")
    lines += [f"  {s.name} = {format_expr(s.expr)}" for s in p.post]
    lines.append(f"  return {', '.join(p.returns)}")
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- JSON -----------------------------------------------------------------------------

def expr_to_json(e: Expr) -> dict:
    if isinstance(e, Var):
        return {"op": "var", "name": e.name}
    if isinstance(e, Lit):
        return {"op": "lit", "tensor": e.value.to_json()}
    if isinstance(e, (Zeros, Ones)):
        return {"op": type(e).__name__.lower(), "shape": list(e.shape)}
    args = [expr_to_json(c) for c in children(e)]
    if isinstance(e, (Binary, Unary)):
        return {"op": e.op, "args": args}
    if isinstance(e, Scale):
        return {"op": "scale", "factor": e.factor, "args": args}
    if isinstance(e, Pow):
        return {"op": "pow", "args": args}
    if isinstance(e, (Reshape, Broadcast)):
        return {"op": type(e).__name__.lower(), "shape": list(e.shape), "args": args}
    if isinstance(e, Transpose):
        return {"op": "transpose", "perm": list(e.perm), "args": args}
    if isinstance(e, Slice):
        return {"op": "slice", "bounds": [list(b) for b in e.bounds], "args": args}
    if isinstance(e, Concat):
        return {"op": "concat", "axis": e.axis, "args": args}
    raise TypeError(f"not an expression: {e!r}")


def expr_from_json(obj: Mapping) -> Expr:
    op = obj["op"]
    args = [expr_from_json(a) for a in obj.get("args", ())]
    if op == "var":
        return Var(obj["name"])
    if op == "lit":
        return Lit(Tensor.from_json(obj["tensor"]))
    if op == "zeros":
        return Zeros(tuple(obj["shape"]))
    if op == "ones":
        return Ones(tuple(obj["shape"]))
    if op in BINARY_OPS:
        return Binary(op, *args)
    if op in UNARY_OPS:
        return Unary(op, *args)
    if op == "scale":
        return Scale(float(obj["factor"]), *args)
    if op == "pow":
        return Pow(*args)
    if op == "reshape":
        return Reshape(args[0], tuple(obj["shape"]))
    if op == "broadcast":
        return Broadcast(args[0], tuple(obj["shape"]))
    if op == "transpose":
        return Transpose(args[0], tuple(obj["perm"]))
    if op == "slice":
        return Slice(args[0], tuple((int(a), int(b)) for a, b in obj["bounds"]))
    if op == "concat":
        return Concat(args[0], args[1], int(obj["axis"]))
    raise ValueError(f"unknown op {op!r}")


def _stmts_json(stmts: Sequence[Assign]) -> list:
    return [{"name": s.name, "expr": expr_to_json(s.expr)} for s in stmts]


def _stmts_from_json(objs: Sequence[Mapping]) -> tuple[Assign, ...]:
    return tuple(Assign(o["name"], expr_from_json(o["expr"])) for o in objs)


def to_json(p: Program) -> dict:
    loop = None
    if p.loop is not None:
        loop = {"counter": p.loop.counter, "tripCount": p.loop.trip_count, "body": _stmts_json(p.loop.body)}
    return {
        "name": p.name,
        "params": [{"name": prm.name, "shape": list(prm.shape)} for prm in p.params],
        "pre": _stmts_json(p.pre),
        "loop": loop,
        "post": _stmts_json(p.post),
        "returns": list(p.returns),
    }


def from_json(obj: Mapping) -> Program:
    loop = None
    if obj.get("loop") is not None:
        lj = obj["loop"]
        loop = Loop(lj["counter"], int(lj["tripCount"]), _stmts_from_json(lj["body"]))
    return Program(
        obj["name"],
        tuple(Param(q["name"], tuple(q["shape"])) for q in obj["params"]),
        _stmts_from_json(obj["pre"]),
        loop,
        _stmts_from_json(obj["post"]),
        tuple(obj["returns"]),
    )


def dumps(p: Program) -> str:
    return json.dumps(to_json(p), indent=2)
