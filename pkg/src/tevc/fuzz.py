"""Seeded random generators for programs, TeV expressions and IR expressions.

Programs stay inside the grammar the rewrite system covers, plus a few update
shapes it deliberately rejects, so a fuzzing run exercises both outcomes.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from . import ir
from . import tev
from .tensor import Tensor

SHAPES = ((3,), (2, 3), (2, 2), (4,))


def _shape_tag(shape: tuple[int, ...]) -> str:
    return "_".join(str(d) for d in shape) or "s"


def _int_lit(rng: np.random.Generator, shape: tuple[int, ...], lo: int = -3, hi: int = 3) -> ir.Lit:
    return ir.Lit(Tensor(rng.integers(lo, hi + 1, size=shape).astype(np.float64)))


# -- programs ----------------------------------------------------------------------------------

class _ProgramGen:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.shape = SHAPES[rng.integers(len(SHAPES))]
        self.params = [f"p{k}" for k in range(int(rng.integers(1, 4)))]
        self.tmp = 0

    def pick(self, xs):
        return xs[int(self.rng.integers(len(xs)))]

    def chance(self, p: float) -> bool:
        return bool(self.rng.random() < p)

    def counter(self) -> ir.Expr:
        return ir.Broadcast(ir.Var("i"), self.shape)

    def invariant(self) -> ir.Expr:
        r = self.rng.random()
        if r < 0.6:
            return ir.Var(self.pick(self.params))
        if r < 0.8:
            return _int_lit(self.rng, self.shape)
        return ir.Scale(float(self.rng.integers(-2, 3)), ir.Var(self.pick(self.params)))

    def structural(self, e: ir.Expr) -> ir.Expr:
        """Wrap ``e`` in a shape-preserving composition of structural operators."""
        s = self.shape
        kind = self.pick(["reshape", "transpose", "slice_concat", "slice_broadcast"])
        n = int(np.prod(s))
        if kind == "reshape":
            return ir.Reshape(ir.Reshape(e, (n,)), s)
        if kind == "transpose" and len(s) == 2:
            return ir.Transpose(ir.Transpose(e, (1, 0)), (1, 0))
        if kind == "slice_concat" and s[0] >= 2:
            rest = [(0, d) for d in s[1:]]
            lo = ir.Slice(e, ((0, 1), *rest))
            hi = ir.Slice(e, ((1, s[0]), *rest))
            return ir.Concat(lo, hi, 0)
        row = int(self.rng.integers(s[0]))
        bounds = ((row, row + 1), *[(0, d) for d in s[1:]])
        return ir.Broadcast(ir.Slice(e, bounds), s)

    def term(self, sources: list[str], depth: int) -> ir.Expr:
        r = self.rng.random()
        if depth <= 0 or r < 0.3:
            leaves = [ir.Var(v) for v in sources] + [self.counter(), self.invariant()]
            return self.pick(leaves)
        if r < 0.5:
            return ir.Binary(self.pick(["add", "sub"]), self.term(sources, depth - 1), self.term(sources, depth - 1))
        if r < 0.6:
            return ir.Unary("neg", self.term(sources, depth - 1))
        if r < 0.7:
            return ir.Scale(float(self.rng.integers(-3, 4)), self.term(sources, depth - 1))
        if r < 0.85:
            return ir.Binary("mul", self.invariant(), self.term(sources, depth - 1))
        if r < 0.93:
            return self.structural(self.term(sources, depth - 1))
        # product of two varying terms raises the chain degree
        return ir.Binary("mul", self.term(sources, 0), self.term(sources, 0))

    def update(self, v: str, sources: list[str]) -> ir.Expr:
        step = self.term(sources, 2)
        form = self.pick(["add", "add_rev", "sub", "nested"])
        if form == "add":
            return ir.Binary("add", ir.Var(v), step)
        if form == "add_rev":
            return ir.Binary("add", step, ir.Var(v))
        if form == "sub":
            return ir.Binary("sub", ir.Var(v), step)
        return ir.Binary("add", self.invariant(), ir.Binary("add", ir.Var(v), step))

    def geometric(self, v: str) -> ir.Expr:
        step = self.pick([
            ir.Var(self.pick(self.params)),
            ir.Unary("exp", ir.Scale(0.25, self.counter())),
            ir.Unary("exp", ir.Scale(0.5, ir.Var(self.pick(self.params)))),
        ])
        return ir.Binary("mul", ir.Var(v), step)

    def rejected(self, v: str) -> ir.Expr:
        return self.pick([
            ir.Binary("mul", ir.Var(v), ir.Var(v)),
            ir.Unary("exp", ir.Var(v)),
            ir.Binary("add", ir.Scale(2.0, ir.Var(v)), ir.Var(self.pick(self.params))),
            ir.Binary("sub", ir.Var(self.pick(self.params)), ir.Var(v)),
            ir.Binary("add", ir.Var(v), ir.Unary("exp", ir.Var(v))),
        ])

    def program(self, reject_rate: float = 0.15) -> ir.Program:
        s = self.shape
        params = tuple(ir.Param(n, s) for n in self.params)
        carried = [f"v{k}" for k in range(int(self.rng.integers(1, 4)))]
        geometric = self.chance(0.2)
        pre = []
        for v in carried:
            init = self.pick([ir.Zeros(s), ir.Ones(s), ir.Var(self.pick(self.params)), self.invariant()])
            pre.append(ir.Assign(v, init))
        body: list[ir.Assign] = []
        seen: list[str] = []
        for v in carried:
            if self.chance(0.4):
                t = f"t{self.tmp}"
                self.tmp += 1
                body.append(ir.Assign(t, self.term(seen + [v] if self.chance(0.3) else seen, 2)))
                seen.append(t)
            if self.chance(reject_rate):
                rhs = self.rejected(v)
            elif geometric and v == carried[0]:
                rhs = self.geometric(v)
            else:
                sources = [w for w in seen if w != v]
                rhs = self.update(v, sources)
            body.append(ir.Assign(v, rhs))
            if not geometric or v != carried[0]:
                seen.append(v)
        if geometric and self.chance(0.5):
            t = f"t{self.tmp}"
            self.tmp += 1
            body.append(ir.Assign(t, ir.Unary("log", ir.Var(carried[0]))))
            if len(carried) > 1:
                body.append(ir.Assign(carried[-1], ir.Binary("add", ir.Var(carried[-1]), ir.Var(t))))
        trip = int(self.rng.integers(0, 21))
        loop = ir.Loop("i", trip, tuple(body))
        post: tuple[ir.Assign, ...] = ()
        returns = tuple(carried)
        if self.chance(0.3):
            post = (ir.Assign("out", ir.Binary("add", ir.Var(carried[0]), ir.Var(carried[-1]))),)
            returns = ("out",) + tuple(carried[1:])
        return ir.Program("fuzz", params, tuple(pre), loop, post, returns)


def random_program(rng: np.random.Generator, reject_rate: float = 0.15) -> ir.Program:
    """A valid single-loop program; some carried updates are outside the model on purpose."""
    return _ProgramGen(rng).program(reject_rate)


# -- TeV expressions ---------------------------------------------------------------------------

class _TevGen:
    def __init__(self, rng: np.random.Generator, unknown_rate: float = 0.03, positive: bool = False):
        self.rng = rng
        self.unknown_rate = unknown_rate
        self.positive = positive

    def pick(self, xs):
        return xs[int(self.rng.integers(len(xs)))]

    def inv(self, shape: tuple[int, ...]) -> tev.Invariant:
        if self.rng.random() < 0.6:
            return tev.var(self.pick("abc") + "_" + _shape_tag(shape), shape)
        lo = 1 if self.positive else -3
        return tev.Invariant(_int_lit(self.rng, shape, lo, 3), shape)

    def chain(self, shape: tuple[int, ...]) -> tev.TevExpr:
        m = int(self.rng.integers(1, 4))
        uniform = self.rng.random() < 0.8
        op = self.pick([tev.ADD, tev.ADD, tev.MUL])
        ops = [op if uniform else self.pick([tev.ADD, tev.MUL]) for _ in range(m)]
        return tev.make_chain([self.inv(shape) for _ in range(m + 1)], ops)

    def leaf(self, shape: tuple[int, ...]) -> tev.TevExpr:
        r = self.rng.random()
        if r < self.unknown_rate:
            return tev.Unknown("u", "opaque", shape)
        if r < 0.3:
            return self.inv(shape)
        return self.chain(shape)

    def expr(self, shape: tuple[int, ...], depth: int) -> tev.TevExpr:
        if depth <= 0 or self.rng.random() < 0.25:
            return self.leaf(shape)
        d = depth - 1
        kind = self.pick(["add", "add", "mul", "neg", "scale", "log", "exp", "reshape",
                          "transpose", "slice", "broadcast", "concat", "inject", "pow"])
        if kind in ("add", "mul"):
            return tev.wrap(kind, [self.expr(shape, d), self.expr(shape, d)])
        if kind == "neg":
            return tev.wrap("neg", [self.expr(shape, d)])
        if kind == "scale":
            return tev.wrap("scale", [self.expr(shape, d)], (float(self.rng.integers(-3, 4)),))
        if kind in ("log", "exp"):
            return tev.wrap(kind, [self.expr(shape, d)])
        if kind == "pow":
            return tev.wrap("pow", [self.inv(shape), self.expr(shape, d)])
        if kind == "reshape":
            n = int(np.prod(shape))
            return tev.wrap("reshape", [self.expr((n,), d)], (tuple(shape),))
        if kind == "transpose" and len(shape) == 2:
            src = (shape[1], shape[0])
            return tev.wrap("transpose", [self.expr(src, d)], ((1, 0),))
        if kind == "slice":
            src = (shape[0] + 1,) + tuple(shape[1:])
            off = int(self.rng.integers(2))
            bounds = ((off, off + shape[0]),) + tuple((0, x) for x in shape[1:])
            return tev.wrap("slice", [self.expr(src, d)], (bounds,))
        if kind == "broadcast" and len(shape) >= 1:
            src = (1,) + tuple(shape[1:])
            return tev.wrap("broadcast", [self.expr(src, d)], (tuple(shape),))
        if kind == "concat" and shape[0] >= 2:
            k = int(self.rng.integers(1, shape[0]))
            a = (k,) + tuple(shape[1:])
            b = (shape[0] - k,) + tuple(shape[1:])
            return tev.wrap("concat", [self.expr(a, d), self.expr(b, d)], (0,))
        if kind == "inject":
            return tev.wrap("inject", [self.inv(shape), self.expr(shape, d)], (self.pick([tev.ADD, tev.MUL]),))
        return tev.wrap("add", [self.expr(shape, d), self.leaf(shape)])


def random_tev(rng: np.random.Generator, shape: Optional[tuple[int, ...]] = None, depth: int = 4,
               unknown_rate: float = 0.03, positive: bool = False) -> tev.TevExpr:
    """A random, shape-correct TeV expression; not necessarily in normal form.

    With ``positive`` every literal leaf is positive, which the log and
    constant-base power rewrites assume of their invariant operands.
    """
    shape = shape if shape is not None else SHAPES[rng.integers(len(SHAPES))]
    return _TevGen(rng, unknown_rate, positive).expr(tuple(shape), depth)


def tev_env(t: tev.TevExpr, rng: np.random.Generator, positive: bool = False) -> dict[str, Tensor]:
    """Random bindings for every variable a TeV expression mentions."""
    env = {}
    for name in sorted(tev.references(t)):
        dims = name.split("_", 1)[1] if "_" in name else ""
        shape = tuple(int(d) for d in dims.split("_")) if dims and dims != "s" else ()
        if positive:
            data = rng.uniform(0.5, 2.0, size=shape)
        else:
            data = rng.integers(-4, 5, size=shape).astype(np.float64)
        env[name] = Tensor(data)
    return env


# -- IR expressions ----------------------------------------------------------------------------

def random_expr(rng: np.random.Generator, names: tuple[str, ...] = ("a", "b", "c"), depth: int = 4) -> ir.Expr:
    """Syntactically arbitrary expression (shapes are not checked) for round-trip tests."""
    def pick(xs):
        return xs[int(rng.integers(len(xs)))]

    def dims(lo=1, hi=4):
        return tuple(int(x) for x in rng.integers(lo, hi, size=int(rng.integers(0, 3))))

    def go(d: int) -> ir.Expr:
        if d <= 0 or rng.random() < 0.2:
            r = rng.random()
            if r < 0.5:
                return ir.Var(pick(names))
            if r < 0.7:
                shape = dims()
                return ir.Lit(Tensor(np.round(rng.normal(size=shape) * 10, 3)))
            return pick([ir.Zeros, ir.Ones])(dims())
        kind = pick(["bin", "un", "scale", "pow", "reshape", "transpose", "slice", "concat", "broadcast"])
        if kind == "bin":
            return ir.Binary(pick(list(ir.BINARY_OPS)), go(d - 1), go(d - 1))
        if kind == "un":
            return ir.Unary(pick(list(ir.UNARY_OPS)), go(d - 1))
        if kind == "scale":
            return ir.Scale(float(np.round(rng.normal() * 5, 4)), go(d - 1))
        if kind == "pow":
            return ir.Pow(go(d - 1), go(d - 1))
        if kind == "reshape":
            return ir.Reshape(go(d - 1), dims())
        if kind == "transpose":
            return ir.Transpose(go(d - 1), tuple(int(x) for x in rng.permutation(int(rng.integers(1, 4)))))
        if kind == "slice":
            bounds = tuple((int(a), int(a) + int(b)) for a, b in zip(rng.integers(0, 3, 2), rng.integers(0, 3, 2)))
            return ir.Slice(go(d - 1), bounds)
        if kind == "concat":
            return ir.Concat(go(d - 1), go(d - 1), int(rng.integers(0, 3)))
        return ir.Broadcast(go(d - 1), dims())

    return go(depth)


def random_ast(rng: np.random.Generator) -> ir.Program:
    """Random program AST for parse/serialize round trips; not necessarily valid."""
    names = ("a", "b", "c", "d")
    params = tuple(ir.Param(n, tuple(int(x) for x in rng.integers(1, 4, size=int(rng.integers(0, 3)))))
                   for n in names[: int(rng.integers(0, 4))])

    def stmts(k: int) -> tuple[ir.Assign, ...]:
        return tuple(ir.Assign(names[int(rng.integers(len(names)))], random_expr(rng, names, 3)) for _ in range(k))

    loop = None
    if rng.random() < 0.8:
        loop = ir.Loop("i", int(rng.integers(0, 10**6)), stmts(int(rng.integers(1, 4))))
    returns = tuple(names[int(rng.integers(len(names)))] for _ in range(int(rng.integers(1, 3))))
    # without a loop there is no boundary between pre and post statements
    post = stmts(int(rng.integers(0, 2))) if loop is not None else ()
    return ir.Program("f", params, stmts(int(rng.integers(0, 3))), loop, post, returns)
