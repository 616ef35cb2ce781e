"""Tensor-evolution (TeV) expressions and their rewrite algebra.

A TeV expression describes the value of a tensor as a function of the loop
iteration ``i``:

* :class:`Invariant` -- a loop-invariant IR expression;
* :class:`Chain` -- ``{E0, op1, E1, ..., opm, Em}`` with ``op`` in ``+``/``*``;
* :class:`Unknown` -- a value the analysis cannot model;
* :class:`Wrap` -- an operation applied to TeV children that no rule has
  eliminated (yet).

Chain semantics use classic chain-of-recurrences indexing::

    eval({C, op, tau}, 0) = C
    eval({C, op, tau}, i) = eval({C, op, tau}, i - 1) op eval(tau, i - 1)

so an all-``+`` chain evaluates to ``sum_j C(i, j) * E_j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from . import ir
from . import tensor as T
from .interpreter import eval_expr
from .tensor import Shape, Tensor

MAX_DEPTH = 8
MAX_REWRITES = 10_000

ADD, MUL = "+", "*"
STRUCTURAL_KINDS = ("reshape", "transpose", "slice", "broadcast")
WRAP_KINDS = ("add", "mul", "neg", "scale", "pow", "log", "exp", "concat", "inject") + STRUCTURAL_KINDS


class TevError(Exception):
    code = "TevError"


class NegativeIndex(TevError):
    code = "NegativeIndex"


class MixedOperatorChain(TevError):
    code = "MixedOperatorChain"


class ClosedFormUnavailable(TevError):
    code = "ClosedFormUnavailable"


class UnknownValue(TevError):
    code = "UnknownValue"


class WrongChainOperator(TevError):
    code = "WrongChainOperator"


class NonAdditiveChain(TevError):
    code = "NonAdditiveChain"


class RuleNotApplicable(TevError):
    code = "RuleNotApplicable"


class RewriteLimitExceeded(TevError):
    code = "RewriteLimitExceeded"


# -- expression types ------------------------------------------------------------------

@dataclass(frozen=True)
class Invariant:
    expr: ir.Expr
    shape: Shape


@dataclass(frozen=True)
class Unknown:
    var: str
    reason: str
    shape: Shape


@dataclass(frozen=True)
class Chain:
    operands: tuple["TevExpr", ...]
    ops: tuple[str, ...]

    def __post_init__(self):
        if len(self.ops) < 1 or len(self.ops) != len(self.operands) - 1:
            raise ValueError("a chain needs m >= 1 operators and m + 1 operands")
        if any(op not in (ADD, MUL) for op in self.ops):
            raise ValueError(f"chain operators must be '+' or '*', got {self.ops}")
        for e in self.operands[:-1]:
            if not isinstance(e, Invariant):
                raise ValueError("only the final chain operand may vary with the iteration")
        shape = self.operands[0].shape
        for e in self.operands[1:]:
            if e.shape != shape:
                raise T.ShapeMismatch(f"chain operands have shapes {shape} and {e.shape}")

    @property
    def shape(self) -> Shape:
        return self.operands[0].shape

    @property
    def depth(self) -> int:
        return len(self.ops)

    def uniform_op(self) -> Optional[str]:
        return self.ops[0] if len(set(self.ops)) == 1 else None

    def invariant_operands(self) -> bool:
        return isinstance(self.operands[-1], Invariant)


@dataclass(frozen=True)
class Wrap:
    kind: str
    children: tuple["TevExpr", ...]
    params: tuple = ()
    shape: Shape = field(default=(), compare=False)


TevExpr = Union[Invariant, Chain, Unknown, Wrap]


def _kind_shape(kind: str, shapes: Sequence[Shape], params: tuple) -> Shape:
    if kind in ("add", "mul", "pow"):
        return T.binary_shape(shapes[0], shapes[1])
    if kind in ("neg", "log", "exp", "scale"):
        return shapes[0]
    if kind == "reshape":
        return T.reshape_shape(shapes[0], params[0])
    if kind == "transpose":
        return T.transpose_shape(shapes[0], params[0])
    if kind == "slice":
        return T.slice_shape(shapes[0], params[0])
    if kind == "broadcast":
        return T.broadcast_shape(shapes[0], params[0])
    if kind == "concat":
        return T.concat_shape(shapes[0], shapes[1], params[0])
    if kind == "inject":
        return T.binary_shape(shapes[0], shapes[1])
    raise ValueError(f"unknown wrap kind {kind!r}")


def wrap(kind: str, children: Sequence[TevExpr], params: tuple = ()) -> Wrap:
    children = tuple(children)
    return Wrap(kind, children, tuple(params), _kind_shape(kind, [c.shape for c in children], params))


def make_chain(operands: Sequence[TevExpr], ops: Sequence[str]) -> TevExpr:
    """Chain constructor that collapses single operands and enforces the depth cap."""
    operands, ops = tuple(operands), tuple(ops)
    if not ops:
        return operands[0]
    if len(ops) > MAX_DEPTH:
        return Unknown("", f"DepthLimit: chain depth {len(ops)} exceeds {MAX_DEPTH}", operands[0].shape)
    return Chain(operands, ops)


def invariant(expr: ir.Expr, shapes: Mapping[str, Shape] | None = None) -> Invariant:
    return Invariant(expr, ir.infer_shape(expr, shapes or {}))


def lit(value, shape: Sequence[int] | None = None) -> Invariant:
    """Literal invariant from a nested list / scalar (``shape`` overrides)."""
    arr = np.asarray(value, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(tuple(shape))
    t = Tensor(arr)
    return Invariant(ir.Lit(t), t.shape)


def var(name: str, shape: Sequence[int]) -> Invariant:
    return Invariant(ir.Var(name), tuple(shape))


def chain(*items) -> TevExpr:
    """``chain(A, '+', B, '+', C)`` -> ``{A, +, B, +, C}``."""
    return make_chain(items[0::2], items[1::2])


# -- rendering ----------------------------------------------------------------------------

RENDER_LIMIT = 400


def render_invariant(e: ir.Expr) -> str:
    n = ir.tree_size(e)
    if n > RENDER_LIMIT:
        return f"<expression with {n} nodes>"
    return ir.format_expr(e)


def _param_text(kind: str, params: tuple) -> str:
    if not params:
        return ""
    p = params[0]
    if kind == "slice":
        return ", [" + ", ".join(f"{a}:{b}" for a, b in p) + "]"
    if kind in ("reshape", "transpose", "broadcast"):
        return ", [" + ", ".join(str(d) for d in p) + "]"
    return f", {p}"


def render(t: TevExpr) -> str:
    if isinstance(t, Invariant):
        return render_invariant(t.expr)
    if isinstance(t, Unknown):
        return f"?{t.var}" if t.var else "?"
    if isinstance(t, Chain):
        parts = [render(t.operands[0])]
        for op, e in zip(t.ops, t.operands[1:]):
            parts += [op, render(e)]
        return "{" + ", ".join(parts) + "}"
    if t.kind == "inject":
        return f"inject({render(t.children[1])} ->{t.params[0]} {render(t.children[0])})"
    if t.kind == "scale":
        return f"scale({ir.format_number(t.params[0])}, {render(t.children[0])})"
    inner = ", ".join(render(c) for c in t.children)
    return f"{t.kind}({inner}{_param_text(t.kind, t.params)})"


def to_json(t: TevExpr) -> dict:
    if isinstance(t, Invariant):
        return {"kind": "invariant", "shape": list(t.shape), "expr": ir.expr_to_json(t.expr)}
    if isinstance(t, Unknown):
        return {"kind": "unknown", "var": t.var, "reason": t.reason, "shape": list(t.shape)}
    if isinstance(t, Chain):
        return {"kind": "chain", "ops": list(t.ops), "operands": [to_json(e) for e in t.operands]}
    return {"kind": t.kind, "params": [_jsonable(p) for p in t.params], "children": [to_json(c) for c in t.children]}


def _jsonable(p):
    if isinstance(p, tuple):
        return [_jsonable(x) for x in p]
    return p


# -- invariant algebra ----------------------------------------------------------------------
# Smart constructors over loop-invariant IR expressions: fold literals, drop
# identities, order commutative operands canonically.

def _is_zero(e: ir.Expr) -> bool:
    if isinstance(e, ir.Zeros):
        return True
    return isinstance(e, ir.Lit) and e.value.size > 0 and not np.any(e.value.array)


def _is_one(e: ir.Expr) -> bool:
    if isinstance(e, ir.Ones):
        return True
    return isinstance(e, ir.Lit) and e.value.size > 0 and bool(np.all(e.value.array == 1.0))


def _fold(e: ir.Expr) -> ir.Expr:
    if all(isinstance(c, ir.Lit) for c in ir.children(e)):
        try:
            value = eval_expr(e, {})
        except T.TensorError:
            return e
        # inf/nan have no literal syntax; keep the unevaluated form
        if np.all(np.isfinite(value.array)):
            return ir.Lit(value)
    return e


def _commutative(op: str, a: ir.Expr, b: ir.Expr) -> ir.Expr:
    if ir.format_expr(b) < ir.format_expr(a):
        a, b = b, a
    return _fold(ir.Binary(op, a, b))


def inv_add(a: Invariant, b: Invariant) -> Invariant:
    shape = T.binary_shape(a.shape, b.shape)
    if _is_zero(a.expr):
        return Invariant(b.expr, shape)
    if _is_zero(b.expr):
        return Invariant(a.expr, shape)
    return Invariant(_commutative("add", a.expr, b.expr), shape)


def inv_mul(a: Invariant, b: Invariant) -> Invariant:
    shape = T.binary_shape(a.shape, b.shape)
    if _is_one(a.expr):
        return Invariant(b.expr, shape)
    if _is_one(b.expr):
        return Invariant(a.expr, shape)
    return Invariant(_commutative("mul", a.expr, b.expr), shape)


def inv_neg(a: Invariant) -> Invariant:
    e = a.expr
    if isinstance(e, ir.Zeros):
        return a
    if isinstance(e, ir.Unary) and e.op == "neg":
        return Invariant(e.arg, a.shape)
    return Invariant(_fold(ir.Unary("neg", e)), a.shape)


def inv_scale(factor: float, a: Invariant) -> Invariant:
    if factor == 1.0 or isinstance(a.expr, ir.Zeros):
        return a
    return Invariant(_fold(ir.Scale(float(factor), a.expr)), a.shape)


def inv_apply(kind: str, children: Sequence[Invariant], params: tuple = ()) -> Invariant:
    """Build the invariant for ``kind`` applied to invariant children."""
    shape = _kind_shape(kind, [c.shape for c in children], params)
    exprs = [c.expr for c in children]
    if kind == "add":
        return inv_add(*children)
    if kind == "mul":
        return inv_mul(*children)
    if kind == "neg":
        return inv_neg(children[0])
    if kind == "scale":
        return inv_scale(params[0], children[0])
    if kind in ("log", "exp"):
        return Invariant(_fold(ir.Unary(kind, exprs[0])), shape)
    if kind == "pow":
        if _is_zero(exprs[1]):
            return Invariant(ir.Ones(shape), shape)
        if _is_one(exprs[1]):
            return children[0]
        return Invariant(_fold(ir.Pow(exprs[0], exprs[1])), shape)
    if kind == "concat":
        if isinstance(exprs[0], ir.Zeros) and isinstance(exprs[1], ir.Zeros):
            return Invariant(ir.Zeros(shape), shape)
        if isinstance(exprs[0], ir.Ones) and isinstance(exprs[1], ir.Ones):
            return Invariant(ir.Ones(shape), shape)
        return Invariant(_fold(ir.Concat(exprs[0], exprs[1], params[0])), shape)
    if kind in STRUCTURAL_KINDS:
        if isinstance(exprs[0], ir.Zeros):
            return Invariant(ir.Zeros(shape), shape)
        if isinstance(exprs[0], ir.Ones):
            return Invariant(ir.Ones(shape), shape)
        node = {
            "reshape": lambda: ir.Reshape(exprs[0], tuple(params[0])),
            "transpose": lambda: ir.Transpose(exprs[0], tuple(params[0])),
            "slice": lambda: ir.Slice(exprs[0], tuple(params[0])),
            "broadcast": lambda: ir.Broadcast(exprs[0], tuple(params[0])),
        }[kind]()
        return Invariant(_fold(node), shape)
    raise ValueError(f"cannot fold {kind!r}")


def apply_kind(kind: str, children: Sequence[TevExpr], params: tuple = ()) -> TevExpr:
    if kind != "inject" and all(isinstance(c, Invariant) for c in children):
        return inv_apply(kind, children, params)
    return wrap(kind, children, params)


def _identity(op: str, shape: Shape) -> Invariant:
    return Invariant(ir.Zeros(shape) if op == ADD else ir.Ones(shape), shape)


def _as_operands(t: TevExpr, op: str, length: int) -> list[TevExpr]:
    """Operand list of ``t`` padded with the identity of ``op`` to ``length``."""
    ops = list(t.operands) if isinstance(t, Chain) else [t]
    return ops + [_identity(op, t.shape)] * (length - len(ops))


# -- rewrite rules ------------------------------------------------------------------------------
# Each rule maps a node (whose children are already normal) to its rewrite,
# or None when the rule does not apply.

def _all_ops(t: TevExpr, op: str) -> bool:
    return isinstance(t, Chain) and all(o == op for o in t.ops)


def _rule_unknown(t: TevExpr) -> Optional[TevExpr]:
    kids = t.operands if isinstance(t, Chain) else t.children if isinstance(t, Wrap) else ()
    for c in kids:
        if isinstance(c, Unknown):
            return Unknown(c.var, c.reason, t.shape)
    return None


def _rule_flatten(t: TevExpr) -> Optional[TevExpr]:
    if isinstance(t, Chain) and isinstance(t.operands[-1], Chain):
        inner = t.operands[-1]
        return make_chain(t.operands[:-1] + inner.operands, t.ops + inner.ops)
    return None


def _rule_fold(t: TevExpr) -> Optional[TevExpr]:
    if isinstance(t, Wrap) and t.kind != "inject" and all(isinstance(c, Invariant) for c in t.children):
        return inv_apply(t.kind, t.children, t.params)
    return None


def _push(kinds: tuple[str, ...]) -> Callable[[TevExpr], Optional[TevExpr]]:
    def rule(t: TevExpr) -> Optional[TevExpr]:
        if not (isinstance(t, Wrap) and t.kind in kinds):
            return None
        c = t.children[0]
        if not isinstance(c, Chain) or c.uniform_op() is None:
            return None
        return make_chain([apply_kind(t.kind, [e], t.params) for e in c.operands], c.ops)

    return rule


def _rule_concat(t: TevExpr) -> Optional[TevExpr]:
    if not (isinstance(t, Wrap) and t.kind == "concat"):
        return None
    a, b = t.children
    if not (isinstance(a, Chain) or isinstance(b, Chain)):
        return None
    if any(not isinstance(x, (Chain, Invariant)) for x in (a, b)):
        return None
    if isinstance(a, Chain) and isinstance(b, Chain) and a.ops == b.ops:
        ops, left, right = a.ops, list(a.operands), list(b.operands)
    else:
        uniform = {x.uniform_op() for x in (a, b) if isinstance(x, Chain)}
        if len(uniform) != 1 or None in uniform:
            return None
        op = uniform.pop()
        n = max(len(x.operands) if isinstance(x, Chain) else 1 for x in (a, b))
        ops, left, right = (op,) * (n - 1), _as_operands(a, op, n), _as_operands(b, op, n)
    # a varying final operand may not end up in the middle of the result
    if any(not isinstance(e, Invariant) for e in left[:-1] + right[:-1]):
        return None
    return make_chain([apply_kind("concat", [x, y], t.params) for x, y in zip(left, right)], ops)


def _rule_log(t: TevExpr) -> Optional[TevExpr]:
    if isinstance(t, Wrap) and t.kind == "log" and _all_ops(t.children[0], MUL):
        c = t.children[0]
        return make_chain([apply_kind("log", [e]) for e in c.operands], (ADD,) * c.depth)
    return None


def _rule_exp(t: TevExpr) -> Optional[TevExpr]:
    if isinstance(t, Wrap) and t.kind == "exp" and _all_ops(t.children[0], ADD):
        c = t.children[0]
        return make_chain([apply_kind("exp", [e]) for e in c.operands], (MUL,) * c.depth)
    return None


def _invariant_and_chain(t: Wrap) -> Optional[tuple[Invariant, Chain]]:
    a, b = t.children
    if isinstance(a, Invariant) and isinstance(b, Chain):
        return a, b
    if isinstance(b, Invariant) and isinstance(a, Chain):
        return b, a
    return None


def _rule_add_invariant(t: TevExpr) -> Optional[TevExpr]:
    if not (isinstance(t, Wrap) and t.kind == "add"):
        return None
    pair = _invariant_and_chain(t)
    if pair is None or pair[1].ops[0] != ADD:
        return None
    k, c = pair
    return make_chain((inv_add(k, c.operands[0]),) + c.operands[1:], c.ops)


def _distribute(c: Chain, f: Callable[[TevExpr], TevExpr]) -> TevExpr:
    """Apply a linear map to a chain: through every ``+`` link, stopping after a ``*``."""
    out = [f(c.operands[0])]
    k = 1
    while k < len(c.operands) and c.ops[k - 1] == ADD:
        out.append(f(c.operands[k]))
        k += 1
    out.extend(c.operands[k:])
    return make_chain(out, c.ops)


def _rule_mul_invariant(t: TevExpr) -> Optional[TevExpr]:
    if not (isinstance(t, Wrap) and t.kind == "mul"):
        return None
    pair = _invariant_and_chain(t)
    if pair is None:
        return None
    k, c = pair
    return _distribute(c, lambda e: apply_kind("mul", [k, e]))


def _zip_ok(a: Chain, b: Chain) -> bool:
    n = max(len(a.operands), len(b.operands))
    for c in (a, b):
        if len(c.operands) < n and not c.invariant_operands():
            return False
    return True


def _rule_add_chains(t: TevExpr) -> Optional[TevExpr]:
    if not (isinstance(t, Wrap) and t.kind == "add"):
        return None
    a, b = t.children
    if not (_all_ops(a, ADD) and _all_ops(b, ADD) and _zip_ok(a, b)):
        return None
    n = max(len(a.operands), len(b.operands))
    pairs = zip(_as_operands(a, ADD, n), _as_operands(b, ADD, n))
    return make_chain([apply_kind("add", [x, y]) for x, y in pairs], (ADD,) * (n - 1))


def _add_lists(*lists: list[Invariant]) -> list[Invariant]:
    n = max(len(x) for x in lists)
    out = []
    for j in range(n):
        terms = [x[j] for x in lists if j < len(x)]
        acc = terms[0]
        for term in terms[1:]:
            acc = inv_add(acc, term)
        out.append(acc)
    return out


def _cr_product(f: Sequence[Invariant], g: Sequence[Invariant]) -> list[Invariant]:
    """Operands of the product of two all-``+`` chains with invariant operands.

    Uses (fg)(i+1) - (fg)(i) = f(i) g'(i) + f'(i) g(i) + f'(i) g'(i), where
    f' is the step chain of f.
    """
    memo: dict[tuple[int, int], list[Invariant]] = {}

    def prod(i: int, j: int) -> list[Invariant]:
        key = (i, j)
        if key in memo:
            return memo[key]
        fi, gj = f[i:], g[j:]
        if len(fi) == 1:
            out = [inv_mul(fi[0], e) for e in gj]
        elif len(gj) == 1:
            out = [inv_mul(e, gj[0]) for e in fi]
        else:
            out = [inv_mul(fi[0], gj[0])] + _add_lists(prod(i, j + 1), prod(i + 1, j), prod(i + 1, j + 1))
        memo[key] = out
        return out

    return prod(0, 0)


def _rule_mul_chains(t: TevExpr) -> Optional[TevExpr]:
    if not (isinstance(t, Wrap) and t.kind == "mul"):
        return None
    a, b = t.children
    if not (_all_ops(a, ADD) and _all_ops(b, ADD) and a.invariant_operands() and b.invariant_operands()):
        return None
    if a.depth + b.depth > MAX_DEPTH:
        return Unknown("", f"DepthLimit: product depth {a.depth + b.depth} exceeds {MAX_DEPTH}", t.shape)
    ops = _cr_product(a.operands, b.operands)
    return make_chain(ops, (ADD,) * (len(ops) - 1))


def _rule_mul_geometric(t: TevExpr) -> Optional[TevExpr]:
    if not (isinstance(t, Wrap) and t.kind == "mul"):
        return None
    a, b = t.children
    if not (_all_ops(a, MUL) and _all_ops(b, MUL) and _zip_ok(a, b)):
        return None
    n = max(len(a.operands), len(b.operands))
    pairs = zip(_as_operands(a, MUL, n), _as_operands(b, MUL, n))
    return make_chain([apply_kind("mul", [x, y]) for x, y in pairs], (MUL,) * (n - 1))


def _rule_inject(t: TevExpr) -> Optional[TevExpr]:
    if isinstance(t, Wrap) and t.kind == "inject" and isinstance(t.children[0], Invariant):
        init, step = t.children
        return make_chain((init, step), (t.params[0],))
    return None


def _rule_neg(t: TevExpr) -> Optional[TevExpr]:
    if isinstance(t, Wrap) and t.kind == "neg" and isinstance(t.children[0], Chain):
        return _distribute(t.children[0], lambda e: apply_kind("neg", [e]))
    return None


def _rule_scale(t: TevExpr) -> Optional[TevExpr]:
    if isinstance(t, Wrap) and t.kind == "scale" and isinstance(t.children[0], Chain):
        return _distribute(t.children[0], lambda e: apply_kind("scale", [e], t.params))
    return None


def _rule_pow(t: TevExpr) -> Optional[TevExpr]:
    if not (isinstance(t, Wrap) and t.kind == "pow"):
        return None
    base, exponent = t.children
    if isinstance(base, Invariant) and _all_ops(exponent, ADD):
        return make_chain([apply_kind("pow", [base, e]) for e in exponent.operands], (MUL,) * exponent.depth)
    return None


# priority order: hygiene first, then the core algebra, then extensions
RULES: dict[str, Callable[[TevExpr], Optional[TevExpr]]] = {
    "unknown-propagate": _rule_unknown,
    "flatten": _rule_flatten,
    "fold-invariant": _rule_fold,
    "reshape": _push(("reshape", "transpose")),
    "slice": _push(("slice",)),
    "broadcast": _push(("broadcast",)),
    "concat": _rule_concat,
    "log": _rule_log,
    "exp": _rule_exp,
    "add-invariant": _rule_add_invariant,
    "mul-invariant": _rule_mul_invariant,
    "add-chains": _rule_add_chains,
    "mul-chains": _rule_mul_chains,
    "inject": _rule_inject,
    "neg": _rule_neg,
    "scale": _rule_scale,
    "pow-const-base": _rule_pow,
    "mul-geometric": _rule_mul_geometric,
}


# -- normalization ----------------------------------------------------------------------------

Path = tuple[int, ...]


@dataclass(frozen=True)
class TraceEntry:
    rule: str
    path: Path
    before: TevExpr
    after: TevExpr

    def to_json(self) -> dict:
        return {"rule": self.rule, "path": list(self.path), "before": render(self.before), "after": render(self.after)}


@dataclass
class RewriteTrace:
    initial: TevExpr
    entries: list[TraceEntry] = field(default_factory=list)
    final: Optional[TevExpr] = None

    def rules(self) -> list[str]:
        return [e.rule for e in self.entries]

    def replay(self, check_rules: bool = True) -> TevExpr:
        """Re-apply every entry at its recorded position, starting from ``initial``."""
        expr = self.initial
        for e in self.entries:
            current = get_at(expr, e.path)
            if current != e.before:
                raise AssertionError(f"trace entry {e.rule!r} at {e.path} does not match the expression")
            if check_rules and RULES[e.rule](e.before) != e.after:
                raise AssertionError(f"rule {e.rule!r} does not reproduce the recorded rewrite")
            expr = replace_at(expr, e.path, e.after)
        return expr

    def to_json(self) -> list[dict]:
        return [e.to_json() for e in self.entries]


def subterms(t: TevExpr) -> tuple[TevExpr, ...]:
    if isinstance(t, Chain):
        return t.operands
    if isinstance(t, Wrap):
        return t.children
    return ()


def _rebuild(t: TevExpr, kids: Sequence[TevExpr]) -> TevExpr:
    kids = tuple(kids)
    if isinstance(t, Chain):
        return Chain(kids, t.ops)
    if isinstance(t, Wrap):
        return Wrap(t.kind, kids, t.params, t.shape)
    return t


def get_at(t: TevExpr, path: Path) -> TevExpr:
    for k in path:
        t = subterms(t)[k]
    return t


def replace_at(t: TevExpr, path: Path, new: TevExpr) -> TevExpr:
    if not path:
        return new
    kids = list(subterms(t))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return _rebuild(t, kids)


class _Normalizer:
    def __init__(self, limit: int):
        self.entries: list[TraceEntry] = []
        self.limit = limit

    def run(self, t: TevExpr, path: Path) -> TevExpr:
        while True:
            kids = subterms(t)
            if kids:
                new = [self.run(c, path + (k,)) for k, c in enumerate(kids)]
                if any(a is not b for a, b in zip(new, kids)):
                    t = _rebuild(t, new)
            for name, rule in RULES.items():
                after = rule(t)
                if after is not None and after != t:
                    self.entries.append(TraceEntry(name, path, t, after))
                    if len(self.entries) > self.limit:
                        raise RewriteLimitExceeded(f"more than {self.limit} rewrites; a rule does not terminate")
                    t = after
                    break
            else:
                return t


def normalize(t: TevExpr, limit: int = MAX_REWRITES) -> tuple[TevExpr, RewriteTrace]:
    """Rewrite ``t`` innermost-first to a fixed point; returns the result and its trace."""
    n = _Normalizer(limit)
    out = n.run(t, ())
    return out, RewriteTrace(t, n.entries, out)


def is_normal_form(t: TevExpr) -> bool:
    """Structural chain invariants plus 'no rule applies anywhere'."""
    if isinstance(t, Chain):
        if isinstance(t.operands[-1], Chain) or t.depth > MAX_DEPTH:
            return False
        if any(e.shape != t.shape for e in t.operands):
            return False
    if any(rule(t) not in (None, t) for rule in RULES.values()):
        return False
    return all(is_normal_form(c) for c in subterms(t))


# -- public rewrite operations ---------------------------------------------------------------------

def _apply(rule: str, node: TevExpr, err: type[TevError] = RuleNotApplicable) -> TevExpr:
    out = RULES[rule](node)
    if out is None:
        raise err(f"{rule} does not apply to {render(node)}")
    return out


def add_invariant(k: Invariant, t: Chain) -> TevExpr:
    """``K + {A, +, tau} => {K + A, +, tau}``."""
    return _apply("add-invariant", wrap("add", [k, t]))


def mul_invariant(k: Invariant, t: Chain) -> TevExpr:
    """``K * {A, +, tau} => {K * A, +, K * tau}``."""
    return normalize(_apply("mul-invariant", wrap("mul", [k, t])))[0]


def tev_add(a: TevExpr, b: TevExpr) -> TevExpr:
    """Operand-wise sum of additive chains; a wrap when either side is not additive."""
    node = wrap("add", [a, b])
    for rule in ("fold-invariant", "add-invariant", "add-chains"):
        out = RULES[rule](node)
        if out is not None and (rule != "add-invariant" or isinstance(a, Invariant) or isinstance(b, Invariant)):
            return normalize(out)[0]
    return node


def tev_mul(a: TevExpr, b: TevExpr) -> TevExpr:
    """Chain-of-recurrences product of two additive chains (depth adds up)."""
    node = wrap("mul", [a, b])
    if isinstance(a, Invariant) or isinstance(b, Invariant):
        return normalize(node)[0]
    return _apply("mul-chains", node, NonAdditiveChain)


def push_structural(kind: str, params: tuple, t: TevExpr) -> TevExpr:
    """Move reshape/transpose/slice/broadcast inside a uniform chain."""
    node = wrap(kind, [t], params)
    rule = "reshape" if kind == "transpose" else kind
    out = RULES[rule](node)
    return node if out is None else out


def concat_chains(a: TevExpr, b: TevExpr, axis: int) -> TevExpr:
    node = wrap("concat", [a, b], (axis,))
    out = _rule_concat(node)
    return node if out is None else out


def log_exp_rewrite(kind: str, t: Chain) -> TevExpr:
    """``log{A,*,tau} => {log A,+,log tau}`` and ``exp{A,+,tau} => {exp A,*,exp tau}``."""
    return _apply(kind, wrap(kind, [t]), WrongChainOperator)


def inject(step: TevExpr, init: Invariant, op: str = ADD) -> TevExpr:
    """Chain for a variable starting at ``init`` and updated ``v = v op step(i)`` each iteration."""
    return normalize(wrap("inject", [init, step], (op,)))[0]


# -- evaluation --------------------------------------------------------------------------------

def _tensor_op(kind: str, vals: Sequence[Tensor], params: tuple) -> Tensor:
    if kind == "add":
        return T.elementwise_binary("add", *vals)
    if kind == "mul":
        return T.elementwise_binary("mul", *vals)
    if kind in ("neg", "log", "exp"):
        return T.elementwise_unary(kind, vals[0])
    if kind == "scale":
        return T.scale(params[0], vals[0])
    if kind == "pow":
        return T.power(*vals)
    if kind == "reshape":
        return T.reshape(vals[0], params[0])
    if kind == "transpose":
        return T.transpose(vals[0], params[0])
    if kind == "slice":
        return T.slice_tensor(vals[0], params[0])
    if kind == "broadcast":
        return T.broadcast(vals[0], params[0])
    if kind == "concat":
        return T.concat(vals[0], vals[1], params[0])
    raise ValueError(kind)


def _combine(op: str, a: Tensor, b: Tensor) -> Tensor:
    return T.elementwise_binary("add" if op == ADD else "mul", a, b)


def eval_step(t: TevExpr, i: int, env: Mapping[str, Tensor]) -> Tensor:
    """Reference meaning of ``t`` at iteration ``i``, computed step by step."""
    if i < 0:
        raise NegativeIndex(f"iteration index {i} is negative")
    if isinstance(t, Invariant):
        return eval_expr(t.expr, env)
    if isinstance(t, Unknown):
        raise UnknownValue(f"{render(t)} has no value ({t.reason})")
    if isinstance(t, Wrap):
        if t.kind == "inject":
            return _eval_inject(t.children[0], t.children[1], t.params[0], i, env)
        return _tensor_op(t.kind, [eval_step(c, i, env) for c in t.children], t.params)
    # suffix values v_j(s) of the chain; v_j(s+1) = v_j(s) op_{j+1} v_{j+1}(s)
    vals = [eval_step(e, 0, env) for e in t.operands]
    last = t.operands[-1]
    varying = not isinstance(last, Invariant)
    for s in range(i):
        for j in range(len(vals) - 1):
            vals[j] = _combine(t.ops[j], vals[j], vals[j + 1])
        if varying:
            vals[-1] = eval_step(last, s + 1, env)
    return vals[0]


def _eval_inject(init: TevExpr, step: TevExpr, op: str, i: int, env: Mapping[str, Tensor]) -> Tensor:
    v = eval_step(init, 0, env)
    for s in range(i):
        v = _combine(op, v, eval_step(step, s, env))
    return v


def unroll_at(t: TevExpr, i: int) -> Invariant:
    """Symbolic counterpart of :func:`eval_step`: an IR expression with shared subtrees."""
    if i < 0:
        raise NegativeIndex(f"iteration index {i} is negative")
    memo: dict[tuple[int, int], ir.Expr] = {}

    def go(node: TevExpr, k: int) -> ir.Expr:
        key = (id(node), k)
        if key in memo:
            return memo[key]
        if isinstance(node, Invariant):
            out = node.expr
        elif isinstance(node, Unknown):
            raise UnknownValue(f"{render(node)} has no value ({node.reason})")
        elif isinstance(node, Wrap):
            if node.kind == "inject":
                out = go(Chain(node.children, node.params), k)
            else:
                out = _expr_op(node.kind, [go(c, k) for c in node.children], node.params, node.shape)
        else:
            vals = [go(e, 0) for e in node.operands]
            last = node.operands[-1]
            for s in range(k):
                for j in range(len(vals) - 1):
                    vals[j] = ir.Binary("add" if node.ops[j] == ADD else "mul", vals[j], vals[j + 1])
                if not isinstance(last, Invariant):
                    vals[-1] = go(last, s + 1)
            out = vals[0]
        memo[key] = out
        return out

    return Invariant(go(t, i), t.shape)


def _expr_op(kind: str, args: Sequence[ir.Expr], params: tuple, shape: Shape) -> ir.Expr:
    if kind in ("add", "mul"):
        return ir.Binary(kind, args[0], args[1])
    if kind in ("neg", "log", "exp"):
        return ir.Unary(kind, args[0])
    if kind == "scale":
        return ir.Scale(params[0], args[0])
    if kind == "pow":
        return ir.Pow(args[0], args[1])
    if kind == "reshape":
        return ir.Reshape(args[0], tuple(params[0]))
    if kind == "transpose":
        return ir.Transpose(args[0], tuple(params[0]))
    if kind == "slice":
        return ir.Slice(args[0], tuple(params[0]))
    if kind == "broadcast":
        return ir.Broadcast(args[0], tuple(params[0]))
    if kind == "concat":
        return ir.Concat(args[0], args[1], params[0])
    raise ValueError(kind)


# -- closed forms -------------------------------------------------------------------------------

def closed_form_at(t: TevExpr, i: int) -> Invariant:
    """Loop-free value of a uniform chain at iteration ``i``.

    ``+`` chains give ``sum_j C(i, j) E_j`` (collected into a linear
    combination); ``*`` chains give ``prod_j E_j ** C(i, j)``.
    """
    if i < 0:
        raise NegativeIndex(f"iteration index {i} is negative")
    if isinstance(t, Invariant):
        return t
    if not isinstance(t, Chain):
        raise ClosedFormUnavailable(f"{render(t)} is not a chain")
    op = t.uniform_op()
    if op is None:
        raise MixedOperatorChain(f"{render(t)} mixes '+' and '*'")
    if not t.invariant_operands():
        raise ClosedFormUnavailable(f"{render(t)} has a varying final operand")
    coeffs = [math.comb(i, j) for j in range(len(t.operands))]
    if op == ADD:
        terms = [(Fraction(c), e.expr) for c, e in zip(coeffs, t.operands) if c]
        return Invariant(linear_combination(terms, t.shape), t.shape)
    acc: Optional[ir.Expr] = None
    for c, e in zip(coeffs, t.operands):
        if c == 0:
            continue
        factor = e.expr if c == 1 else ir.Pow(e.expr, ir.Scale(float(c), ir.Ones(t.shape)))
        acc = factor if acc is None else ir.Binary("mul", acc, factor)
    return Invariant(acc, t.shape)


_LINEAR_STRUCTURAL = (ir.Reshape, ir.Transpose, ir.Slice, ir.Broadcast)


def _expand(e: ir.Expr, coef: Fraction, atoms: dict[ir.Expr, Fraction], const: list) -> None:
    if coef == 0 or isinstance(e, ir.Zeros):
        return
    if isinstance(e, ir.Binary) and e.op in ("add", "sub"):
        _expand(e.lhs, coef, atoms, const)
        _expand(e.rhs, coef if e.op == "add" else -coef, atoms, const)
    elif isinstance(e, ir.Unary) and e.op == "neg":
        _expand(e.arg, -coef, atoms, const)
    elif isinstance(e, ir.Scale):
        _expand(e.arg, coef * Fraction(e.factor), atoms, const)
    elif isinstance(e, ir.Lit):
        term = T.scale(float(coef), e.value)
        const[0] = term if const[0] is None else T.elementwise_binary("add", const[0], term)
    elif isinstance(e, _LINEAR_STRUCTURAL):
        inner: dict[ir.Expr, Fraction] = {}
        inner_const: list = [None]
        _expand(e.arg, coef, inner, inner_const)
        for atom, c in inner.items():
            key = _fold(ir.with_children(e, [atom]))
            atoms[key] = atoms.get(key, Fraction(0)) + c
        if inner_const[0] is not None:
            _expand(ir.Lit(eval_expr(ir.with_children(e, [ir.Lit(inner_const[0])]), {})), Fraction(1), atoms, const)
    else:
        atoms[e] = atoms.get(e, Fraction(0)) + coef


def linear_combination(terms: Sequence[tuple[Fraction, ir.Expr]], shape: Shape) -> ir.Expr:
    """``sum c_k e_k`` with like terms collected; structural ops are pushed to the leaves."""
    atoms: dict[ir.Expr, Fraction] = {}
    const: list = [None]
    for c, e in terms:
        _expand(e, Fraction(c), atoms, const)
    parts: list[ir.Expr] = []
    for atom, c in atoms.items():
        if c == 0:
            continue
        if c == 1:
            parts.append(atom)
        elif c == -1:
            parts.append(ir.Unary("neg", atom))
        else:
            parts.append(ir.Scale(float(c), atom))
    if const[0] is not None and np.any(const[0].array):
        parts.append(ir.Lit(const[0]))
    if not parts:
        return ir.Zeros(tuple(shape))
    acc = parts[0]
    for p in parts[1:]:
        acc = ir.Binary("add", acc, p)
    return acc


def symbolic_closed_form(t: TevExpr, counter: str = "k") -> str:
    """Human-readable closed form in the trip count, e.g. ``y + k*(k-1)/2*a``."""
    if isinstance(t, Invariant):
        return render(t)
    if not isinstance(t, Chain) or t.uniform_op() is None or not t.invariant_operands():
        raise ClosedFormUnavailable(f"{render(t)} has no closed form")

    def binom(j: int) -> str:
        if j == 0:
            return ""
        if j == 1:
            return counter
        num = "*".join([counter] + [f"({counter}-{m})" for m in range(1, j)])
        return f"{num}/{math.factorial(j)}"

    pieces = []
    for j, e in enumerate(t.operands):
        b = binom(j)
        if t.ops[0] == ADD:
            pieces.append(render(e) if not b else f"{b}*{render(e)}")
        else:
            pieces.append(render(e) if not b else f"{render(e)}^({b})")
    return (" + " if t.ops[0] == ADD else " * ").join(pieces)


# -- from IR ------------------------------------------------------------------------------------

def from_ir(e: ir.Expr, env: Mapping[str, TevExpr]) -> TevExpr:
    """Un-normalized TeV tree for ``e`` given the TeV of every name it references.

    A subexpression whose names are all invariant stays a single invariant.
    """
    names = ir.free_vars(e)
    missing = names - set(env)
    if missing:
        raise ir.UnknownIdentifier(sorted(missing)[0])
    if all(isinstance(env[n], Invariant) for n in names):
        subst = {n: env[n].expr for n in names}
        expr = _substitute(e, subst)
        return Invariant(expr, ir.infer_shape(e, {n: env[n].shape for n in names}))
    if isinstance(e, ir.Var):
        return env[e.name]
    kids = [from_ir(c, env) for c in ir.children(e)]
    if isinstance(e, ir.Binary):
        if e.op == "sub":
            return wrap("add", [kids[0], wrap("neg", [kids[1]])])
        return wrap(e.op, kids)
    if isinstance(e, ir.Unary):
        return wrap(e.op, kids)
    if isinstance(e, ir.Scale):
        return wrap("scale", kids, (e.factor,))
    if isinstance(e, ir.Pow):
        return wrap("pow", kids)
    if isinstance(e, ir.Reshape):
        return wrap("reshape", kids, (tuple(e.shape),))
    if isinstance(e, ir.Transpose):
        return wrap("transpose", kids, (tuple(e.perm),))
    if isinstance(e, ir.Slice):
        return wrap("slice", kids, (tuple(e.bounds),))
    if isinstance(e, ir.Broadcast):
        return wrap("broadcast", kids, (tuple(e.shape),))
    if isinstance(e, ir.Concat):
        return wrap("concat", kids, (e.axis,))
    raise TypeError(f"not an expression: {e!r}")


def _substitute(e: ir.Expr, subst: Mapping[str, ir.Expr]) -> ir.Expr:
    if isinstance(e, ir.Var):
        return subst.get(e.name, e)
    kids = ir.children(e)
    if not kids:
        return e
    new = [_substitute(c, subst) for c in kids]
    if all(a is b for a, b in zip(new, kids)):
        return e
    return ir.with_children(e, new)


def references(t: TevExpr) -> set[str]:
    """IR names mentioned by the invariant leaves of ``t``."""
    if isinstance(t, Invariant):
        return ir.free_vars(t.expr)
    out: set[str] = set()
    for c in subterms(t):
        out |= references(c)
    return out
