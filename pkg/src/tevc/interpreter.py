"""Naive reference executor for :class:`~tevc.ir.Program`.

It runs statements strictly in order, one loop iteration at a time, with no
algebraic simplification. Everything else in the package is checked against it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

from . import ir
from . import tensor as T
from .tensor import Tensor


class UnboundParameter(Exception):
    code = "UnboundParameter"


class BindingError(Exception):
    code = "BindingShapeMismatch"


def eval_expr(e: ir.Expr, env: Mapping[str, Tensor]) -> Tensor:
    memo: dict[int, Tensor] = {}

    def go(n: ir.Expr) -> Tensor:
        k = id(n)
        hit = memo.get(k)
        if hit is not None:
            return hit
        if isinstance(n, ir.Var):
            try:
                out = env[n.name]
            except KeyError:
                raise UnboundParameter(f"no value bound to {n.name!r}") from None
        elif isinstance(n, ir.Lit):
            out = n.value
        elif isinstance(n, ir.Zeros):
            out = T.zeros(n.shape)
        elif isinstance(n, ir.Ones):
            out = T.ones(n.shape)
        elif isinstance(n, ir.Binary):
            out = T.elementwise_binary(n.op, go(n.lhs), go(n.rhs))
        elif isinstance(n, ir.Unary):
            out = T.elementwise_unary(n.op, go(n.arg))
        elif isinstance(n, ir.Scale):
            out = T.scale(n.factor, go(n.arg))
        elif isinstance(n, ir.Pow):
            out = T.power(go(n.base), go(n.exponent))
        elif isinstance(n, ir.Reshape):
            out = T.reshape(go(n.arg), n.shape)
        elif isinstance(n, ir.Transpose):
            out = T.transpose(go(n.arg), n.perm)
        elif isinstance(n, ir.Slice):
            out = T.slice_tensor(go(n.arg), n.bounds)
        elif isinstance(n, ir.Concat):
            out = T.concat(go(n.lhs), go(n.rhs), n.axis)
        elif isinstance(n, ir.Broadcast):
            out = T.broadcast(go(n.arg), n.shape)
        else:
            raise TypeError(f"not an expression: {n!r}")
        memo[k] = out
        return out

    return go(e)


@dataclass
class RunResult:
    returns: list[Tensor]
    # carried variable -> value at the start of each iteration (len == trip count)
    headers: Optional[dict[str, list[Tensor]]] = None
    # body-assigned variable -> value at the end of each iteration
    body_values: Optional[dict[str, list[Tensor]]] = None
    final_env: dict[str, Tensor] = field(default_factory=dict)

    def to_json(self) -> dict:
        out: dict = {"returns": [t.to_json() for t in self.returns]}
        if self.headers is not None:
            out["headers"] = {k: [t.to_json() for t in v] for k, v in self.headers.items()}
        return out


def check_bindings(p: ir.Program, env: Mapping[str, Tensor]) -> None:
    for prm in p.params:
        if prm.name not in env:
            raise UnboundParameter(f"parameter {prm.name!r} has no binding")
        got = env[prm.name].shape
        if got != tuple(prm.shape):
            raise BindingError(f"parameter {prm.name!r} expects shape {tuple(prm.shape)}, got {got}")


def carried_variables(p: ir.Program) -> list[str]:
    """Names assigned in the loop body that already exist before the loop."""
    if p.loop is None:
        return []
    outer = {prm.name for prm in p.params} | {s.name for s in p.pre}
    out: list[str] = []
    for s in p.loop.body:
        if s.name in outer and s.name not in out:
            out.append(s.name)
    return out


def run_prelude(p: ir.Program, env: Mapping[str, Tensor]) -> dict[str, Tensor]:
    """Bindings plus every pre-loop variable: the environment loop invariants live in."""
    check_bindings(p, env)
    scope = {prm.name: env[prm.name] for prm in p.params}
    for s in p.pre:
        scope[s.name] = eval_expr(s.expr, scope)
    return scope


def run_program(
    p: ir.Program,
    env: Mapping[str, Tensor],
    record_headers: bool = False,
    record_body: bool = False,
) -> RunResult:
    scope = run_prelude(p, env)
    headers: Optional[dict[str, list[Tensor]]] = None
    body_values: Optional[dict[str, list[Tensor]]] = None
    if p.loop is not None:
        loop = p.loop
        carried = carried_variables(p)
        if record_headers:
            headers = {v: [] for v in carried}
        if record_body:
            body_values = {}
        for i in range(loop.trip_count):
            if headers is not None:
                for v in carried:
                    headers[v].append(scope[v])
            scope[loop.counter] = Tensor.scalar(i)
            for s in loop.body:
                scope[s.name] = eval_expr(s.expr, scope)
            if body_values is not None:
                for s in loop.body:
                    body_values.setdefault(s.name, []).append(scope[s.name])
        # body temporaries and the counter do not escape the loop
        carried_set = set(carried)
        for s in loop.body:
            if s.name not in carried_set:
                scope.pop(s.name, None)
        scope.pop(loop.counter, None)
    for s in p.post:
        scope[s.name] = eval_expr(s.expr, scope)
    return RunResult([scope[r] for r in p.returns], headers, body_values, scope)
