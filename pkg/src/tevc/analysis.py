"""Assign a TeV expression to every variable of a loop body and compute exit values."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import ir
from . import tev
from .interpreter import carried_variables
from .tev import ADD, MUL, Chain, Invariant, RewriteTrace, TevExpr, Unknown

UNROLL_LIMIT = 64


class AnalysisError(Exception):
    code = "AnalysisError"


class NoTevAvailable(AnalysisError):
    code = "NoTevAvailable"


class MixedChainTooLong(AnalysisError):
    code = "MixedChainTooLong"


@dataclass
class AnalysisResult:
    program: ir.Program
    carried: list[str]
    per_variable: dict[str, TevExpr]
    exit_values: dict[str, Invariant]
    failures: dict[str, str]
    exit_failures: dict[str, str] = field(default_factory=dict)
    traces: dict[str, RewriteTrace] = field(default_factory=dict)

    @property
    def trip_count(self) -> int:
        return self.program.loop.trip_count if self.program.loop else 0

    @property
    def trace(self) -> list[tuple[str, tev.TraceEntry]]:
        return [(v, e) for v, tr in self.traces.items() for e in tr.entries]

    def closed_forms(self) -> dict[str, str]:
        out = {}
        for v in self.carried:
            t = self.per_variable.get(v)
            if t is None:
                continue
            try:
                out[v] = tev.symbolic_closed_form(t)
            except tev.TevError:
                pass
        return out

    def to_json(self) -> dict:
        return {
            "tripCount": self.trip_count,
            "carried": list(self.carried),
            "perVariable": {v: tev.render(t) for v, t in self.per_variable.items()},
            "closedForms": self.closed_forms(),
            "exitValues": {v: tev.render(t) for v, t in self.exit_values.items()},
            "failures": dict(self.failures),
            "exitFailures": dict(self.exit_failures),
            "trace": [dict(var=v, **e.to_json()) for v, e in self.trace],
        }


# -- update recognition --------------------------------------------------------------------

def _add_terms(e: ir.Expr, sign: int = 1) -> list[tuple[int, ir.Expr]]:
    if isinstance(e, ir.Binary) and e.op in ("add", "sub"):
        return _add_terms(e.lhs, sign) + _add_terms(e.rhs, sign if e.op == "add" else -sign)
    return [(sign, e)]


def _mul_factors(e: ir.Expr) -> tuple[float, list[ir.Expr]]:
    if isinstance(e, ir.Binary) and e.op == "mul":
        c1, f1 = _mul_factors(e.lhs)
        c2, f2 = _mul_factors(e.rhs)
        return c1 * c2, f1 + f2
    if isinstance(e, ir.Scale):
        c, f = _mul_factors(e.arg)
        return e.factor * c, f
    return 1.0, [e]


def match_update(rhs: ir.Expr, v: str, shape: tuple[int, ...]) -> Optional[tuple[str, ir.Expr]]:
    """Recognize ``v = v (+|*) step`` after flattening nested sums or products.

    Returns the operator and the step expression, or None. The step may still
    mention ``v`` indirectly; callers check dependencies.
    """
    me = ir.Var(v)
    if rhs == me:
        return ADD, ir.Zeros(shape)
    if isinstance(rhs, ir.Binary) and rhs.op in ("add", "sub"):
        terms = _add_terms(rhs)
        hits = [k for k, (_, t) in enumerate(terms) if t == me]
        if len(hits) != 1 or terms[hits[0]][0] != 1:
            return None
        rest = [st for k, st in enumerate(terms) if k != hits[0]]
        step: Optional[ir.Expr] = None
        for sign, t in rest:
            if step is None:
                step = t if sign > 0 else ir.Unary("neg", t)
            else:
                step = ir.Binary("add" if sign > 0 else "sub", step, t)
        return ADD, step
    if isinstance(rhs, (ir.Binary, ir.Scale)) and getattr(rhs, "op", "mul") == "mul":
        c, factors = _mul_factors(rhs)
        hits = [k for k, f in enumerate(factors) if f == me]
        if len(hits) != 1:
            return None
        rest = [f for k, f in enumerate(factors) if k != hits[0]]
        step = rest[0] if rest else ir.Ones(shape)
        for f in rest[1:]:
            step = ir.Binary("mul", step, f)
        if c != 1.0:
            step = ir.Scale(c, step)
        return MUL, step
    return None


# -- analysis --------------------------------------------------------------------------------

def _counter_chain() -> Chain:
    return tev.chain(tev.lit(0.0), ADD, tev.lit(1.0))


class _Analyzer:
    def __init__(self, p: ir.Program):
        self.p = p
        self.loop = p.loop
        self.shapes = ir.param_shapes(p)
        for s in p.pre:
            self.shapes[s.name] = ir.infer_shape(s.expr, self.shapes)
        self.outer = {n: Invariant(ir.Var(n), sh) for n, sh in self.shapes.items()}
        self.carried = carried_variables(p)
        self.failures: dict[str, str] = {}
        # (var, statement index) -> (op, step expression)
        self.updates: dict[tuple[str, int], tuple[str, ir.Expr]] = {}
        self.update_ops: dict[str, set[str]] = {v: set() for v in self.carried}
        self.edges: dict[str, set[str]] = {v: set() for v in self.carried}

    def classify(self) -> None:
        carried = set(self.carried)
        deps: dict[str, frozenset[str]] = {n: frozenset() for n in self.outer}
        for v in self.carried:
            deps[v] = frozenset({v})
        deps[self.loop.counter] = frozenset()
        for idx, stmt in enumerate(self.loop.body):
            t = stmt.name
            rhs_deps = frozenset().union(*(deps[n] for n in ir.free_vars(stmt.expr)))
            if t in carried:
                m = match_update(stmt.expr, t, self.shapes[t])
                if m is None:
                    if t in rhs_deps:
                        self._fail(t, f"SelfReferentialStep: '{t}' is not updated as {t} + step or {t} * step")
                    else:
                        self._fail(t, f"NonRecurrentUpdate: '{t}' is overwritten without reading its previous value")
                else:
                    op, step = m
                    step_deps = frozenset().union(*(deps[n] for n in ir.free_vars(step)))
                    if t in step_deps:
                        self._fail(t, f"SelfReferentialStep: the step added to '{t}' depends on '{t}' itself")
                    else:
                        self.updates[(t, idx)] = (op, step)
                        self.update_ops[t].add(op)
                        self.edges[t] |= step_deps & carried
                deps[t] = rhs_deps | {t}
            else:
                deps[t] = rhs_deps
        for v, ops in self.update_ops.items():
            if len(ops) > 1:
                self._fail(v, f"MixedUpdateOperators: '{v}' is both added to and multiplied in one iteration")

    def _fail(self, v: str, reason: str) -> None:
        self.failures.setdefault(v, reason)

    def order(self) -> list[str]:
        pending = [v for v in self.carried if v not in self.failures]
        done: list[str] = []
        while pending:
            ready = [v for v in pending if all(w in done or w in self.failures for w in self.edges[v])]
            if not ready:
                for v in pending:
                    self._fail(v, "CyclicDependency: update steps depend on each other: " + ", ".join(pending))
                break
            for v in ready:
                done.append(v)
                pending.remove(v)
        return done

    def walk(self, headers: dict[str, TevExpr], target: Optional[str] = None):
        env: dict[str, TevExpr] = dict(self.outer)
        env[self.loop.counter] = _counter_chain()
        for v in self.carried:
            env[v] = headers.get(v) or Unknown(v, self.failures.get(v, "unresolved"), self.shapes[v])
        steps: list[TevExpr] = []
        temps: dict[str, tuple[TevExpr, RewriteTrace]] = {}
        for idx, stmt in enumerate(self.loop.body):
            t = stmt.name
            upd = self.updates.get((t, idx))
            if upd is not None and t not in self.failures:
                op, step_expr = upd
                raw = tev.from_ir(step_expr, env)
                if t == target:
                    steps.append(raw)
                step = tev.normalize(raw)[0]
                env[t] = tev.normalize(tev.wrap("add" if op == ADD else "mul", [env[t], step]))[0]
            elif t in self.carried:
                env[t] = Unknown(t, self.failures.get(t, "unresolved"), self.shapes[t])
            else:
                norm, trace = tev.normalize(tev.from_ir(stmt.expr, env))
                env[t] = norm
                temps[t] = (norm, trace)
        return env, steps, temps

    def run(self) -> AnalysisResult:
        per_variable: dict[str, TevExpr] = {}
        traces: dict[str, RewriteTrace] = {}
        if self.loop is None:
            return AnalysisResult(self.p, [], {}, {}, {})
        self.classify()
        headers: dict[str, TevExpr] = {}
        for v in self.order():
            _, steps, _ = self.walk(headers, target=v)
            op = next(iter(self.update_ops[v]))
            step = steps[0]
            for s in steps[1:]:
                step = tev.wrap("add" if op == ADD else "mul", [step, s])
            init = self.outer[v]
            header, trace = tev.normalize(tev.wrap("inject", [init, step], (op,)))
            if isinstance(header, Unknown):
                self._fail(v, _unknown_reason(v, header))
                continue
            headers[v] = header
            traces[v] = trace
        _, _, temps = self.walk(headers)
        for stmt in self.loop.body:
            n = stmt.name
            if n in self.carried:
                if n in headers:
                    per_variable[n] = headers[n]
            else:
                t, trace = temps[n]
                if isinstance(t, Unknown):
                    self._fail(n, _unknown_reason(n, t))
                else:
                    per_variable[n] = t
                    traces[n] = trace
        result = AnalysisResult(self.p, list(self.carried), per_variable, {}, self.failures, traces=traces)
        for v in self.carried:
            if v in per_variable:
                try:
                    result.exit_values[v] = exit_value(result, v)
                except (AnalysisError, tev.TevError) as exc:
                    result.exit_failures[v] = f"{getattr(exc, 'code', type(exc).__name__)}: {exc}"
        return result


def _unknown_reason(v: str, u: Unknown) -> str:
    if u.var and u.var != v:
        return f"depends on '{u.var}' ({u.reason})"
    return u.reason


def analyze_loop(p: ir.Program) -> AnalysisResult:
    """TeV of every loop-body variable, exit values of the carried ones, and rewrite traces."""
    return _Analyzer(p).run()


def exit_value(r: AnalysisResult, var: str, trip_count: Optional[int] = None) -> Invariant:
    """Value of ``var`` after ``trip_count`` iterations (default: the program's)."""
    k = r.trip_count if trip_count is None else trip_count
    t = r.per_variable.get(var)
    if t is None:
        raise NoTevAvailable(f"'{var}' has no TeV: {r.failures.get(var, 'not a loop variable')}")
    try:
        return tev.closed_form_at(t, k)
    except (tev.MixedOperatorChain, tev.ClosedFormUnavailable):
        if k > UNROLL_LIMIT:
            raise MixedChainTooLong(
                f"'{var}' has no closed form and {k} iterations exceed the unroll limit of {UNROLL_LIMIT}"
            ) from None
        return tev.unroll_at(t, k)
