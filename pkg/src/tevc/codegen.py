"""Replace the loop of a program by the closed-form exit values of its carried variables."""
from __future__ import annotations

from collections import Counter
from typing import Optional

from . import ir
from .analysis import AnalysisResult, analyze_loop


class NotFullyAnalyzable(Exception):
    code = "NotFullyAnalyzable"

    def __init__(self, blocking: dict[str, str]):
        self.blocking = dict(blocking)
        lines = [f"{v}: {why}" for v, why in self.blocking.items()]
        super().__init__("cannot remove the loop; blocked by " + "; ".join(lines))


def needed_carried(p: ir.Program, carried: list[str]) -> list[str]:
    """Carried variables whose exit value is observable after the loop."""
    used: set[str] = set(p.returns)
    for s in p.post:
        used |= ir.free_vars(s.expr)
    return [v for v in carried if v in used]


def _fresh(base: str, taken: set[str]) -> str:
    name, k = base, 1
    while name in taken:
        name = f"{base}{k}"
        k += 1
    taken.add(name)
    return name


def _program_names(p: ir.Program) -> set[str]:
    names = {prm.name for prm in p.params}
    stmts = list(p.pre) + list(p.post) + (list(p.loop.body) if p.loop else [])
    for s in stmts:
        names.add(s.name)
        names |= ir.free_vars(s.expr)
    if p.loop is not None:
        names.add(p.loop.counter)
    return names


_LEAVES = (ir.Var, ir.Lit, ir.Zeros, ir.Ones)


class _Emitter:
    """Turns expression DAGs into statements, naming every repeated non-leaf subtree."""

    def __init__(self, roots: list[ir.Expr], taken: set[str]):
        self.taken = taken
        self.uses: Counter = Counter()
        seen: set = set()
        stack = list(roots)
        for r in roots:
            self.uses[r] += 1
        while stack:
            n = stack.pop()
            if n in seen:
                continue
            seen.add(n)
            for c in ir.children(n):
                self.uses[c] += 1
                stack.append(c)
        self.names: dict[ir.Expr, ir.Expr] = {}
        self.stmts: list[ir.Assign] = []

    def emit(self, e: ir.Expr) -> ir.Expr:
        hit = self.names.get(e)
        if hit is not None:
            return hit
        # iterative post-order; unrolled expressions can be deep
        stack = [(e, False)]
        while stack:
            n, expanded = stack.pop()
            if n in self.names:
                continue
            kids = ir.children(n)
            if not expanded and kids:
                stack.append((n, True))
                stack.extend((c, False) for c in kids if c not in self.names)
                continue
            rebuilt = ir.with_children(n, [self.names[c] for c in kids]) if kids else n
            if kids and self.uses[n] > 1 and not isinstance(n, _LEAVES):
                name = _fresh("_t", self.taken)
                self.stmts.append(ir.Assign(name, rebuilt))
                rebuilt = ir.Var(name)
            self.names[n] = rebuilt
        return self.names[e]


def _rename(e: ir.Expr, mapping: dict[str, str]) -> ir.Expr:
    if isinstance(e, ir.Var):
        return ir.Var(mapping[e.name]) if e.name in mapping else e
    kids = ir.children(e)
    if not kids:
        return e
    return ir.with_children(e, [_rename(c, mapping) for c in kids])


def emit_optimized_program(p: ir.Program, r: Optional[AnalysisResult] = None) -> ir.Program:
    """Loop-free program with the same parameters and returns as ``p``.

    Raises :class:`NotFullyAnalyzable` if any observable carried variable
    lacks an exit value; there is no partial optimization.
    """
    if p.loop is None:
        return p
    r = r if r is not None else analyze_loop(p)
    needed = needed_carried(p, r.carried)
    blocking = {
        v: r.failures.get(v) or r.exit_failures.get(v) or "no exit value"
        for v in needed
        if v not in r.exit_values
    }
    if blocking:
        raise NotFullyAnalyzable(blocking)

    taken = _program_names(p)
    exit_names = {v: _fresh(f"{v}_exit", taken) for v in needed}
    emitter = _Emitter([r.exit_values[v].expr for v in needed], taken)
    stmts = list(p.pre)
    for v in needed:
        value = emitter.emit(r.exit_values[v].expr)
        stmts.extend(emitter.stmts)
        emitter.stmts = []
        stmts.append(ir.Assign(exit_names[v], value))
    stmts += [ir.Assign(s.name, _rename(s.expr, exit_names)) for s in p.post]
    returns = tuple(exit_names.get(n, n) for n in p.returns)
    return ir.Program(p.name, p.params, tuple(stmts), None, (), returns)


def optimize(p: ir.Program) -> tuple[AnalysisResult, ir.Program]:
    r = analyze_loop(p)
    return r, emit_optimized_program(p, r)
