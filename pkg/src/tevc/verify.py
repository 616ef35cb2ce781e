"""Differential check of an optimized program against the reference interpreter."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import ir
from . import tensor as T
from . import tev
from .analysis import AnalysisResult
from .codegen import optimize
from .interpreter import eval_expr, run_prelude, run_program
from .tensor import Tensor

ORACLE_CAP = 10_000


@dataclass
class VerifyReport:
    trials: int
    seed: int
    trip_count: int
    oracle_trip_count: int
    input_mode: str
    passed: bool
    max_abs_deviation: float = 0.0
    max_rel_deviation: float = 0.0
    compared: int = 0
    skipped: int = 0
    original_statements: int = 0
    optimized_statements: int = 0
    cross_checked: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        out = asdict(self)
        return {_camel(k): v for k, v in out.items()}


def _camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(w.capitalize() for w in rest)


def needs_positive_inputs(p: ir.Program, r: Optional[AnalysisResult] = None) -> bool:
    """Log, pow and multiplicative recurrences are only well behaved on positive data."""
    stmts = list(p.pre) + list(p.post) + (list(p.loop.body) if p.loop else [])
    for s in stmts:
        if ir.contains(s.expr, lambda n: isinstance(n, ir.Pow) or (isinstance(n, ir.Unary) and n.op == "log")):
            return True
    if r is not None:
        for t in r.per_variable.values():
            if _has_mul_chain(t):
                return True
    return False


def _has_mul_chain(t: tev.TevExpr) -> bool:
    if isinstance(t, tev.Chain) and tev.MUL in t.ops:
        return True
    return any(_has_mul_chain(c) for c in tev.subterms(t))


def random_bindings(p: ir.Program, rng: np.random.Generator, positive: bool = False) -> dict[str, Tensor]:
    env = {}
    for prm in p.params:
        if positive:
            data = rng.uniform(0.5, 2.0, size=prm.shape)
        else:
            data = rng.integers(-4, 5, size=prm.shape).astype(np.float64)
        env[prm.name] = Tensor(data)
    return env


def _deviation(a: Tensor, b: Tensor) -> tuple[float, float]:
    if a.size == 0:
        return 0.0, 0.0
    x, y = a.array, b.array
    with np.errstate(invalid="ignore", divide="ignore"):
        diff = np.where(x == y, 0.0, np.abs(x - y))
        rel = np.where(diff == 0, 0.0, diff / np.abs(y))
    return float(np.max(diff)), float(np.max(rel))


def verify_program(
    p: ir.Program,
    trials: int = 200,
    seed: int = 0,
    trip_count: Optional[int] = None,
    rel_tol: float = 1e-9,
    abs_tol: float = 1e-12,
    oracle_cap: int = ORACLE_CAP,
) -> VerifyReport:
    """Run original and optimized programs on ``trials`` seeded random inputs.

    Raises :class:`~tevc.codegen.NotFullyAnalyzable` when the loop cannot be
    removed. Trip counts beyond ``oracle_cap`` are compared at the cap; the
    optimized program is still run at the full count, and every closed form
    is cross-checked against step-by-step evaluation at the cap.
    """
    original = p if trip_count is None else p.with_trip_count(trip_count)
    k = original.loop.trip_count if original.loop else 0
    r, optimized = optimize(original)
    positive = needs_positive_inputs(original, r)
    oracle_k = min(k, oracle_cap)
    report = VerifyReport(
        trials=trials,
        seed=seed,
        trip_count=k,
        oracle_trip_count=oracle_k,
        input_mode="positive" if positive else "integer",
        passed=True,
        original_statements=original.statement_count(),
        optimized_statements=optimized.statement_count(),
    )
    if trials <= 0:
        report.warnings.append("no trials requested; pass is vacuous")
        return report

    capped = oracle_k != k
    if capped:
        oracle_program = original.with_trip_count(oracle_k)
        _, oracle_optimized = optimize(oracle_program)
        report.warnings.append(f"oracle capped at trip count {oracle_k}; optimized program also run at {k}")
    else:
        oracle_program, oracle_optimized = original, optimized

    rng = np.random.default_rng(seed)
    for _ in range(trials):
        env = random_bindings(original, rng, positive)
        try:
            expected = run_program(oracle_program, env).returns
        except T.DomainError:
            report.skipped += 1
            continue
        got = run_program(oracle_optimized, env).returns
        report.compared += 1
        for a, b in zip(got, expected):
            if not T.all_close(a, b, rel_tol, abs_tol):
                report.passed = False
            d_abs, d_rel = _deviation(a, b)
            report.max_abs_deviation = max(report.max_abs_deviation, d_abs)
            report.max_rel_deviation = max(report.max_rel_deviation, d_rel)
        if capped:
            run_program(optimized, env)
            if not _cross_check(r, oracle_k, env, rel_tol, abs_tol, report):
                report.passed = False
    if report.skipped:
        report.warnings.append(f"{report.skipped} trial(s) skipped: original program left its domain")
    if report.compared == 0:
        report.warnings.append("every trial was skipped; pass is vacuous")
    return report


def _cross_check(r: AnalysisResult, k: int, env: dict[str, Tensor], rel_tol: float, abs_tol: float,
                 report: VerifyReport) -> bool:
    scope = run_prelude(r.program, env)
    ok = True
    for v in r.carried:
        t = r.per_variable.get(v)
        if t is None:
            continue
        try:
            closed = tev.closed_form_at(t, k)
        except tev.TevError:
            continue
        stepped = tev.eval_step(t, k, scope)
        direct = eval_expr(closed.expr, scope)
        if v not in report.cross_checked:
            report.cross_checked.append(v)
        ok &= T.all_close(direct, stepped, rel_tol, abs_tol)
    return ok
