import numpy as np
import pytest

from tevc import ir
from tevc import tensor as T
from tevc import tev
from tevc.analysis import MixedChainTooLong, NoTevAvailable, analyze_loop, exit_value, match_update
from tevc.fuzz import random_program
from tevc.interpreter import eval_expr, run_prelude, run_program
from tevc.tensor import Tensor
from tevc.verify import needs_positive_inputs, random_bindings

ACC = "func f(a: tensor<2>, x: tensor<2>) { for i in 0..15 { x = add(a, x) } return x }"


def exit_at(p, r, var, env):
    return eval_expr(r.exit_values[var].expr, run_prelude(p, env))


def test_accumulate_chain_and_exit():
    p = ir.parse_program(ACC)
    r = analyze_loop(p)
    assert r.carried == ["x"]
    assert tev.render(r.per_variable["x"]) == "{x, +, a}"
    assert ir.format_expr(r.exit_values["x"].expr) == "add(x, scale(15.0, a))"


def test_accumulate_exit_is_x_plus_15a_not_a_plus_15x():
    p = ir.parse_program(ACC)
    r = analyze_loop(p)
    env = {"a": Tensor.from_flat((2,), [1, 2]), "x": Tensor.from_flat((2,), [3, -5])}
    got = exit_at(p, r, "x", env)
    assert got.data == [18.0, 25.0]
    assert got == run_program(p, env).returns[0]


def test_row_sum_exit(program):
    p = program("row_sum")
    r = analyze_loop(p)
    text = ir.format_expr(r.exit_values["y"].expr)
    assert "scale(15.0, reshape(slice(x, [1:2, 0:3]), [3]))" in text
    assert "scale(120.0, reshape(slice(a, [1:2, 0:3]), [3]))" in text
    y = r.per_variable["y"]
    assert isinstance(y, tev.Chain) and y.depth == 2


def test_row_sum_broadcast_variant(program):
    p = program("row_sum_broadcast")
    r = analyze_loop(p)
    env = {"x": Tensor.from_flat((2, 3), range(1, 7)), "a": T.ones((2, 3))}
    assert exit_at(p, r, "y", env).data == [180.0, 195.0, 210.0] * 2


@pytest.mark.parametrize(
    "body, reason",
    [
        ("v = mul(v, v)", "SelfReferentialStep"),
        ("v = exp(v)", "SelfReferentialStep"),
        ("v = add(scale(2, v), a)", "SelfReferentialStep"),
        ("v = a", "NonRecurrentUpdate"),
        ("v = add(v, a) v = mul(v, a)", "MixedUpdateOperators"),
    ],
)
def test_failure_reasons(body, reason):
    p = ir.parse_program(f"func f(a: tensor<3>, v: tensor<3>) {{ for i in 0..4 {{ {body} }} return v }}")
    r = analyze_loop(p)
    assert r.failures["v"].startswith(reason)
    assert "v" not in r.per_variable and "v" not in r.exit_values


def test_cyclic_dependency():
    p = ir.parse_program(
        "func f(u: tensor<2>, w: tensor<2>) { for i in 0..3 { t = u u = add(u, w) w = add(w, t) } return u, w }"
    )
    r = analyze_loop(p)
    assert r.failures["u"].startswith("CyclicDependency")
    assert r.failures["w"].startswith("CyclicDependency")


def test_failure_is_infectious():
    p = ir.parse_program(
        "func f(a: tensor<2>, v: tensor<2>, s: tensor<2>) { for i in 0..3 { v = exp(v) s = add(s, v) } return s }"
    )
    r = analyze_loop(p)
    assert "v" in r.failures and "s" in r.failures
    assert "'v'" in r.failures["s"]


def test_match_update_flattens():
    e = ir.parse_expr("add(a, add(v, b))")
    op, step = match_update(e, "v", (2,))
    assert op == "+" and ir.free_vars(step) == {"a", "b"}
    op, step = match_update(ir.parse_expr("scale(3, mul(a, v))"), "v", (2,))
    assert op == "*"
    assert match_update(ir.parse_expr("sub(a, v)"), "v", (2,)) is None


def test_sequential_updates_compose():
    p = ir.parse_program(
        "func f(a: tensor<2>, b: tensor<2>, v: tensor<2>) { for i in 0..6 { v = add(v, a) v = sub(v, b) } return v }"
    )
    r = analyze_loop(p)
    env = {"a": Tensor.from_flat((2,), [3, 1]), "b": Tensor.from_flat((2,), [1, 1]), "v": T.zeros((2,))}
    assert exit_at(p, r, "v", env) == run_program(p, env).returns[0]


def test_use_before_and_after_update():
    p = ir.parse_program(
        "func f(a: tensor<>, x: tensor<>) { for i in 0..5 { t = x x = add(x, a) u = x } return x }"
    )
    r = analyze_loop(p)
    env = {"a": Tensor.scalar(2), "x": Tensor.scalar(1)}
    res = run_program(p, env, record_body=True)
    scope = run_prelude(p, env)
    for i in range(5):
        assert tev.eval_step(r.per_variable["t"], i, scope) == res.body_values["t"][i]
        assert tev.eval_step(r.per_variable["u"], i, scope) == res.body_values["u"][i]


def test_mixed_chain_unrolled_or_rejected():
    src = "func f(a: tensor<2>, v: tensor<2>) {{ for i in 0..{k} {{ v = mul(v, add(a, broadcast(i, [2]))) }} return v }}"
    short = ir.parse_program(src.format(k=6))
    r = analyze_loop(short)
    env = {"a": T.full((2,), 1.5), "v": T.full((2,), 0.5)}
    assert T.all_close(exit_at(short, r, "v", env), run_program(short, env).returns[0])
    long = ir.parse_program(src.format(k=100))
    r = analyze_loop(long)
    assert r.exit_failures["v"].startswith("MixedChainTooLong")
    with pytest.raises(MixedChainTooLong):
        exit_value(r, "v")


def test_exit_value_errors():
    r = analyze_loop(ir.parse_program("func f(v: tensor<2>) { for i in 0..3 { v = exp(v) } return v }"))
    with pytest.raises(NoTevAvailable):
        exit_value(r, "v")


def test_exit_value_of_constant_chain():
    p = ir.parse_program("func f(v: tensor<2>) { for i in 0..3 { v = v } return v }")
    r = analyze_loop(p)
    assert r.exit_values["v"].expr == ir.Var("v")
    assert exit_value(r, "v", 10**9).expr == ir.Var("v")


def test_every_body_variable_accounted_for(program):
    for name in ("row_sum", "geometric", "nonlinear"):
        p = program(name)
        r = analyze_loop(p)
        for s in p.loop.body:
            assert (s.name in r.per_variable) != (s.name in r.failures)


def test_json_schema(program):
    r = analyze_loop(program("row_sum"))
    out = r.to_json()
    assert {"perVariable", "exitValues", "failures", "trace", "tripCount"} <= set(out)
    assert out["closedForms"]["x"] == "x + k*a"


def test_deterministic(program):
    p = program("geometric")
    assert analyze_loop(p).to_json() == analyze_loop(p).to_json()


def test_header_values_match_interpreter():
    rng = np.random.default_rng(4)
    checked = 0
    for _ in range(120):
        p = random_program(rng)
        p = p.with_trip_count(min(p.loop.trip_count, 12))
        r = analyze_loop(p)
        positive = needs_positive_inputs(p, r)
        env = random_bindings(p, rng, positive)
        try:
            res = run_program(p, env, record_headers=True, record_body=True)
        except T.DomainError:
            continue
        scope = run_prelude(p, env)
        for v, t in r.per_variable.items():
            log = res.headers[v] if v in r.carried else res.body_values.get(v, [])
            for i, want in enumerate(log):
                got = tev.eval_step(t, i, scope)
                if positive:
                    assert T.all_close(got, want), (ir.serialize_program(p), v, i)
                else:
                    assert got == want, (ir.serialize_program(p), v, i)
                checked += 1
    assert checked > 500
