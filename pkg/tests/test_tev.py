import math

import numpy as np
import pytest

from tevc import ir
from tevc import tensor as T
from tevc import tev
from tevc.fuzz import random_tev, tev_env
from tevc.interpreter import eval_expr
from tevc.tensor import Tensor
from tevc.tev import ADD, MUL, Chain, Invariant, Unknown, chain, eval_step, lit, normalize, var, wrap


def ev(t, i, env=None):
    return eval_step(t, i, env or {})


def closed(t, i, env=None):
    return eval_expr(tev.closed_form_at(t, i).expr, env or {})


def const_vec(v):
    return lit(v, (len(v),))


# -- evaluation and closed forms ---------------------------------------------------------


def test_scalar_cr_head_and_polynomial():
    t = chain(lit(7), ADD, lit(6), ADD, lit(10), ADD, lit(6))
    assert ev(t, 0).data == [7.0]
    assert ev(t, 5).data == [197.0]
    assert closed(t, 3).data == [61.0]


def test_zero_one_chain_counts_iterations():
    t = chain(Invariant(ir.Zeros((2, 2)), (2, 2)), ADD, Invariant(ir.Ones((2, 2)), (2, 2)))
    assert ev(t, 9) == T.full((2, 2), 9)


def test_arithmetic_progression_closed_form():
    t = chain(var("a", (2,)), ADD, var("b", (2,)))
    cf = tev.closed_form_at(t, 6).expr
    env = {"a": Tensor.from_flat((2,), [1, 2]), "b": Tensor.from_flat((2,), [3, -1])}
    assert eval_expr(cf, env).data == [19.0, -4.0]


def test_geometric_closed_form():
    t = chain(const_vec([2]), MUL, const_vec([3]))
    assert closed(t, 2).data == [18.0]
    assert ev(t, 2).data == [18.0]


def test_negative_index_rejected():
    with pytest.raises(tev.NegativeIndex):
        ev(chain(lit(1), ADD, lit(1)), -1)


def test_mixed_chain_has_no_closed_form():
    t = chain(lit(1), ADD, lit(2), MUL, lit(3))
    with pytest.raises(tev.MixedOperatorChain):
        tev.closed_form_at(t, 4)
    # the symbolic unrolling still matches
    assert eval_expr(tev.unroll_at(t, 4).expr, {}) == ev(t, 4)


def test_unknown_has_no_value():
    with pytest.raises(tev.UnknownValue):
        ev(Unknown("v", "opaque", ()), 0)


@pytest.mark.parametrize("depth", [1, 2, 3, 4])
def test_additive_closed_form_exact(depth):
    rng = np.random.default_rng(depth)
    for _ in range(20):
        ops = [lit(rng.integers(-9, 10, size=(2,)).astype(float), (2,)) for _ in range(depth + 1)]
        t = tev.make_chain(ops, [ADD] * depth)
        for i in range(13):
            assert closed(t, i) == ev(t, i)


def test_multiplicative_closed_form_close():
    rng = np.random.default_rng(5)
    for _ in range(20):
        ops = [lit(rng.uniform(0.5, 2, size=(3,)), (3,)) for _ in range(3)]
        t = tev.make_chain(ops, [MUL, MUL])
        for i in range(13):
            assert T.all_close(closed(t, i), ev(t, i))


def test_symbolic_closed_form_text():
    assert tev.symbolic_closed_form(chain(var("a", ()), ADD, var("b", ()))) == "a + k*b"


# -- individual operations ---------------------------------------------------------------


def test_add_invariant():
    k = const_vec([1, 1])
    t = chain(const_vec([0, 0]), ADD, const_vec([2, 3]))
    out = tev.add_invariant(k, t)
    assert out == chain(const_vec([1, 1]), ADD, const_vec([2, 3]))
    assert ev(out, 4).data == [9.0, 13.0] == ev(wrap("add", [k, t]), 4).data


def test_add_zero_invariant_keeps_steps():
    t = chain(var("a", (2,)), ADD, var("b", (2,)))
    out = tev.add_invariant(Invariant(ir.Zeros((2,)), (2,)), t)
    assert out == t


def test_mul_invariant():
    out = tev.mul_invariant(const_vec([2]), chain(const_vec([3]), ADD, const_vec([5])))
    assert out == chain(const_vec([6]), ADD, const_vec([10]))
    assert ev(out, 3).data == [36.0]


def test_mul_by_ones_is_identity():
    t = chain(var("a", (2,)), ADD, var("b", (2,)))
    assert tev.mul_invariant(Invariant(ir.Ones((2,)), (2,)), t) == t


def test_tev_add_zips_and_pads():
    a = chain(const_vec([1]), ADD, const_vec([2]))
    assert tev.tev_add(a, chain(const_vec([10]), ADD, const_vec([20]))) == chain(const_vec([11]), ADD, const_vec([22]))
    assert tev.tev_add(a, const_vec([5])) == chain(const_vec([6]), ADD, const_vec([2]))


def test_tev_add_random_semantics():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = tev.make_chain([lit(rng.integers(-5, 6, (3,)), (3,)) for _ in range(3)], [ADD, ADD])
        b = tev.make_chain([lit(rng.integers(-5, 6, (3,)), (3,)) for _ in range(2)], [ADD])
        s = tev.tev_add(a, b)
        assert ev(s, 7) == T.elementwise_binary("add", ev(a, 7), ev(b, 7))


def test_tev_mul_square():
    one = chain(const_vec([1]), ADD, const_vec([1]))
    sq = tev.tev_mul(one, one)
    assert sq == chain(const_vec([1]), ADD, const_vec([3]), ADD, const_vec([2]))
    assert ev(sq, 4).data == [25.0]
    ramp = chain(const_vec([0]), ADD, const_vec([1]))
    assert ev(tev.tev_mul(ramp, ramp), 5).data == [25.0]


def test_tev_mul_rejects_multiplicative():
    g = chain(const_vec([1]), MUL, const_vec([2]))
    with pytest.raises(tev.NonAdditiveChain):
        tev.tev_mul(g, g)


def test_push_slice_into_chain():
    t = chain(var("x", (2, 3)), ADD, var("a", (2, 3)))
    bounds = ((1, 2), (0, 3))
    out = tev.push_structural("slice", (bounds,), t)
    want = chain(Invariant(ir.Slice(ir.Var("x"), bounds), (1, 3)), ADD, Invariant(ir.Slice(ir.Var("a"), bounds), (1, 3)))
    assert out == want


def test_push_reshape_and_broadcast_semantics():
    env = {"x": Tensor.from_flat((2, 3), range(6)), "a": T.full((2, 3), 2)}
    t = chain(var("x", (2, 3)), ADD, var("a", (2, 3)))
    before = wrap("reshape", [t], ((6,),))
    assert ev(tev.push_structural("reshape", ((6,),), t), 3, env) == ev(before, 3, env)
    s = chain(lit(5), ADD, lit(1))
    out = tev.push_structural("broadcast", ((2, 2),), s)
    assert ev(out, 2) == T.full((2, 2), 7) == ev(wrap("broadcast", [s], ((2, 2),)), 2)


def test_concat_chains():
    a = chain(const_vec([1]), ADD, const_vec([2]))
    b = chain(const_vec([10]), ADD, const_vec([20]))
    assert tev.concat_chains(a, b, 0) == chain(const_vec([1, 10]), ADD, const_vec([2, 20]))
    g = chain(const_vec([1]), MUL, const_vec([2]))
    mixed = tev.concat_chains(a, g, 0)
    assert isinstance(mixed, tev.Wrap) and mixed.kind == "concat"


def test_concat_semantics_random():
    rng = np.random.default_rng(2)
    for _ in range(10):
        a = tev.make_chain([lit(rng.integers(-5, 6, (1, 2)), (1, 2)) for _ in range(3)], [ADD, ADD])
        b = tev.make_chain([lit(rng.integers(-5, 6, (2, 2)), (2, 2)) for _ in range(2)], [ADD])
        out = tev.concat_chains(a, b, 0)
        assert isinstance(out, Chain)
        assert ev(out, 6) == T.concat(ev(a, 6), ev(b, 6), 0)


def test_exp_and_log_rewrites():
    e = tev.log_exp_rewrite("exp", chain(const_vec([0]), ADD, const_vec([math.log(2)])))
    assert isinstance(e, Chain) and e.ops == (MUL,)
    assert T.all_close(ev(e, 3), Tensor.from_flat((1,), [8.0]), rel_tol=1e-12)
    lg = tev.log_exp_rewrite("log", chain(const_vec([1]), MUL, const_vec([math.e])))
    assert T.all_close(ev(lg, 1), T.ones((1,))) and lg.ops == (ADD,)
    assert ev(lg, 0).data == [0.0]
    with pytest.raises(tev.WrongChainOperator):
        tev.log_exp_rewrite("log", chain(const_vec([1]), ADD, const_vec([1])))


def test_pow_const_base():
    c = const_vec([3])
    t = chain(const_vec([1]), ADD, const_vec([2]))
    out = normalize(wrap("pow", [c, t]))[0]
    assert isinstance(out, Chain) and out.ops == (MUL,)
    for i in range(5):
        assert T.all_close(ev(out, i), Tensor.from_flat((1,), [3.0 ** (1 + 2 * i)]), rel_tol=1e-12)


def test_inject_invariant_step():
    out = tev.inject(var("a", (2,)), var("x", (2,)))
    assert out == chain(var("x", (2,)), ADD, var("a", (2,)))
    env = {"x": Tensor.from_flat((2,), [1, 2]), "a": Tensor.from_flat((2,), [1, -1])}
    assert eval_expr(tev.closed_form_at(out, 15).expr, env).data == [16.0, -13.0]


def test_inject_chain_step_gives_triangular_coefficient():
    sx, sa = var("sx", (3,)), var("sa", (3,))
    step = chain(tev.inv_add(sx, sa), ADD, sa)
    out = tev.inject(step, var("y", (3,)))
    assert isinstance(out, Chain) and out.depth == 2
    env = {n: Tensor(np.arange(3.0) + k) for k, n in enumerate(["y", "sx", "sa"])}
    for k in (0, 1, 5, 15):
        want = env["y"].array + k * env["sx"].array + k * (k + 1) / 2 * env["sa"].array
        assert closed(out, k, env).data == list(want)


def test_inject_zero_step_is_constant():
    out = tev.inject(Invariant(ir.Zeros((2,)), (2,)), var("x", (2,)))
    env = {"x": Tensor.from_flat((2,), [3, 4])}
    assert all(ev(out, i, env) == env["x"] for i in range(5))


def test_depth_cap_degrades_to_unknown():
    t = tev.make_chain([lit(1)] * 10, [ADD] * 9)
    assert isinstance(t, Unknown) and "DepthLimit" in t.reason


def test_unknown_is_infectious():
    u = Unknown("v", "opaque", (2,))
    out = normalize(wrap("add", [chain(var("a", (2,)), ADD, var("b", (2,))), u]))[0]
    assert isinstance(out, Unknown) and out.var == "v"


# -- normalization -------------------------------------------------------------------------


def test_normalize_add_const_single_entry():
    t = wrap("add", [var("k", (2,)), chain(var("a", (2,)), ADD, var("t", (2,)))])
    out, trace = normalize(t)
    assert trace.rules() == ["add-invariant"]
    assert out == chain(tev.inv_add(var("k", (2,)), var("a", (2,))), ADD, var("t", (2,)))


def test_normalize_slice_of_chain():
    bounds = ((1, 2), (0, 3))
    out, trace = normalize(wrap("slice", [chain(var("x", (2, 3)), ADD, var("a", (2, 3)))], (bounds,)))
    assert trace.rules() == ["slice"]
    assert tev.render(out) == "{slice(x, [1:2, 0:3]), +, slice(a, [1:2, 0:3])}"


def test_flatten_nested_chain():
    inner = chain(var("b", ()), ADD, var("c", ()))
    t = Chain((var("a", ()), inner), (ADD,))
    out, trace = normalize(t)
    assert trace.rules() == ["flatten"]
    assert out == chain(var("a", ()), ADD, var("b", ()), ADD, var("c", ()))


def test_render_brace_notation():
    assert tev.render(chain(var("x", ()), ADD, var("a", ()))) == "{x, +, a}"


def test_trace_json_shape():
    _, trace = normalize(wrap("add", [var("k", ()), chain(var("a", ()), ADD, var("b", ()))]))
    entry = trace.to_json()[0]
    assert set(entry) >= {"rule", "before", "after"}


def test_fuzzed_normalization_laws():
    rng = np.random.default_rng(21)
    for _ in range(200):
        t = random_tev(rng)
        out, trace = normalize(t)
        assert normalize(out)[0] == out
        assert trace.replay() == out
        assert tev.is_normal_form(out)


def test_fuzzed_normalization_is_sound():
    rng = np.random.default_rng(22)
    checked = 0
    for _ in range(150):
        t = random_tev(rng, depth=3, unknown_rate=0.0, positive=True)
        out = normalize(t)[0]
        env = tev_env(t, rng, positive=True)
        for i in range(5):
            try:
                want = ev(t, i, env)
            except T.DomainError:
                break
            got = ev(out, i, env)
            assert T.all_close(got, want, rel_tol=1e-9, abs_tol=1e-9), tev.render(t)
            checked += 1
    assert checked > 300


def test_from_ir_substitutes_invariants():
    env = {"a": var("a", (2,)), "x": chain(var("x", (2,)), ADD, var("a", (2,)))}
    t = tev.from_ir(ir.parse_expr("sub(x, scale(2, a))"), env)
    out = normalize(t)[0]
    assert isinstance(out, Chain)
    envv = {"a": Tensor.from_flat((2,), [1, 2]), "x": Tensor.from_flat((2,), [0, 0])}
    assert ev(out, 3, envv).data == [1.0, 2.0]
