import numpy as np
import pytest

from tevc import ir
from tevc.fuzz import random_ast, random_expr
from tevc.tensor import Tensor

ROW_SUM = """
func forward(a: tensor<2,3>, x: tensor<2,3>) {
  y = zeros([3])
  for i in 0..15 {
    x = add(x, a)
    z = reshape(slice(x, [1:2, 0:3]), [3])
    y = add(y, z)
  }
  return y
}
"""


def test_parse_row_sum():
    p = ir.parse_program(ROW_SUM)
    assert p.name == "forward"
    assert [prm.shape for prm in p.params] == [(2, 3), (2, 3)]
    assert p.loop.trip_count == 15 and p.loop.counter == "i"
    assert [s.name for s in p.loop.body] == ["x", "z", "y"]
    assert p.loop.body[1].expr == ir.Reshape(ir.Slice(ir.Var("x"), ((1, 2), (0, 3))), (3,))
    assert p.returns == ("y",)
    assert p.statement_count() == 4


def test_literals_and_scalars():
    e = ir.parse_expr("add(tensor<2>[1.5, -2], 3)")
    assert e.lhs == ir.Lit(Tensor.from_flat((2,), [1.5, -2.0]))
    assert e.rhs == ir.Lit(Tensor.scalar(3))


def test_program_without_loop_parses():
    p = ir.parse_program("func f(a: tensor<2>) { b = scale(2, a) return b }")
    assert p.loop is None


def test_parse_error_location():
    with pytest.raises(ir.ParseError) as exc:
        ir.parse_program("func f(a: tensor<2>) {\n  b = frob(a)\n  return b\n}")
    assert exc.value.line == 2


@pytest.mark.parametrize(
    "src, code",
    [
        ("func f(a: tensor<2>, a: tensor<2>) { return a }", "DuplicateParam"),
        ("func f(a: tensor<2>) { for i in 0..3 { } return a }", "EmptyLoopBody"),
        ("func f(a: tensor<2>) { b = add(a, zeros([3])) return b }", "ShapeMismatch"),
        ("func f(a: tensor<2>) { return q }", "UnknownIdentifier"),
        ("func f(a: tensor<2>) { b = slice(a, [0:3]) return b }", "OutOfBounds"),
        ("func f(a: tensor<2>) { a = a return a }", "Redefinition"),
        ("func f(a: tensor<2>) { for i in 0..3 { a = concat(a, a, 0) } return a }", "ShapeMismatch"),
        ("func f(a: tensor<2>) { for i in 0..3 { a = pow(a, a) } return a }", "NonInvariantBase"),
        ("func f(a: tensor<2>) { for i in 0..3 { t = a } return t }", "UnknownIdentifier"),
    ],
)
def test_validation_codes(src, code):
    with pytest.raises(ir.ValidationError) as exc:
        ir.parse_program(src)
    assert code in [d.code for d in exc.value.diagnostics]


def test_serialize_round_trip_row_sum():
    p = ir.parse_program(ROW_SUM)
    assert ir.parse_program(ir.serialize_program(p)) == p


def test_json_round_trip_row_sum():
    p = ir.parse_program(ROW_SUM)
    assert ir.from_json(ir.to_json(p)) == p
    assert ir.to_json(p)["loop"]["tripCount"] == 15


def test_infer_shape():
    shapes = {"x": (2, 3)}
    assert ir.infer_shape(ir.parse_expr("reshape(slice(x, [1:2, 0:3]), [3])"), shapes) == (3,)
    assert ir.infer_shape(ir.parse_expr("transpose(x, [1, 0])"), shapes) == (3, 2)
    assert ir.infer_shape(ir.parse_expr("broadcast(slice(x, [0:1, 0:3]), [4, 3])"), shapes) == (4, 3)


def test_fuzzed_ast_round_trip():
    rng = np.random.default_rng(11)
    for _ in range(300):
        p = random_ast(rng)
        text = ir.serialize_program(p)
        assert ir.parse_program(text, validate=False) == p, text
        assert ir.from_json(ir.to_json(p)) == p


def test_fuzzed_expr_round_trip():
    rng = np.random.default_rng(12)
    for _ in range(500):
        e = random_expr(rng)
        assert ir.parse_expr(ir.format_expr(e)) == e
