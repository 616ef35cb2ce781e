"""Dense float64 tensors with explicit shapes.

Every operation is pure and returns a new :class:`Tensor`. There is no
implicit broadcasting: shapes must match exactly unless the operation is
:func:`broadcast` itself.
"""
from __future__ import annotations

import math
from typing import Iterable, Mapping, Sequence

import numpy as np

Shape = tuple[int, ...]


class TensorError(Exception):
    code = "TensorError"


class ShapeMismatch(TensorError):
    code = "ShapeMismatch"


class DomainError(TensorError):
    code = "DomainError"


class ElementCountMismatch(TensorError):
    code = "ElementCountMismatch"


class InvalidPermutation(TensorError):
    code = "InvalidPermutation"


class OutOfBounds(TensorError):
    code = "OutOfBounds"


class AxisOutOfRange(TensorError):
    code = "AxisOutOfRange"


class IncompatibleBroadcast(TensorError):
    code = "IncompatibleBroadcast"


def element_count(shape: Sequence[int]) -> int:
    return math.prod(shape)


class Tensor:
    """Immutable row-major tensor of 64-bit floats."""

    __slots__ = ("_array", "_hash")

    def __init__(self, array: np.ndarray):
        arr = np.array(array, dtype=np.float64, order="C", copy=True)
        arr.flags.writeable = False
        self._array = arr
        self._hash: int | None = None

    @classmethod
    def from_flat(cls, shape: Sequence[int], data: Iterable[float]) -> "Tensor":
        shape = tuple(int(d) for d in shape)
        if any(d < 0 for d in shape):
            raise ShapeMismatch(f"negative extent in shape {shape}")
        flat = np.asarray(list(data), dtype=np.float64)
        if flat.size != element_count(shape):
            raise ElementCountMismatch(
                f"{flat.size} values given for shape {shape} "
                f"({element_count(shape)} elements)"
            )
        return cls(flat.reshape(shape))

    @classmethod
    def scalar(cls, value: float) -> "Tensor":
        return cls(np.asarray(float(value)))

    @property
    def shape(self) -> Shape:
        return tuple(self._array.shape)

    @property
    def rank(self) -> int:
        return self._array.ndim

    @property
    def size(self) -> int:
        return int(self._array.size)

    @property
    def data(self) -> list[float]:
        return [float(v) for v in self._array.reshape(-1)]

    @property
    def array(self) -> np.ndarray:
        """Read-only numpy view of the values."""
        return self._array

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Tensor):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._array, other._array))

    def __hash__(self) -> int:
        if self._hash is None:
            self._hash = hash((self.shape, self._array.tobytes()))
        return self._hash

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, data={self.data})"

    def to_json(self) -> dict:
        return {"shape": list(self.shape), "data": self.data}

    @classmethod
    def from_json(cls, obj: Mapping) -> "Tensor":
        try:
            return cls.from_flat(obj["shape"], obj["data"])
        except KeyError as exc:
            raise ValueError(f"tensor object is missing {exc.args[0]!r}") from None


def zeros(shape: Sequence[int]) -> Tensor:
    return Tensor(np.zeros(tuple(shape)))


def ones(shape: Sequence[int]) -> Tensor:
    return Tensor(np.ones(tuple(shape)))


def full(shape: Sequence[int], value: float) -> Tensor:
    return Tensor(np.full(tuple(shape), float(value)))


# -- shape rules --------------------------------------------------------------
# Shared by the evaluator and the static validator so both reject the same
# programs.

def binary_shape(a: Shape, b: Shape) -> Shape:
    if tuple(a) != tuple(b):
        raise ShapeMismatch(f"shapes {tuple(a)} and {tuple(b)} differ")
    return tuple(a)


def reshape_shape(src: Shape, target: Sequence[int], perm: Sequence[int] | None = None) -> Shape:
    target = tuple(int(d) for d in target)
    if perm is not None:
        check_permutation(perm, len(src))
    if any(d < 0 for d in target):
        raise ElementCountMismatch(f"negative extent in target shape {target}")
    if element_count(src) != element_count(target):
        raise ElementCountMismatch(
            f"cannot reshape {tuple(src)} ({element_count(src)} elements) "
            f"to {target} ({element_count(target)} elements)"
        )
    return target


def check_permutation(perm: Sequence[int], rank: int) -> None:
    if sorted(perm) != list(range(rank)):
        raise InvalidPermutation(f"{list(perm)} is not a permutation of 0..{rank - 1}")


def transpose_shape(src: Shape, perm: Sequence[int]) -> Shape:
    check_permutation(perm, len(src))
    return tuple(src[p] for p in perm)


def slice_shape(src: Shape, bounds: Sequence[tuple[int, int]]) -> Shape:
    if len(bounds) != len(src):
        raise OutOfBounds(f"slice has {len(bounds)} ranges for a rank-{len(src)} tensor")
    out = []
    for axis, ((start, stop), extent) in enumerate(zip(bounds, src)):
        if not 0 <= start <= stop <= extent:
            raise OutOfBounds(f"range {start}:{stop} invalid for axis {axis} of extent {extent}")
        out.append(stop - start)
    return tuple(out)


def concat_shape(a: Shape, b: Shape, axis: int) -> Shape:
    if len(a) != len(b):
        raise ShapeMismatch(f"cannot concatenate rank {len(a)} with rank {len(b)}")
    if not 0 <= axis < len(a):
        raise AxisOutOfRange(f"axis {axis} out of range for rank {len(a)}")
    for k, (da, db) in enumerate(zip(a, b)):
        if k != axis and da != db:
            raise ShapeMismatch(f"shapes {tuple(a)} and {tuple(b)} differ on axis {k}")
    out = list(a)
    out[axis] = a[axis] + b[axis]
    return tuple(out)


def broadcast_shape(src: Shape, target: Sequence[int]) -> Shape:
    target = tuple(int(d) for d in target)
    if len(src) > len(target):
        raise IncompatibleBroadcast(f"cannot broadcast rank {len(src)} to rank {len(target)}")
    for s, t in zip(reversed(src), reversed(target)):
        if s != t and s != 1:
            raise IncompatibleBroadcast(f"cannot broadcast {tuple(src)} to {target}")
    return target


# -- element-wise ---------------------------------------------------------------

_BINARY = {"add": np.add, "sub": np.subtract, "mul": np.multiply}


def elementwise_binary(op: str, a: Tensor, b: Tensor) -> Tensor:
    fn = _BINARY.get(op)
    if fn is None:
        raise ValueError(f"unknown binary op {op!r}")
    binary_shape(a.shape, b.shape)
    # IEEE overflow semantics (inf, and nan from inf - inf) are part of the contract
    with np.errstate(over="ignore", invalid="ignore"):
        return Tensor(fn(a.array, b.array))


def elementwise_unary(op: str, a: Tensor) -> Tensor:
    if op == "neg":
        return Tensor(np.negative(a.array))
    if op == "exp":
        with np.errstate(over="ignore"):
            return Tensor(np.exp(a.array))
    if op == "log":
        if a.size and not bool(np.all(a.array > 0)):
            bad = float(a.array.reshape(-1)[np.argmax(a.array.reshape(-1) <= 0)])
            raise DomainError(f"log of non-positive value {bad}")
        return Tensor(np.log(a.array))
    raise ValueError(f"unknown unary op {op!r}")


def scale(factor: float, a: Tensor) -> Tensor:
    with np.errstate(over="ignore", invalid="ignore"):
        return Tensor(float(factor) * a.array)


def power(base: Tensor, exponent: Tensor) -> Tensor:
    binary_shape(base.shape, exponent.shape)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        out = np.power(base.array, exponent.array)
    nan = np.isnan(out) & ~np.isnan(base.array) & ~np.isnan(exponent.array)
    if bool(np.any(nan)):
        raise DomainError("pow of a negative base with a non-integer exponent")
    return Tensor(out)


# -- structural -----------------------------------------------------------------

def reshape(a: Tensor, target: Sequence[int], perm: Sequence[int] | None = None) -> Tensor:
    """Permute axes (materialized) if ``perm`` is given, then reinterpret row-major."""
    target = reshape_shape(a.shape, target, perm)
    arr = a.array if perm is None else np.transpose(a.array, tuple(perm))
    return Tensor(np.ascontiguousarray(arr).reshape(target))


def transpose(a: Tensor, perm: Sequence[int]) -> Tensor:
    return reshape(a, transpose_shape(a.shape, perm), perm)


def slice_tensor(a: Tensor, bounds: Sequence[tuple[int, int]]) -> Tensor:
    slice_shape(a.shape, bounds)
    return Tensor(a.array[tuple(slice(s, e) for s, e in bounds)])


def concat(a: Tensor, b: Tensor, axis: int) -> Tensor:
    concat_shape(a.shape, b.shape, axis)
    return Tensor(np.concatenate([a.array, b.array], axis=axis))


def broadcast(a: Tensor, target: Sequence[int]) -> Tensor:
    target = broadcast_shape(a.shape, target)
    return Tensor(np.broadcast_to(a.array, target))


def all_close(a: Tensor, b: Tensor, rel_tol: float = 1e-9, abs_tol: float = 1e-12) -> bool:
    """True iff shapes match and ``|a-b| <= abs_tol + rel_tol*|b|`` everywhere."""
    if a.shape != b.shape:
        return False
    with np.errstate(invalid="ignore"):
        diff = np.abs(a.array - b.array)
        ok = diff <= abs_tol + rel_tol * np.abs(b.array)
    # identical infinities compare equal even though their difference is nan
    ok |= a.array == b.array
    return bool(np.all(ok))


def load_bindings(obj: Mapping) -> dict[str, Tensor]:
    return {str(name): Tensor.from_json(t) for name, t in obj.items()}


def dump_bindings(env: Mapping[str, Tensor]) -> dict:
    return {name: t.to_json() for name, t in env.items()}
