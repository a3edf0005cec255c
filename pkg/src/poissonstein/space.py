"""Finite cell spaces with positive weights and dense kernels on them.

A ``DiscreteSpace`` is a partition of the underlying state space into ``m``
cells; cell ``i`` carries weight ``w_i``, its control-measure mass. A
``Kernel`` of order ``p`` is a dense array of shape ``(m,) * p``: the value of
a step function that is constant on products of cells.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Tolerance:
    """Absolute plus relative closeness: |a - b| <= atol + rtol * |b|."""

    atol: float = 1e-9
    rtol: float = 1e-9

    def close(self, a, b) -> bool:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return bool(np.all(np.abs(a - b) <= self.atol + self.rtol * np.abs(b)))


DEFAULT_TOL = Tolerance()


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class DiscreteSpace:
    """Cells with strictly positive, finite weights."""

    __slots__ = ("weights", "labels", "_hash")

    def __init__(self, weights, labels=None):
        w = np.array(weights, dtype=np.float64).reshape(-1)
        if w.size == 0:
            raise ValidationError("a space needs at least one cell")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            bad = int(np.flatnonzero(~(np.isfinite(w) & (w > 0)))[0])
            raise ValidationError(f"weights[{bad}] = {w[bad]!r}: every weight must be positive and finite")
        if labels is not None:
            labels = tuple(str(s) for s in labels)
            if len(labels) != w.size:
                raise ValidationError(f"got {len(labels)} labels for {w.size} cells")
        self.weights = _frozen(w)
        self.labels = labels
        self._hash = hash(w.tobytes())

    @property
    def cell_count(self) -> int:
        return self.weights.size

    m = cell_count

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, DiscreteSpace):
            return NotImplemented
        return self._hash == other._hash and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return self._hash

    def __repr__(self):
        return f"DiscreteSpace(m={self.cell_count}, total_mass={self.total_mass:.6g})"

    def weight_tensor(self, order: int) -> np.ndarray:
        """Product weights w_{i1} ... w_{ip} as an array of shape (m,)*order."""
        out = np.ones(())
        for _ in range(order):
            out = np.multiply.outer(out, self.weights)
        return out


class Kernel:
    """Order-p real tensor on a space; immutable.

    ``symmetric`` may be passed when the caller knows the answer (for example
    the output of ``symmetrize``); otherwise it is computed on first request.
    """

    __slots__ = ("space", "values", "_symmetric")

    def __init__(self, space: DiscreteSpace, values, order: int | None = None, symmetric: bool | None = None):
        arr = np.array(values, dtype=np.float64)
        m = space.cell_count
        if order is not None:
            if order < 0:
                raise ValidationError(f"order must be nonnegative, got {order}")
            if arr.size != m**order:
                raise ValidationError(f"values has {arr.size} entries, expected m^order = {m}^{order} = {m**order}")
            arr = arr.reshape((m,) * order)
        elif any(n != m for n in arr.shape):
            raise ValidationError(f"values shape {arr.shape} is not (m,)*p with m={m}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("kernel values must be finite")
        self.space = space
        self.values = _frozen(arr)
        self._symmetric = symmetric

    @classmethod
    def _wrap(cls, space, arr, symmetric=None):
        # internal constructor: takes ownership of a freshly computed array
        obj = cls.__new__(cls)
        obj.space = space
        obj.values = _frozen(np.asarray(arr, dtype=np.float64))
        obj._symmetric = symmetric
        return obj

    @classmethod
    def scalar(cls, space, value: float) -> "Kernel":
        return cls._wrap(space, np.array(float(value)), True)

    @classmethod
    def zeros(cls, space, order: int) -> "Kernel":
        return cls._wrap(space, np.zeros((space.cell_count,) * order), True)

    @classmethod
    def ones(cls, space, order: int) -> "Kernel":
        return cls._wrap(space, np.ones((space.cell_count,) * order), True)

    @property
    def order(self) -> int:
        return self.values.ndim

    @property
    def m(self) -> int:
        return self.space.cell_count

    def item(self) -> float:
        if self.order != 0:
            raise ValidationError(f"item() needs an order-0 kernel, got order {self.order}")
        return float(self.values)

    def is_symmetric(self, tol: Tolerance = DEFAULT_TOL) -> bool:
        if self._symmetric is None:
            v = self.values
            self._symmetric = all(
                np.allclose(v, np.transpose(v, perm), atol=tol.atol, rtol=tol.rtol)
                for perm in itertools.permutations(range(v.ndim))
            )
        return self._symmetric

    @property
    def symmetric_flag(self) -> bool:
        return self.is_symmetric()

    def allclose(self, other: "Kernel", tol: Tolerance = DEFAULT_TOL) -> bool:
        _check_compatible(self, other)
        return tol.close(self.values, other.values)

    def _combine(self, other, op):
        _check_compatible(self, other)
        sym = True if (self._symmetric and other._symmetric) else None
        return Kernel._wrap(self.space, op(self.values, other.values), sym)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, c):
        if isinstance(c, Kernel):
            return NotImplemented
        return Kernel._wrap(self.space, self.values * float(c), self._symmetric)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return Kernel._wrap(self.space, self.values / float(c), self._symmetric)

    def __neg__(self):
        return Kernel._wrap(self.space, -self.values, self._symmetric)

    def __repr__(self):
        return f"Kernel(order={self.order}, m={self.m})"


def _check_compatible(f: Kernel, g: Kernel, same_order: bool = True):
    if f.space != g.space:
        raise ValidationError("kernels live on different spaces")
    if same_order and f.order != g.order:
        raise ValidationError(f"order mismatch: {f.order} vs {g.order}")


def _weighted_sum(arr: np.ndarray, weights: np.ndarray) -> float:
    # contract trailing axes one at a time; fixed order keeps results reproducible
    while arr.ndim:
        arr = arr @ weights
    return float(arr)


def integrate(f: Kernel) -> float:
    """Sum of f(i1..ip) * w_{i1} ... w_{ip} over all index tuples."""
    return _weighted_sum(f.values, f.space.weights)


def inner_product(f: Kernel, g: Kernel) -> float:
    _check_compatible(f, g)
    return _weighted_sum(f.values * g.values, f.space.weights)


def lp_norm(f: Kernel, exponent: float = 2.0) -> float:
    if not exponent >= 1:
        raise ValidationError(f"exponent must be >= 1, got {exponent}")
    if exponent == 2:
        return math.sqrt(max(inner_product(f, f), 0.0))
    total = _weighted_sum(np.abs(f.values) ** exponent, f.space.weights)
    return total ** (1.0 / exponent)


def squared_norm(f: Kernel) -> float:
    return inner_product(f, f)


def slice_kernel(f: Kernel, cell_index: int) -> Kernel:
    """The order-(p-1) kernel f(cell_index, .)."""
    if f.order == 0:
        raise ValidationError("cannot slice an order-0 kernel")
    if not 0 <= cell_index < f.m:
        raise ValidationError(f"cell index {cell_index} out of range for m={f.m}")
    return Kernel._wrap(f.space, f.values[cell_index], f._symmetric)


def kernel_to_document(f: Kernel) -> dict:
    return {
        "m": f.m,
        "weights": [float(x) for x in f.space.weights],
        "order": f.order,
        "values": [float(x) for x in f.values.reshape(-1)],
    }


def kernel_from_document(doc: dict, space: DiscreteSpace | None = None) -> Kernel:
    """Inverse of ``kernel_to_document``; reuses ``space`` when weights match."""
    for key in ("m", "weights", "order", "values"):
        if key not in doc:
            raise ValidationError(f"kernel document is missing field {key!r}")
    m = int(doc["m"])
    weights = np.asarray(doc["weights"], dtype=float)
    if weights.size != m:
        raise ValidationError(f"field 'weights' has {weights.size} entries but m = {m}")
    if space is None or not np.array_equal(space.weights, weights):
        space = DiscreteSpace(weights)
    return Kernel(space, np.asarray(doc["values"], dtype=float), order=int(doc["order"]))
