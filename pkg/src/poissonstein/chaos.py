"""Finite chaos expansions and the operators D, delta, L and L^{-1}."""
from __future__ import annotations

import math

import numpy as np

from .algebra import g_hat_operator, symmetrize
from .errors import ValidationError
from .space import DEFAULT_TOL, DiscreteSpace, Kernel, inner_product, slice_kernel

MAX_CHAOS_ORDER = 4


class ChaosExpansion:
    """F = mean + sum_k I_k(f_k); ``kernels[k-1]`` is the order-k kernel or None."""

    __slots__ = ("space", "mean", "kernels")

    def __init__(self, space: DiscreteSpace, mean: float = 0.0, kernels=(), validate: bool = True):
        kernels = tuple(kernels)
        while kernels and kernels[-1] is None:
            kernels = kernels[:-1]
        if validate:
            for k, f in enumerate(kernels, start=1):
                if f is None:
                    continue
                if f.space != space:
                    raise ValidationError(f"kernel {k} lives on a different space")
                if f.order != k:
                    raise ValidationError(f"slot {k} holds a kernel of order {f.order}")
                if not f.is_symmetric():
                    raise ValidationError(f"kernel {k} is not symmetric")
        self.space = space
        self.mean = float(mean)
        self.kernels = kernels

    @classmethod
    def constant(cls, space, value: float) -> "ChaosExpansion":
        return cls(space, value)

    @classmethod
    def multiple_integral(cls, f: Kernel) -> "ChaosExpansion":
        """I_p(f) as a single-term expansion."""
        if f.order == 0:
            return cls(f.space, f.item())
        slots = [None] * f.order
        slots[-1] = f
        return cls(f.space, 0.0, slots)

    @property
    def order(self) -> int:
        return len(self.kernels)

    def terms(self):
        """Yield (k, f_k) for the stored nonzero slots."""
        for k, f in enumerate(self.kernels, start=1):
            if f is not None:
                yield k, f

    def kernel(self, k: int) -> Kernel:
        if 1 <= k <= self.order and self.kernels[k - 1] is not None:
            return self.kernels[k - 1]
        return Kernel.zeros(self.space, k)

    def single_term(self):
        """Return (order, kernel) if F = I_p(f) for a single p >= 1, else None."""
        present = list(self.terms())
        if len(present) == 1 and self.mean == 0.0:
            return present[0]
        return None

    def is_centered(self, tol=DEFAULT_TOL) -> bool:
        return abs(self.mean) <= tol.atol

    def variance(self) -> float:
        return sum(math.factorial(k) * inner_product(f, f) for k, f in self.terms())

    def map_kernels(self, fn, mean: float | None = None) -> "ChaosExpansion":
        slots = [None if f is None else fn(k, f) for k, f in enumerate(self.kernels, start=1)]
        return ChaosExpansion(self.space, self.mean if mean is None else mean, slots, validate=False)

    def __add__(self, other: "ChaosExpansion") -> "ChaosExpansion":
        if other.space != self.space:
            raise ValidationError("expansions live on different spaces")
        n = max(self.order, other.order)
        slots = []
        for k in range(1, n + 1):
            a = self.kernels[k - 1] if k <= self.order else None
            b = other.kernels[k - 1] if k <= other.order else None
            slots.append(a if b is None else b if a is None else a + b)
        return ChaosExpansion(self.space, self.mean + other.mean, slots, validate=False)

    def scaled(self, c: float) -> "ChaosExpansion":
        return self.map_kernels(lambda k, f: f * c, mean=self.mean * c)

    def allclose(self, other: "ChaosExpansion", tol=DEFAULT_TOL) -> bool:
        if not tol.close(self.mean, other.mean):
            return False
        n = max(self.order, other.order)
        return all(self.kernel(k).allclose(other.kernel(k), tol) for k in range(1, n + 1))

    def __repr__(self):
        orders = [k for k, _ in self.terms()]
        return f"ChaosExpansion(mean={self.mean:.6g}, orders={orders}, m={self.space.cell_count})"


class DerivativeField:
    """A random field z -> u_z = sum_k I_k(u_k(z, .)).

    ``kernels[k]`` is the order-(k+1) kernel u_k whose first argument is the
    field position z; ``kernels[0]`` is the deterministic part.
    """

    __slots__ = ("space", "kernels")

    def __init__(self, space: DiscreteSpace, kernels):
        kernels = tuple(kernels)
        for k, u in enumerate(kernels):
            if u is not None and (u.space != space or u.order != k + 1):
                raise ValidationError(f"field slot {k} needs an order-{k + 1} kernel on the field's space")
        self.space = space
        self.kernels = kernels

    @property
    def cell_count(self) -> int:
        return self.space.cell_count

    def at(self, z: int) -> ChaosExpansion:
        """The expansion of u_z at cell z."""
        mean = 0.0
        slots = []
        for k, u in enumerate(self.kernels):
            if u is None:
                if k:
                    slots.append(None)
                continue
            if k == 0:
                mean = float(u.values[z])
            else:
                slots.append(slice_kernel(u, z))
        return ChaosExpansion(self.space, mean, slots, validate=False)


def derivative(F: ChaosExpansion) -> DerivativeField:
    """D_z F = sum_k k I_{k-1}(f_k(z, .))."""
    return DerivativeField(F.space, [None if f is None else f * k for k, f in enumerate(F.kernels, start=1)])


def divergence(u: DerivativeField) -> ChaosExpansion:
    """delta(u) = sum_k I_{k+1}(sym u_k)."""
    return ChaosExpansion(u.space, 0.0, [None if v is None else symmetrize(v) for v in u.kernels], validate=False)


def ou_generator(F: ChaosExpansion) -> ChaosExpansion:
    """L F = -sum_k k I_k(f_k)."""
    return F.map_kernels(lambda k, f: f * (-k), mean=0.0)


def pseudo_inverse(F: ChaosExpansion, tol=DEFAULT_TOL) -> ChaosExpansion:
    """L^{-1} F = -sum_k (1/k) I_k(f_k) for centered F."""
    if not F.is_centered(tol):
        raise ValidationError(f"pseudo_inverse needs a centered expansion, mean is {F.mean!r}")
    return F.map_kernels(lambda k, f: f / (-k), mean=0.0)


def malliavin_inner(F: ChaosExpansion, G: ChaosExpansion, tol=DEFAULT_TOL) -> ChaosExpansion:
    """Chaos expansion of <DF, -D L^{-1} G> in L2(mu).

    For F = I_p(f), G = I_q(g) this is p * sum_k I_k(hat-G_k^{p,q}(f, g)),
    k = |q-p| .. p+q-2, where the k = 0 term is the constant p! <f, g>.
    """
    if not (F.is_centered(tol) and G.is_centered(tol)):
        raise ValidationError("malliavin_inner needs centered expansions")
    if F.space != G.space:
        raise ValidationError("expansions live on different spaces")
    m = F.space.cell_count
    mean = 0.0
    acc: dict[int, np.ndarray] = {}
    for p, f in F.terms():
        for q, g in G.terms():
            for k in range(abs(q - p), p + q - 1):
                ghat = g_hat_operator(f, g, k)
                if k == 0:
                    mean += p * ghat.item()
                else:
                    acc[k] = acc.get(k, np.zeros((m,) * k)) + p * ghat.values
    top = max(acc, default=0)
    slots = [Kernel._wrap(F.space, acc[k], True) if k in acc else None for k in range(1, top + 1)]
    return ChaosExpansion(F.space, mean, slots, validate=False)


def second_moment(F: ChaosExpansion) -> float:
    """E[F^2] = mean^2 + sum_k k! ||f_k||^2."""
    return F.mean**2 + F.variance()


def centered_product_moment(F: ChaosExpansion, G: ChaosExpansion) -> float:
    """E[(F - EF)(G - EG)] = sum_k k! <f_k, g_k>."""
    if F.space != G.space:
        raise ValidationError("expansions live on different spaces")
    total = 0.0
    for k, f in F.terms():
        if k <= G.order and G.kernels[k - 1] is not None:
            total += math.factorial(k) * inner_product(f, G.kernels[k - 1])
    return total


def as_single_term(F) -> tuple[int, Kernel]:
    """Accept a Kernel or a single-term centered expansion; return (order, kernel)."""
    if isinstance(F, Kernel):
        if F.order < 1:
            raise ValidationError("expected a kernel of order >= 1")
        return F.order, F
    st = F.single_term()
    if st is None:
        raise ValidationError(f"expected a single multiple integral, got {F!r}")
    return st
