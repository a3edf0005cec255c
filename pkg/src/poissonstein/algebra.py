"""Symmetrization, star contractions and the hybrid product operators.

Index convention for ``star_contract(f, g, r, l)``: the first ``r`` arguments
of ``f`` and ``g`` are identified and the first ``l`` of those are integrated
against the cell weights. The output arguments are ordered as
(identified but not integrated, remaining of f, remaining of g).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalGuardError, ValidationError
from .space import Kernel, _check_compatible, inner_product, lp_norm, slice_kernel

MAX_SYMMETRIZE_ORDER = 6
# entries allowed in a materialized contraction output
MAX_DENSE_ENTRIES = 2 * 10**8


def comb(n: int, k: int) -> int:
    """Binomial coefficient, zero outside 0 <= k <= n."""
    if n < 0 or k < 0 or k > n:
        return 0
    return math.comb(n, k)


@dataclass(frozen=True)
class ContractionSpec:
    r: int
    l: int
    p: int
    q: int

    def __post_init__(self):
        if not (0 <= self.l <= self.r <= min(self.p, self.q)):
            raise ValidationError(
                f"contraction needs 0 <= l <= r <= min(p, q); got r={self.r}, l={self.l}, p={self.p}, q={self.q}"
            )

    @property
    def output_order(self) -> int:
        return self.p + self.q - self.r - self.l


def symmetrize(f: Kernel) -> Kernel:
    """Average of f over all permutations of its arguments."""
    p = f.order
    if p > MAX_SYMMETRIZE_ORDER:
        raise ValidationError(f"symmetrize supports order <= {MAX_SYMMETRIZE_ORDER}, got {p}")
    if p <= 1:
        return Kernel._wrap(f.space, f.values.copy(), True)
    v = f.values
    if p == 2:
        return Kernel._wrap(f.space, (v + v.T) / 2.0, True)
    acc = np.zeros_like(v)
    for perm in itertools.permutations(range(p)):
        acc += np.transpose(v, perm)
    return Kernel._wrap(f.space, acc / math.factorial(p), True)


def _guard_entries(m: int, order: int, what: str):
    if m**order > MAX_DENSE_ENTRIES:
        raise NumericalGuardError(
            f"{what} would materialize m^{order} = {m**order:.3g} entries (budget {MAX_DENSE_ENTRIES:.3g})"
        )


def star_contract(f: Kernel, g: Kernel, r: int, l: int) -> Kernel:
    """The contraction f star_r^l g as a dense kernel of order p+q-r-l."""
    _check_compatible(f, g, same_order=False)
    spec = ContractionSpec(r, l, f.order, g.order)
    p, q = spec.p, spec.q
    m = f.m
    _guard_entries(m, spec.output_order, "star_contract")
    nz, ng, nt, ns = l, r - l, p - r, q - r
    z_axes = list(range(0, nz))
    gam_axes = list(range(nz, r))
    fv = np.transpose(f.values, gam_axes + list(range(r, p)) + z_axes)
    gv = np.transpose(g.values, gam_axes + z_axes + list(range(r, q)))
    fv = fv.reshape(m**ng, m**nt, m**nz)
    gv = gv.reshape(m**ng, m**nz, m**ns)
    if nz:
        fv = fv * f.space.weight_tensor(nz).reshape(-1)
    out = np.matmul(fv, gv)
    return Kernel._wrap(f.space, out.reshape((m,) * spec.output_order))


def contraction_norm(f: Kernel, g: Kernel, r: int, l: int) -> float:
    """L2 norm of f star_r^l g for symmetric f, g, without large intermediates.

    Uses ||f star_r^l g||^2 = <f star_{p-l}^{p-r} f, g star_{q-l}^{q-r} g>,
    whose factors have order r + l, when that is cheaper than the direct
    output of order p + q - r - l.
    """
    spec = ContractionSpec(r, l, f.order, g.order)
    p, q = spec.p, spec.q
    if spec.output_order <= r + l:
        return lp_norm(star_contract(f, g, r, l), 2)
    left = star_contract(f, f, p - l, p - r)
    right = left if (g is f) else star_contract(g, g, q - l, q - r)
    return math.sqrt(max(inner_product(left, right), 0.0))


def _require_symmetric(*kernels: Kernel):
    for f in kernels:
        if not f.is_symmetric():
            raise ValidationError(f"kernel of order {f.order} is not symmetric")


def verify_contraction_identity(f: Kernel, g: Kernel, s: int, t: int) -> tuple[float, float]:
    """Both sides of ||f star_t^s g||^2 = <f star_{p-s}^{p-t} f, g star_{q-s}^{q-t} g>."""
    p, q = f.order, g.order
    if not 1 <= s <= t <= min(p, q):
        raise ValidationError(f"need 1 <= s <= t <= min(p, q); got s={s}, t={t}, p={p}, q={q}")
    _require_symmetric(f, g)
    lhs = lp_norm(star_contract(f, g, t, s), 2) ** 2
    rhs = inner_product(star_contract(f, f, p - s, p - t), star_contract(g, g, q - s, q - t))
    return lhs, rhs


def verify_useful_identity(f: Kernel, g: Kernel, r: int) -> tuple[float, float]:
    """Both sides of int (f star_r^0 g)^2 = int (f star_p^{p-r} f)(g star_q^{q-r} g)."""
    p, q = f.order, g.order
    if not 1 <= r <= min(p, q):
        raise ValidationError(f"need 1 <= r <= min(p, q); got r={r}, p={p}, q={q}")
    _require_symmetric(f, g)
    lhs = lp_norm(star_contract(f, g, r, 0), 2) ** 2
    rhs = inner_product(star_contract(f, f, p, p - r), star_contract(g, g, q, q - r))
    return lhs, rhs


def g_coefficient(p: int, q: int, r: int, l: int) -> int:
    return math.factorial(r) * comb(p, r) * comb(q, r) * comb(r, l)


def g_operator(f: Kernel, g: Kernel, k: int) -> Kernel:
    """G_k^{p,q}(f, g): the order-k kernel of I_p(f) I_q(g)."""
    _check_compatible(f, g, same_order=False)
    p, q = f.order, g.order
    if not abs(q - p) <= k <= p + q:
        raise ValidationError(f"k={k} outside |q-p| <= k <= p+q for p={p}, q={q}")
    acc = np.zeros((f.m,) * k)
    for r in range(min(p, q) + 1):
        l = p + q - r - k
        if 0 <= l <= r:
            term = symmetrize(star_contract(f, g, r, l))
            acc = acc + g_coefficient(p, q, r, l) * term.values
    return Kernel._wrap(f.space, acc, True)


def g_hat_coefficient(p: int, q: int, t: int, s: int) -> int:
    return math.factorial(t - 1) * comb(p - 1, t - 1) * comb(q - 1, t - 1) * comb(t - 1, s - 1)


def g_hat_terms(p: int, q: int, k: int) -> list[tuple[int, int, int]]:
    """(t, s, coefficient) triples entering the closed form of hat-G_k^{p,q}."""
    out = []
    for t in range(1, min(p, q) + 1):
        s = p + q - k - t
        if 1 <= s <= t:
            out.append((t, s, g_hat_coefficient(p, q, t, s)))
    return out


def _check_g_hat_range(p: int, q: int, k: int, lowest: int | None = None):
    if p < 1 or q < 1:
        raise ValidationError(f"hat-G needs orders >= 1, got p={p}, q={q}")
    lo = abs(q - p) if lowest is None else lowest
    if not lo <= k <= p + q - 2:
        raise ValidationError(f"k={k} outside {lo} <= k <= p+q-2 = {p + q - 2} for p={p}, q={q}")


def g_hat_operator(f: Kernel, g: Kernel, k: int, method: str = "closed") -> Kernel:
    """hat-G_k^{p,q}(f, g) = sum_z w_z G_k^{p-1,q-1}(f(z,.), g(z,.)).

    ``method="closed"`` uses the (t, s) sum of symmetrized contractions,
    ``method="slices"`` sums G over slices; the two agree up to rounding.
    """
    _check_compatible(f, g, same_order=False)
    p, q = f.order, g.order
    _check_g_hat_range(p, q, k)
    if method == "closed":
        acc = np.zeros((f.m,) * k)
        for t, s, c in g_hat_terms(p, q, k):
            acc = acc + c * symmetrize(star_contract(f, g, t, s)).values
        return Kernel._wrap(f.space, acc, True)
    if method == "slices":
        acc = np.zeros((f.m,) * k)
        for z, wz in enumerate(f.space.weights):
            acc = acc + wz * g_operator(slice_kernel(f, z), slice_kernel(g, z), k).values
        return Kernel._wrap(f.space, acc, True)
    raise ValidationError(f"unknown method {method!r}; use 'closed' or 'slices'")


def lemma53_constant(p: int, q: int, k: int) -> int:
    """Sum over t of squared closed-form coefficients, s = p+q-k-t."""
    total = 0
    for t in range(1, min(p, q) + 1):
        s = p + q - k - t
        c = math.factorial(t - 1) * comb(p - 1, t - 1) * comb(q - 1, t - 1) * comb(t - 1, s - 1)
        total += c * c
    return total


def g_hat_norm_bound(f: Kernel, g: Kernel, k: int) -> tuple[float, float]:
    """(||hat-G_k||^2, C * sum_t ||sym(f star_t^s g)||^2); the first never exceeds the second."""
    p, q = f.order, g.order
    _check_g_hat_range(p, q, k, lowest=max(abs(q - p), 1))
    lhs = lp_norm(g_hat_operator(f, g, k), 2) ** 2
    acc = 0.0
    for t, s, _ in g_hat_terms(p, q, k):
        acc += lp_norm(symmetrize(star_contract(f, g, t, s)), 2) ** 2
    return lhs, lemma53_constant(p, q, k) * acc


def product_expand(f: Kernel, g: Kernel) -> list[tuple[int, Kernel]]:
    """Chaos decomposition [(k, G_k^{p,q})] of I_p(f) I_q(g)."""
    p, q = f.order, g.order
    if p + q > MAX_SYMMETRIZE_ORDER:
        raise ValidationError(f"product of orders {p} and {q} exceeds order {MAX_SYMMETRIZE_ORDER}")
    return [(k, g_operator(f, g, k)) for k in range(abs(q - p), p + q + 1)]


@dataclass
class AssumptionReport:
    holds: bool
    values: dict = field(default_factory=dict)


def assumption_a_check(f: Kernel) -> AssumptionReport:
    """Norms of f star_p^{p-r} f for r = 1..p (all finite on a grid)."""
    p = f.order
    norms = {r: lp_norm(star_contract(f, f, p, p - r), 2) for r in range(1, p + 1)}
    return AssumptionReport(all(math.isfinite(v) for v in norms.values()), norms)


def assumption_b_check(f: Kernel) -> AssumptionReport:
    """Max absolute value of |f| star_r^l |f| for 1 <= l <= r <= p."""
    p = f.order
    a = Kernel._wrap(f.space, np.abs(f.values), f._symmetric)
    maxima = {}
    for r in range(1, p + 1):
        for l in range(1, r + 1):
            maxima[(r, l)] = float(np.max(star_contract(a, a, r, l).values, initial=0.0))
    return AssumptionReport(all(math.isfinite(v) for v in maxima.values()), maxima)


def assumption_c_value(f: Kernel, g: Kernel, k: int) -> float:
    """Sum_z w_z ||G_k^{p-1,q-1}(f(z,.), g(z,.))||."""
    p, q = f.order, g.order
    _check_g_hat_range(p, q, k)
    total = 0.0
    for z, wz in enumerate(f.space.weights):
        total += wz * lp_norm(g_operator(slice_kernel(f, z), slice_kernel(g, z), k), 2)
    return total
