"""Malliavin-Stein bounds assembled from contraction norms and chaos data."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .algebra import (
    contraction_norm,
    g_hat_terms,
    lemma53_constant,
    star_contract,
    symmetrize,
)
from .chaos import ChaosExpansion, as_single_term
from .errors import ValidationError
from .linalg import jacobi_eigenvalues
from .space import Kernel, inner_product, lp_norm

SQRT_2PI = math.sqrt(2.0 * math.pi)


class CovMatrix:
    """Symmetric d x d target covariance with definiteness flags."""

    __slots__ = ("entries", "_eig")

    def __init__(self, entries):
        a = np.array(entries, dtype=np.float64)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValidationError(f"covariance must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("covariance entries must be finite")
        scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
        if np.max(np.abs(a - a.T), initial=0.0) > 1e-12 * scale:
            raise ValidationError("covariance matrix is not symmetric")
        a = (a + a.T) / 2.0
        a.flags.writeable = False
        self.entries = a
        self._eig = None

    @classmethod
    def identity(cls, d: int) -> "CovMatrix":
        return cls(np.eye(d))

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    @property
    def eigenvalues(self) -> np.ndarray:
        if self._eig is None:
            self._eig = jacobi_eigenvalues(self.entries) if self.d else np.zeros(0)
        return self._eig

    @property
    def is_nonneg_definite(self) -> bool:
        if self.d == 0:
            return True
        return bool(self.eigenvalues[0] >= -1e-10 * max(1.0, operator_norm(self)))

    @property
    def is_positive_definite(self) -> bool:
        if self.d == 0:
            return False
        return bool(self.eigenvalues[0] > 1e-10 * operator_norm(self))

    def __repr__(self):
        return f"CovMatrix(d={self.d})"


def _cov(C) -> CovMatrix:
    return C if isinstance(C, CovMatrix) else CovMatrix(C)


def operator_norm(C) -> float:
    """Largest singular value; for a symmetric matrix the largest |eigenvalue|."""
    ev = _cov(C).eigenvalues
    return float(np.max(np.abs(ev), initial=0.0))


def inverse_operator_norm(C) -> float:
    C = _cov(C)
    if not C.is_positive_definite:
        raise ValidationError("matrix is singular (not positive definite); its inverse norm is undefined")
    return 1.0 / float(C.eigenvalues[0])


def hilbert_schmidt_norm(A) -> float:
    a = A.entries if isinstance(A, CovMatrix) else np.asarray(A, dtype=float)
    return float(np.sqrt(np.sum(a * a)))


def stein_constants(C) -> tuple[float, float]:
    """(||C^-1|| ||C||^(1/2), (sqrt(2 pi)/8) ||C^-1||^(3/2) ||C||)."""
    inv = inverse_operator_norm(C)
    op = operator_norm(C)
    return inv * math.sqrt(op), SQRT_2PI / 8.0 * inv**1.5 * op


def gaussian_wasserstein(C, K) -> float:
    """Wasserstein bound between N(0, C) and N(0, K)."""
    C, K = _cov(C), _cov(K)
    if C.d != K.d:
        raise ValidationError(f"dimension mismatch {C.d} vs {K.d}")
    q = min(stein_constants(C)[0], stein_constants(K)[0])
    return q * hilbert_schmidt_norm(C.entries - K.entries)


@dataclass
class PairTermLevels:
    """Nested estimates of E[(a - <DF, -DL^{-1}G>)^2], increasing."""

    exact: float
    lemma: float
    cauchy_schwarz: float
    per_k: dict = field(default_factory=dict)

    def as_tuple(self):
        return self.exact, self.lemma, self.cauchy_schwarz


def _cached_norm(cache, f: Kernel, r: int, l: int) -> float:
    """contraction_norm(f, f, r, l), memoized per kernel object."""
    if cache is None:
        return contraction_norm(f, f, r, l)
    key = (id(f), r, l)
    if key not in cache:
        cache[key] = (f, contraction_norm(f, f, r, l))
    return cache[key][1]


def pair_term_bound(f: Kernel, g: Kernel, a: float, cache: dict | None = None) -> PairTermLevels:
    """Three estimates of E[(a - <D I_p(f), -D L^{-1} I_q(g)>)^2].

    exact: (p! <f,g> 1{p=q} - a)^2 + p^2 sum_k k! ||hat-G_k||^2;
    lemma: each ||hat-G_k||^2 replaced by its coefficient-sum bound;
    cauchy_schwarz: each ||sym(f star_t^s g)||^2 replaced by the product
    ||f star_{p-s}^{p-t} f|| ||g star_{q-s}^{q-t} g||.

    ``cache`` may be shared across calls to reuse contractions of the same
    kernel objects.
    """
    p, q = f.order, g.order
    if p < 1 or q < 1:
        raise ValidationError("pair_term_bound needs kernels of order >= 1")
    det = math.factorial(p) * inner_product(f, g) if p == q else 0.0
    base = (det - a) ** 2
    exact = lemma = cs = base
    per_k = {}
    sym_cache = {}
    for k in range(max(abs(q - p), 1), p + q - 1):
        terms = g_hat_terms(p, q, k)
        ghat = np.zeros((f.m,) * k)
        sq_sum = 0.0
        cs_sum = 0.0
        for t, s, c in terms:
            st = _sym_contraction(f, g, t, s, sym_cache, cache)
            ghat = ghat + c * st.values
            sq_sum += lp_norm(st, 2) ** 2
            cs_sum += _cached_norm(cache, f, p - s, p - t) * _cached_norm(cache, g, q - s, q - t)
        ghat_sq = lp_norm(Kernel._wrap(f.space, ghat), 2) ** 2
        const = lemma53_constant(p, q, k)
        w = p * p * math.factorial(k)
        per_k[k] = (ghat_sq, const * sq_sum, const * cs_sum)
        exact += w * ghat_sq
        lemma += w * const * sq_sum
        cs += w * const * cs_sum
    return PairTermLevels(exact, lemma, cs, per_k)


def _sym_contraction(f, g, t, s, local, cache):
    if (t, s) in local:
        return local[(t, s)]
    if cache is not None and t == s and f.order == g.order:
        # sym(g star_t^t f) is sym(f star_t^t g) with arguments permuted, so one copy serves both orders
        key = ("sym", frozenset((id(f), id(g))), t)
        if key not in cache:
            cache[key] = (f, g, symmetrize(star_contract(f, g, t, s)))
        local[(t, s)] = cache[key][2]
    else:
        local[(t, s)] = symmetrize(star_contract(f, g, t, s))
    return local[(t, s)]


def _third_moment_inner(q: int, f: Kernel, cache: dict | None = None) -> float:
    total = 0.0
    for b in range(1, q + 1):
        for a in range(0, b):
            if not 1 <= a + b <= 2 * q - 1:
                continue
            coef = (
                math.sqrt(math.factorial(a + b - 1))
                * math.factorial(q - a - 1)
                * math.comb(q - 1, q - 1 - a) ** 2
                * math.comb(q - 1 - a, q - b)
            )
            total += coef * _cached_norm(cache, f, b, a)
    return total


def third_moment_term(F_list, cache: dict | None = None) -> float:
    """Upper bound for int mu(dz) E[(sum_i |D_z F_i|)^2 (sum_i |D_z L^{-1} F_i|)]."""
    if not F_list:
        raise ValidationError("third_moment_term needs at least one component")
    items = [as_single_term(F) for F in F_list]
    d = len(items)
    qmin = min(q for q, _ in items)
    total = 0.0
    for q, f in items:
        pref = q**3 * math.sqrt(math.factorial(q - 1) * inner_product(f, f))
        total += pref * _third_moment_inner(q, f, cache)
    return d * d / qmin * total


def first_chaos_cubic(h_list) -> float:
    """Exact cubic term int (sum_i |h_i|)^3 dmu for first-chaos components."""
    acc = sum(np.abs(h.values) for h in h_list)
    return float(np.sum(acc**3 * h_list[0].space.weights))


@dataclass
class BoundReport:
    term_sq_sum: float
    cubic_term: float
    stein_constants: tuple | None
    d2_bound: float | None
    d3_bound: float
    per_pair_detail: np.ndarray
    mode: str
    cubic_method: str
    term_sq_se: float | None = None
    cubic_se: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "term_sq_sum": self.term_sq_sum,
            "term_sq_se": self.term_sq_se,
            "cubic_term": self.cubic_term,
            "cubic_se": self.cubic_se,
            "cubic_method": self.cubic_method,
            "stein_constants": None if self.stein_constants is None else list(self.stein_constants),
            "d2_bound": self.d2_bound,
            "d3_bound": self.d3_bound,
            "per_pair_detail": self.per_pair_detail.tolist(),
            "notes": list(self.notes),
        }


def _finish(C: CovMatrix, term_sq_sum, cubic, detail, mode, cubic_method, **extra) -> BoundReport:
    term_sq_sum = max(term_sq_sum, 0.0)
    d3 = 0.5 * math.sqrt(term_sq_sum) + 0.25 * cubic
    consts = d2 = None
    if C.is_positive_definite:
        consts = stein_constants(C)
        d2 = consts[0] * math.sqrt(term_sq_sum) + consts[1] * cubic
    return BoundReport(term_sq_sum, cubic, consts, d2, d3, detail, mode, cubic_method, **extra)


def _analytic(F_list, C: CovMatrix) -> BoundReport:
    items = [as_single_term(F) for F in F_list]
    d = len(items)
    detail = np.zeros((d, d))
    cache = {}
    for i, (_, fi) in enumerate(items):
        for j, (_, fj) in enumerate(items):
            detail[i, j] = pair_term_bound(fi, fj, C.entries[i, j], cache).exact
    if all(q == 1 for q, _ in items):
        cubic = first_chaos_cubic([f for _, f in items])
        method = "exact (first chaos: D F is deterministic)"
    else:
        cubic = third_moment_term([f for _, f in items], cache)
        method = "third-moment upper bound"
    return _finish(C, float(detail.sum()), cubic, detail, "analytic", method)


def _montecarlo(F_list, C: CovMatrix, batch) -> BoundReport:
    from .simulate import diag_free_projection, eval_gradient_pair

    exps = []
    discarded = 0.0
    for F in F_list:
        if isinstance(F, Kernel):
            F = ChaosExpansion.multiple_integral(F)
        if not F.is_centered():
            raise ValidationError("Monte Carlo mode needs centered expansions")
        slots = []
        for k, f in enumerate(F.kernels, start=1):
            if f is None:
                slots.append(None)
                continue
            proj, lost = diag_free_projection(f)
            discarded += math.factorial(k) * lost
            slots.append(proj)
        exps.append(ChaosExpansion(F.space, 0.0, slots, validate=False))
    w = exps[0].space.weights
    grads = [eval_gradient_pair(F, batch) for F in exps]
    d = len(exps)
    R = batch.replications
    detail = np.zeros((d, d))
    total = np.zeros(R)
    for i in range(d):
        for j in range(d):
            inner = (grads[i][0] * grads[j][1]) @ w
            sq = (C.entries[i, j] - inner) ** 2
            detail[i, j] = sq.mean()
            total += sq
    sum_abs_d = sum(np.abs(g[0]) for g in grads)
    sum_abs_l = sum(np.abs(g[1]) for g in grads)
    cubic_samples = (sum_abs_d**2 * sum_abs_l) @ w
    se = lambda x: float(x.std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
    rep = _finish(C, float(detail.sum()), float(cubic_samples.mean()), detail, "montecarlo", "simulated",
                  term_sq_se=se(total), cubic_se=se(cubic_samples))
    rep.notes.append(f"replications={R}; diagonal mass dropped before simulation={discarded:.6g}")
    return rep


def assemble_d3(F_list, C, mode: str = "analytic", batch=None) -> BoundReport:
    """d3 bound (1/2) sqrt(term_sq_sum) + (1/4) cubic_term; d2 too when C is PD."""
    C = _cov(C)
    if len(F_list) != C.d:
        raise ValidationError(f"{len(F_list)} components but C is {C.d}x{C.d}")
    if mode == "analytic":
        return _analytic(F_list, C)
    if mode == "montecarlo":
        if batch is None:
            raise ValidationError("Monte Carlo mode needs a sample batch")
        return _montecarlo(F_list, C, batch)
    raise ValidationError(f"unknown mode {mode!r}; use 'analytic' or 'montecarlo'")


def assemble_d2(F_list, C, mode: str = "analytic", batch=None) -> BoundReport:
    C = _cov(C)
    if not C.is_positive_definite:
        raise ValidationError("the d2 bound needs a positive definite covariance")
    return assemble_d3(F_list, C, mode, batch)


@dataclass
class FirstChaosBounds:
    gram: np.ndarray
    hs_gap: float
    l3_sum: float
    d3_bound: float
    d2_bound: float | None


def first_chaos_bounds(h_list, C) -> FirstChaosBounds:
    """Closed-form bounds for (I_1(h_1), ..., I_1(h_d)) using sum_i int |h_i|^3."""
    C = _cov(C)
    d = len(h_list)
    gram = np.array([[inner_product(a, b) for b in h_list] for a in h_list])
    gap = hilbert_schmidt_norm(C.entries - gram)
    l3 = sum(lp_norm(h, 3) ** 3 for h in h_list)
    d3 = 0.5 * gap + d * d / 4.0 * l3
    d2 = None
    if C.is_positive_definite:
        inv, op = inverse_operator_norm(C), operator_norm(C)
        d2 = inv * math.sqrt(op) * gap + d * d * SQRT_2PI / 8.0 * inv**1.5 * op * l3
    return FirstChaosBounds(gram, gap, l3, d3, d2)


@dataclass
class SingleDoubleBound:
    S: dict
    first: float
    second: float


def single_double_bound(g_list, h_list, C) -> SingleDoubleBound:
    """Bounds for (I_1(g_1..g_m), I_2(h_1..h_n)) built from the sums S1..S6.

    The fourth-moment step uses E[I_1(u)^4] = 3 ||u||^4 + int u^4, so the
    contraction term inside S4 carries sqrt(3).
    """
    C = _cov(C)
    m, n = len(g_list), len(h_list)
    if C.d != m + n:
        raise ValidationError(f"C is {C.d}x{C.d} but there are {m}+{n} components")
    if any(g.order != 1 for g in g_list) or any(h.order != 2 for h in h_list):
        raise ValidationError("g_list must hold order-1 kernels and h_list order-2 kernels")
    c = C.entries
    S1 = sum((c[i1, i2] - inner_product(g_list[i1], g_list[i2])) ** 2 for i1 in range(m) for i2 in range(m))
    S2 = S5 = 0.0
    n21 = [contraction_norm(h, h, 1, 0) for h in h_list]
    n11 = [contraction_norm(h, h, 1, 1) for h in h_list]
    for j1 in range(n):
        for j2 in range(n):
            a = (c[m + j1, m + j2] - 2.0 * inner_product(h_list[j1], h_list[j2])) ** 2
            S2 += a + 4.0 * contraction_norm(h_list[j1], h_list[j2], 2, 1) ** 2 \
                + 8.0 * contraction_norm(h_list[j1], h_list[j2], 1, 1) ** 2
            S5 += a + 4.0 * n21[j1] * n21[j2] + 8.0 * n11[j1] * n11[j2]
    S3 = S6 = 0.0
    for i in range(m):
        gnorm_sq = inner_product(g_list[i], g_list[i])
        for j in range(n):
            S3 += 2.0 * c[i, m + j] ** 2 + 5.0 * contraction_norm(g_list[i], h_list[j], 1, 1) ** 2
            S6 += 2.0 * c[i, m + j] ** 2 + 5.0 * gnorm_sq * n11[j]
    S4 = m * m * sum(lp_norm(g, 3) ** 3 for g in g_list)
    S4 += 8.0 * n * n * sum(
        lp_norm(h, 2) * (lp_norm(h, 4) ** 2 + math.sqrt(3.0) * n21[j]) for j, h in enumerate(h_list)
    )
    first = 0.5 * math.sqrt(S1 + S2 + S3) + S4
    second = 0.5 * math.sqrt(S1 + S5 + S6) + S4
    S = {"S1": S1, "S2": S2, "S3": S3, "S4": S4, "S5": S5, "S6": S6}
    return SingleDoubleBound(S, first, second)


@dataclass
class CLTEntry:
    index: object
    covariance_gap: np.ndarray
    contraction_norms: list
    l4_fourth_powers: list
    l3_cubes: list
    assumption_a: list
    assumption_c: dict
    d3_bound: float


def clt_conditions(F_seq, C, assumption_c_budget: int = 5 * 10**7) -> list[CLTEntry]:
    """Per-index report of the covariance gap, contraction norms and d3 bound.

    ``F_seq`` is an iterable of (index, [kernels]) pairs, one kernel per
    component I_{q_i}(f_i).
    """
    from .algebra import assumption_a_check, assumption_c_value

    C = _cov(C)
    out = []
    for index, kernels in F_seq:
        d = len(kernels)
        if d != C.d:
            raise ValidationError(f"index {index!r}: {d} components but C is {C.d}x{C.d}")
        gap = np.zeros((d, d))
        for i, fi in enumerate(kernels):
            for j, fj in enumerate(kernels):
                val = math.factorial(fi.order) * inner_product(fi, fj) if fi.order == fj.order else 0.0
                gap[i, j] = abs(val - C.entries[i, j])
        norms, l4, l3, assum_a = [], [], [], []
        for f in kernels:
            q = f.order
            norms.append({(r, l): contraction_norm(f, f, r, l) for r in range(1, q + 1) for l in range(1, min(r, q - 1) + 1)})
            l4.append(lp_norm(f, 4) ** 4)
            l3.append(lp_norm(f, 3) ** 3)
            assum_a.append(assumption_a_check(f).values if f.m**q <= assumption_c_budget else None)
        assum_c = {}
        for i, fi in enumerate(kernels):
            for j, fj in enumerate(kernels):
                p, q = fi.order, fj.order
                for k in range(abs(q - p), p + q - 1):
                    if fi.m ** (k + 1) <= assumption_c_budget:
                        assum_c[(i, j, k)] = assumption_c_value(fi, fj, k)
        d3 = assemble_d3(kernels, C, "analytic").d3_bound
        out.append(CLTEntry(index, gap, norms, l4, l3, assum_a, assum_c, d3))
    return out
