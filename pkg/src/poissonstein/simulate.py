"""Monte Carlo engine: Poisson cell counts and pathwise multiple integrals.

Counts come from a counter-based generator keyed by (seed, replication,
cell), so any replication can be regenerated on its own and results do not
depend on how the work is split across threads. Replications are processed
in fixed-size blocks so every floating point reduction sees the same shapes
whatever the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _backend
from .chaos import ChaosExpansion, DerivativeField, derivative, pseudo_inverse
from .errors import NumericalGuardError, ValidationError
from .space import DiscreteSpace, Kernel, integrate

DEFAULT_SEED = 0x5EED
BLOCK_REPS = 1024
MAX_CHUNK_RATE = 10.0
# budget on m^p * R multiply-adds for one pathwise evaluation
EVAL_BUDGET = 4 * 10**11
MAX_PATHWISE_ORDER = 4
# stored counts per batch (int32, so 4 bytes each)
MAX_COUNT_ENTRIES = 4 * 10**8


@dataclass(frozen=True)
class SampleBatch:
    space: DiscreteSpace
    counts: np.ndarray  # (R, m) int32
    seed: int
    rep_start: int = 0

    def centered(self, lo: int = 0, hi: int | None = None) -> np.ndarray:
        """Compensated counts N - w for replications lo..hi-1 of the batch."""
        return self.counts[lo:hi] - self.space.weights

    @property
    def replications(self) -> int:
        return self.counts.shape[0]

    @property
    def stream_ids(self) -> np.ndarray:
        return np.arange(self.rep_start, self.rep_start + self.replications)


def _chunk_plan(weights: np.ndarray):
    nchunk = np.maximum(1, np.ceil(weights / MAX_CHUNK_RATE)).astype(np.int64)
    rate = weights / nchunk
    expneg = np.array([math.exp(-x) for x in rate])
    return rate, expneg, nchunk


def _blocks(total: int, start: int = 0):
    return [(lo, min(lo + BLOCK_REPS, total)) for lo in range(start, total, BLOCK_REPS)]


def sample_counts(space: DiscreteSpace, R: int, seed: int = DEFAULT_SEED, workers: int = 1,
                  rep_start: int = 0, backend: str | None = None) -> SampleBatch:
    """Independent Poisson(w_i) counts for replications rep_start .. rep_start+R-1."""
    if R < 1:
        raise ValidationError(f"R must be >= 1, got {R}")
    if not 0 <= seed < 2**64:
        raise ValidationError(f"seed must fit in 64 bits, got {seed}")
    core = _backend.get_backend(backend)
    rate, expneg, nchunk = _chunk_plan(space.weights)
    if R * space.cell_count > MAX_COUNT_ENTRIES:
        raise NumericalGuardError(
            f"R * m = {R} * {space.cell_count} = {R * space.cell_count:.3g} counts exceeds budget {MAX_COUNT_ENTRIES:.3g}"
        )
    counts = np.empty((R, space.cell_count), dtype=np.int32)

    def run(block):
        lo, hi = block
        core.poisson_block(rate, expneg, nchunk, seed, rep_start + lo, counts[lo:hi])

    blocks = _blocks(R)
    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run, blocks))
    else:
        for b in blocks:
            run(b)
    counts.flags.writeable = False
    return SampleBatch(space, counts, int(seed), int(rep_start))


def _diagonal_mask(m: int, order: int) -> np.ndarray:
    mask = np.zeros((m,) * order, dtype=bool)
    idx = np.arange(m)
    for a in range(order):
        for b in range(a + 1, order):
            sa = [1] * order
            sb = [1] * order
            sa[a] = m
            sb[b] = m
            mask |= idx.reshape(sa) == idx.reshape(sb)
    return mask


def diag_free_projection(f: Kernel) -> tuple[Kernel, float]:
    """Zero every entry with a repeated cell; return (kernel, discarded squared L2 mass)."""
    if f.order < 2:
        return f, 0.0
    mask = _diagonal_mask(f.m, f.order)
    dropped = np.where(mask, f.values, 0.0)
    discarded = integrate(Kernel._wrap(f.space, dropped * dropped))
    kept = np.where(mask, 0.0, f.values)
    return Kernel._wrap(f.space, kept, f._symmetric), discarded


def is_diagonal_free(f: Kernel) -> bool:
    if f.order < 2:
        return True
    return not np.any(f.values[_diagonal_mask(f.m, f.order)])


def _check_budget(m: int, order: int, R: int):
    if order > MAX_PATHWISE_ORDER:
        raise NumericalGuardError(f"pathwise evaluation supports order <= {MAX_PATHWISE_ORDER}, got {order}")
    cost = m**order * R
    if cost > EVAL_BUDGET:
        raise NumericalGuardError(f"m^p * R = {m}^{order} * {R} = {cost:.3g} exceeds budget {EVAL_BUDGET:.3g}")


def _contract_trailing(values: np.ndarray, x: np.ndarray, keep: int) -> np.ndarray:
    """Contract all but the first ``keep`` axes of ``values`` with rows of x.

    Returns shape (B,) + (m,)*keep where B = x.shape[0].
    """
    m = x.shape[1]
    p = values.ndim
    if p == keep:
        return np.broadcast_to(values, (x.shape[0],) + values.shape).copy()
    t = x @ values.reshape(-1, m).T  # contract last axis: (B, m^(p-1))
    for rest in range(p - 2, keep - 1, -1):
        t = t.reshape(x.shape[0], m**rest, m)
        t = np.einsum("bjm,bm->bj", t, x)
    return t.reshape((x.shape[0],) + (m,) * keep)


def _blockwise(fn, batch: SampleBatch, width: tuple = ()) -> np.ndarray:
    out = np.empty((batch.replications,) + width)
    for lo, hi in _blocks(batch.replications):
        out[lo:hi] = fn(batch.centered(lo, hi))
    return out


def eval_multiple_integral(f: Kernel, batch: SampleBatch, check: bool = True) -> np.ndarray:
    """Per replication, the sum over pairwise-distinct cell tuples of f * prod N-hat."""
    if f.space != batch.space:
        raise ValidationError("kernel and sample batch use different spaces")
    if f.order == 0:
        return np.full(batch.replications, f.item())
    if check and not is_diagonal_free(f):
        raise ValidationError(f"order-{f.order} kernel is not diagonal-free; use diag_free_projection first")
    _check_budget(f.m, f.order, batch.replications)
    return _blockwise(lambda x: _contract_trailing(f.values, x, 0), batch)


def eval_chaos(F: ChaosExpansion, batch: SampleBatch) -> np.ndarray:
    """mean + sum_k I_k(diag-free part of f_k), per replication."""
    out = np.full(batch.replications, F.mean)
    for _, f in F.terms():
        out += eval_multiple_integral(diag_free_projection(f)[0], batch, check=False)
    return out


def chaos_discarded_mass(F: ChaosExpansion) -> float:
    """Variance lost by projecting F's kernels onto diagonal-free kernels."""
    return sum(math.factorial(k) * diag_free_projection(f)[1] for k, f in F.terms())


def eval_field(u: DerivativeField, batch: SampleBatch) -> np.ndarray:
    """Pathwise values u_z for every replication and cell, shape (R, m)."""
    m = u.space.cell_count
    projected = [None if v is None else diag_free_projection(v)[0] for v in u.kernels]
    for v in projected:
        if v is not None:
            _check_budget(m, v.order, batch.replications)

    def block(x):
        acc = np.zeros((x.shape[0], m))
        for v in projected:
            if v is not None:
                acc += _contract_trailing(v.values, x, 1)
        return acc

    return _blockwise(block, batch, (m,))


def eval_gradient_pair(F: ChaosExpansion, batch: SampleBatch) -> tuple[np.ndarray, np.ndarray]:
    """Pathwise D_z F and -D_z L^{-1} F, each of shape (R, m)."""
    centered = ChaosExpansion(F.space, 0.0, F.kernels, validate=False)
    dF = eval_field(derivative(centered), batch)
    dLF = eval_field(derivative(pseudo_inverse(centered)), batch)
    return dF, -dLF


@dataclass
class CovEstimate:
    matrix: np.ndarray
    se: np.ndarray
    replications: int


def _as_value_matrix(F_list, batch) -> np.ndarray:
    cols = []
    for F in F_list:
        if isinstance(F, Kernel):
            F = ChaosExpansion.multiple_integral(F)
        cols.append(eval_chaos(F, batch))
    return np.column_stack(cols) if cols else np.zeros((batch.replications, 0))


def covariance_from_values(values: np.ndarray) -> CovEstimate:
    R, d = values.shape
    centered = values - values.mean(axis=0)
    prods = centered[:, :, None] * centered[:, None, :]
    cov = prods.sum(axis=0) / (R - 1)
    se = prods.std(axis=0, ddof=1) / math.sqrt(R)
    return CovEstimate(cov, se, R)


def empirical_cov(F_list, batch: SampleBatch) -> CovEstimate:
    """Sample covariance of (F_1, ..., F_d) with entrywise standard errors."""
    return covariance_from_values(_as_value_matrix(F_list, batch))


@dataclass(frozen=True)
class TestFunctionFamily:
    """Functions x -> cos(a . x + b) with sum_i |a_i| <= 1.

    That single condition gives sum_ij |a_i a_j| <= 1 and sum_ijk |a_i a_j a_k| <= 1,
    hence second and third derivatives bounded by one.
    """

    frequencies: np.ndarray
    phases: np.ndarray

    __test__ = False  # not a pytest class

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.frequencies, dtype=float))
        b = np.asarray(self.phases, dtype=float).reshape(-1)
        if a.shape[0] != b.size:
            raise ValidationError(f"{a.shape[0]} frequency vectors but {b.size} phases")
        l1 = np.abs(a).sum(axis=1)
        if np.any(l1**2 > 1 + 1e-12) or np.any(l1**3 > 1 + 1e-12):
            raise ValidationError("every frequency vector needs sum_i |a_i| <= 1")
        object.__setattr__(self, "frequencies", a)
        object.__setattr__(self, "phases", b)

    @property
    def count(self) -> int:
        return self.phases.size

    @property
    def dimension(self) -> int:
        return self.frequencies.shape[1]

    def evaluate(self, values: np.ndarray) -> np.ndarray:
        """phi_j(F_r) as an (R, count) array."""
        return np.cos(values @ self.frequencies.T + self.phases)

    def gaussian_means(self, C) -> np.ndarray:
        a = self.frequencies
        quad = np.einsum("ni,ij,nj->n", a, np.asarray(C, dtype=float), a)
        return np.cos(self.phases) * np.exp(-0.5 * quad)


FAMILY_SEED = 20240611


def make_test_family(d: int, count: int = 64, seed: int = FAMILY_SEED) -> TestFunctionFamily:
    rng = np.random.default_rng(seed)
    if count == 0:
        return TestFunctionFamily(np.zeros((0, d)), np.zeros(0))
    a = rng.standard_normal((count, d))
    a /= np.abs(a).sum(axis=1, keepdims=True)
    b = rng.uniform(0.0, 2.0 * math.pi, count)
    return TestFunctionFamily(a, b)


@dataclass
class Discrepancy:
    """Finite-family lower proxy for the d3 distance."""

    value: float
    se: float
    index: int
    differences: np.ndarray
    standard_errors: np.ndarray
    label: str = "finite-family lower estimate of d3"


def discrepancy_from_values(values: np.ndarray, C, family: TestFunctionFamily) -> Discrepancy:
    from .bounds import CovMatrix

    cov = C if isinstance(C, CovMatrix) else CovMatrix(C)
    if not cov.is_nonneg_definite:
        raise ValidationError("target covariance is not nonnegative-definite")
    if family.count == 0:
        return Discrepancy(0.0, 0.0, -1, np.zeros(0), np.zeros(0))
    if values.shape[1] != family.dimension or cov.d != family.dimension:
        raise ValidationError(f"dimension mismatch: values {values.shape[1]}, family {family.dimension}, C {cov.d}")
    phi = family.evaluate(values)
    R = values.shape[0]
    diff = phi.mean(axis=0) - family.gaussian_means(cov.entries)
    se = phi.std(axis=0, ddof=1) / math.sqrt(R)
    j = int(np.argmax(np.abs(diff)))
    return Discrepancy(float(abs(diff[j])), float(se[j]), j, diff, se)


def empirical_discrepancy(F_list, C, family: TestFunctionFamily, batch: SampleBatch) -> Discrepancy:
    """max_j |mean phi_j(F) - E phi_j(X)|, X ~ N(0, C), with Monte Carlo standard errors."""
    return discrepancy_from_values(_as_value_matrix(F_list, batch), C, family)
