import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poissonstein.algebra import product_expand, star_contract, symmetrize
from poissonstein.chaos import (
    ChaosExpansion,
    DerivativeField,
    as_single_term,
    centered_product_moment,
    derivative,
    divergence,
    malliavin_inner,
    ou_generator,
    pseudo_inverse,
    second_moment,
)
from poissonstein.errors import ValidationError
from poissonstein.simulate import diag_free_projection, eval_chaos, eval_field, sample_counts
from poissonstein.space import DiscreteSpace, Kernel, inner_product, slice_kernel
from conftest import random_space, random_symmetric


def random_expansion(rng, space, K, mean=0.0):
    return ChaosExpansion(space, mean, [random_symmetric(rng, space, k) for k in range(1, K + 1)])


def test_expansion_validation(rng):
    sp = random_space(rng, 3)
    with pytest.raises(ValidationError):
        ChaosExpansion(sp, 0.0, [random_symmetric(rng, sp, 2)])
    with pytest.raises(ValidationError):
        ChaosExpansion(sp, 0.0, [None, Kernel(sp, rng.normal(size=(3, 3)))])
    with pytest.raises(ValidationError):
        ChaosExpansion(sp, 0.0, [random_symmetric(rng, random_space(rng, 3), 1)])


def test_derivative_examples(rng):
    sp = random_space(rng, 4)
    h = random_symmetric(rng, sp, 1)
    D = derivative(ChaosExpansion.multiple_integral(h))
    for z in range(4):
        at = D.at(z)
        assert at.mean == h.values[z] and at.order == 0
    f = random_symmetric(rng, sp, 2)
    D2 = derivative(ChaosExpansion.multiple_integral(f))
    for z in range(4):
        assert np.array_equal(D2.at(z).kernel(1).values, 2 * slice_kernel(f, z).values)
    Dc = derivative(ChaosExpansion.constant(sp, 5.0))
    assert all(u is None for u in Dc.kernels) or not Dc.kernels


def test_generator_examples(rng):
    sp = random_space(rng, 3)
    h = random_symmetric(rng, sp, 1)
    assert ou_generator(ChaosExpansion.multiple_integral(h)).kernel(1).allclose(h * -1.0)
    LC = ou_generator(ChaosExpansion.constant(sp, 5.0))
    assert LC.mean == 0.0 and LC.order == 0
    f = random_symmetric(rng, sp, 3)
    assert ou_generator(ChaosExpansion.multiple_integral(f)).kernel(3).allclose(f * -3.0)


def test_pseudo_inverse_examples(rng):
    sp = random_space(rng, 3)
    f = random_symmetric(rng, sp, 2)
    assert pseudo_inverse(ChaosExpansion.multiple_integral(f)).kernel(2).allclose(f * -0.5)
    with pytest.raises(ValidationError):
        pseudo_inverse(ChaosExpansion(sp, 1.0, [f.__class__.zeros(sp, 1), f]))


def test_divergence_examples(rng):
    sp = random_space(rng, 3)
    f = random_symmetric(rng, sp, 2)
    F = ChaosExpansion.multiple_integral(f)
    assert divergence(derivative(F)).kernel(2).allclose(f * 2.0)
    h = random_symmetric(rng, sp, 1)
    assert divergence(DerivativeField(sp, [h])).kernel(1).allclose(h)
    dc = divergence(derivative(ChaosExpansion.constant(sp, 3.0)))
    assert dc.mean == 0.0 and all(f is None or not np.any(f.values) for f in dc.kernels)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 5), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_operator_algebra(m, K, seed):
    rng = np.random.default_rng(seed)
    sp = random_space(rng, m)
    F = random_expansion(rng, sp, K, mean=float(rng.normal()))
    lhs = divergence(derivative(F))
    rhs = ou_generator(F).scaled(-1.0)
    for k in range(1, K + 1):
        assert np.max(np.abs(lhs.kernel(k).values - rhs.kernel(k).values)) <= 1e-12
    Fc = ChaosExpansion(sp, 0.0, F.kernels)
    back = ou_generator(pseudo_inverse(Fc))
    for k in range(1, K + 1):
        assert np.max(np.abs(back.kernel(k).values - Fc.kernel(k).values)) <= 1e-12


def test_malliavin_inner_examples(rng):
    sp = random_space(rng, 4)
    h = random_symmetric(rng, sp, 1)
    H = ChaosExpansion.multiple_integral(h)
    res = malliavin_inner(H, H)
    assert res.mean == pytest.approx(inner_product(h, h), abs=1e-14) and res.order == 0
    g2 = random_symmetric(rng, sp, 2)
    res = malliavin_inner(H, ChaosExpansion.multiple_integral(g2))
    assert res.mean == 0.0
    assert np.allclose(res.kernel(1).values, star_contract(h, g2, 1, 1).values, atol=1e-14)
    with pytest.raises(ValidationError):
        malliavin_inner(ChaosExpansion(sp, 1.0, [h]), H)


def test_malliavin_inner_slice_oracle(rng):
    sp = random_space(rng, 3)
    f = random_symmetric(rng, sp, 2)
    F = ChaosExpansion.multiple_integral(f)
    res = malliavin_inner(F, F)
    # p * sum_z w_z I_1(f(z,.)) I_1(f(z,.)), expanded slice by slice
    acc = {0: 0.0, 1: np.zeros(3), 2: np.zeros((3, 3))}
    for z, wz in enumerate(sp.weights):
        fz = slice_kernel(f, z)
        for k, gk in product_expand(fz, fz):
            acc[k] = acc[k] + 2 * wz * gk.values
    assert res.mean == pytest.approx(float(acc[0]), abs=1e-12)
    assert res.mean == pytest.approx(second_moment(F), abs=1e-12)
    assert np.allclose(res.kernel(1).values, acc[1], atol=1e-12)
    assert np.allclose(res.kernel(2).values, acc[2], atol=1e-12)
    assert np.allclose(res.kernel(1).values, 2 * star_contract(f, f, 2, 1).values, atol=1e-12)
    assert np.allclose(res.kernel(2).values, 2 * symmetrize(star_contract(f, f, 1, 1)).values, atol=1e-12)


def test_moments(rng):
    sp = DiscreteSpace([1.0, 1.0])
    assert second_moment(ChaosExpansion.multiple_integral(Kernel(sp, [1.0, 1.0]))) == 2.0
    assert second_moment(ChaosExpansion.constant(sp, 3.0)) == 9.0
    sp = random_space(rng, 3)
    f1, g2, h2 = random_symmetric(rng, sp, 1), random_symmetric(rng, sp, 2), random_symmetric(rng, sp, 2)
    I = ChaosExpansion.multiple_integral
    assert centered_product_moment(I(f1), I(g2)) == 0.0
    assert centered_product_moment(I(g2), I(h2)) == pytest.approx(2 * inner_product(g2, h2), abs=1e-14)


def test_as_single_term(rng):
    sp = random_space(rng, 3)
    f = random_symmetric(rng, sp, 2)
    assert as_single_term(f)[0] == 2
    assert as_single_term(ChaosExpansion.multiple_integral(f))[1] is f
    with pytest.raises(ValidationError):
        as_single_term(ChaosExpansion(sp, 0.0, [random_symmetric(rng, sp, 1), f]))


def _diag_free_symmetric(rng, sp, order):
    return diag_free_projection(random_symmetric(rng, sp, order))[0]


def test_moments_match_simulation(rng):
    sp = random_space(rng, 4)
    f = _diag_free_symmetric(rng, sp, 2)
    g = _diag_free_symmetric(rng, sp, 2)
    F, G = ChaosExpansion.multiple_integral(f), ChaosExpansion.multiple_integral(g)
    batch = sample_counts(sp, 40000, seed=11)
    a, b = eval_chaos(F, batch), eval_chaos(G, batch)
    se = (a * a).std() / math.sqrt(a.size)
    assert abs((a * a).mean() - second_moment(F)) <= 3 * se
    prod = a * b
    assert abs(prod.mean() - centered_product_moment(F, G)) <= 3 * prod.std() / math.sqrt(prod.size)


@pytest.mark.parametrize("q", [1, 2])
def test_integration_by_parts_monte_carlo(rng, q):
    sp = random_space(rng, 4)
    f = _diag_free_symmetric(rng, sp, 2)
    g = _diag_free_symmetric(rng, sp, q)
    F, G = ChaosExpansion.multiple_integral(f), ChaosExpansion.multiple_integral(g)
    batch = sample_counts(sp, 40000, seed=5)
    # E[G delta(DF)] = E[<DG, DF>]
    lhs = eval_chaos(G, batch) * eval_chaos(divergence(derivative(F)), batch)
    rhs = (eval_field(derivative(G), batch) * eval_field(derivative(F), batch) * sp.weights).sum(axis=1)
    diff = lhs - rhs
    assert abs(diff.mean()) <= 3 * diff.std() / math.sqrt(diff.size) + 1e-12
