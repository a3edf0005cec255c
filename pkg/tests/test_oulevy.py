import math

import numpy as np
import pytest

from poissonstein.errors import ValidationError
from poissonstein.oulevy import (
    OUConfig,
    build_space,
    component_kernels,
    cov_exact,
    cov_limit,
    cross_term_limit,
    fit_slope,
    g_A,
    grid,
    h_pair,
    h_star,
    kernel_A,
    kernel_Q,
    kernel_Qh,
    kernel_Y,
    mesh_diagnostics,
    rate_experiment,
)
from poissonstein.space import inner_product

SKEWED = ((2.0, 0.2), (-0.5, 0.8))


def test_config_normalizes_marks():
    cfg = OUConfig((1.0,), 10.0, mark_atoms=((2.0, 0.5), (-2.0, 0.5)))
    assert sum(u * u * w for u, w in cfg.mark_atoms) == pytest.approx(1.0, abs=1e-12)
    assert cfg.c_nu2 == pytest.approx(1.0)
    skew = OUConfig((1.0,), 10.0, mark_atoms=SKEWED)
    assert skew.third_moment != 0.0
    assert skew.c_nu2 == pytest.approx(0.2 * 16 + 0.8 * 0.0625)


@pytest.mark.parametrize("bad", [
    dict(lambdas=(0.0,), T=1.0),
    dict(lambdas=(1.0,), T=0.0),
    dict(lambdas=(1.0,), T=1.0, h=-1.0),
    dict(lambdas=(1.0,), T=1.0, mark_atoms=((1.0, 0.0),)),
    dict(lambdas=(1.0,), T=1.0, x_min=1.0),
])
def test_config_validation(bad):
    with pytest.raises(ValidationError):
        OUConfig(**bad)


def test_config_round_trip():
    cfg = OUConfig((1.0, 2.0), 50.0, h=0.5, mark_atoms=SKEWED)
    assert OUConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        OUConfig.from_dict({"lambdas": [1.0], "T": 1.0, "horizon": 3})


def test_build_space_counts_and_mass():
    cfg = OUConfig((1.0,), 10.0, x_min=-10.0, nx=100)
    sp = build_space(cfg)
    assert sp.cell_count == 200
    assert sp.total_mass == pytest.approx((cfg.T - cfg.x_min) * 1.0)
    u, x = grid(cfg)
    assert u.shape == x.shape == (200,)
    assert x.min() > cfg.x_min and x.max() < cfg.x_max


def test_default_truncation():
    cfg = OUConfig((0.5, 3.0), 10.0)
    assert cfg.x_min <= -20 / 0.5
    assert mesh_diagnostics(cfg)["truncated_mass_bound"] <= 1e-8
    # x = 0 falls on a cell boundary
    assert (0.0 - cfg.x_min) / cfg.dx == pytest.approx(round((0.0 - cfg.x_min) / cfg.dx))


def test_g_A_examples():
    lam, T = 2.0, 50.0
    x = np.array([49.0, 49.9, 49.999])
    expected = math.sqrt(2 * lam / T) * (1 - np.exp(-lam * (T - x))) / lam
    assert np.allclose(g_A(1.0, x, lam, T), expected, rtol=1e-13)
    assert abs(g_A(1.0, T, lam, T)) < 1e-15
    big = 1e4
    assert g_A(-1.0, 0.0, lam, big) == pytest.approx(-math.sqrt(2 / (lam * big)), rel=1e-12)
    # 1/sqrt(T) scaling at fixed x <= 0 once lam T is large
    assert g_A(1.0, -0.3, lam, 400.0) / g_A(1.0, -0.3, lam, 100.0) == pytest.approx(0.5, rel=1e-12)
    assert g_A(1.0, T + 1, lam, T) == 0.0


def test_H_examples():
    lam, T = 1.5, 30.0
    x = np.array([-2.0, -0.5, 0.0])
    expected = np.exp(2 * lam * x) * (1 - math.exp(-2 * lam * T)) / T
    assert np.allclose(h_star(-1.0, x, lam, T), expected, rtol=1e-13)
    assert np.allclose(h_pair(1.0, x, -1.0, x, lam, T), -expected, rtol=1e-13)
    u, xx, u2, yy = np.meshgrid([1.0, -0.5], np.linspace(-3, T, 7), [2.0, -1.0], np.linspace(-3, T, 9))
    assert np.array_equal(h_pair(u, xx, u2, yy, lam, T), h_pair(u2, yy, u, xx, lam, T))


def test_shift_identity():
    lam, T, h = 0.8, 25.0, 1.3
    x = np.linspace(-5, T, 11)[:, None]
    x2 = np.linspace(-5, T + h, 13)[None, :]
    shifted = h_pair(1.0, x, -1.0, x2, lam, T, h)
    plain = h_pair(1.0, x, -1.0, x2 - h, lam, T, 0.0)
    assert np.allclose(shifted, plain, rtol=0, atol=1e-12)
    # large shifts kill the first-chaos kernel
    assert np.all(np.abs(h_star(1.0, np.linspace(-5, T, 9), lam, T, 60.0)) < 1e-15)


def test_Qh_at_zero_shift_equals_Q():
    cfg = OUConfig((1.0,), 8.0, h=0.5, cells_per_unit=2)
    sp = build_space(cfg)
    a1, a2 = kernel_Q(cfg, 1.0, sp)
    b1, b2 = kernel_Qh(cfg, 1.0, 0.0, sp)
    assert np.array_equal(a1.values, b1.values) and np.array_equal(a2.values, b2.values)
    assert a2.is_symmetric()
    assert kernel_Qh(cfg, 1.0, 0.5, sp)[1].is_symmetric()
    with pytest.raises(ValidationError):
        kernel_Qh(cfg, 1.0, 1.0, sp)


def test_variance_normalization_refines():
    errs = []
    for cpu in (4, 8, 16):
        cfg = OUConfig((1.0,), 5.0, cells_per_unit=cpu)
        f = kernel_Y(cfg, 1.0, 3.0)
        errs.append(abs(inner_product(f, f) - 1.0))
    assert errs[0] < 0.02
    assert errs[2] < errs[1] < errs[0]


def test_g_A_norm_refinement():
    vals = []
    for cpu in (2, 4, 8):
        cfg = OUConfig((1.5,), 20.0, cells_per_unit=cpu)
        g = kernel_A(cfg, 1.5)
        vals.append(inner_product(g, g))
    exact = cov_exact(OUConfig((1.5,), 20.0), "A", 0, 0)
    assert abs(vals[0] - exact) > abs(vals[1] - exact) > abs(vals[2] - exact)
    assert abs(vals[2] - exact) < 1e-3


def test_cov_exact_examples():
    huge = OUConfig((2.0, 2.0), 1e12)
    assert cov_exact(huge, "A", 0, 1) == pytest.approx(1.0, rel=1e-9)
    q = OUConfig((1.0,), 1e12)
    assert cov_exact(q, "Q", 0, 0) == pytest.approx(3.0, rel=1e-9)
    for T in (1.0, 10.0, 333.0):
        cfg = OUConfig((1.0, 3.0), T, h=0.0)
        assert cov_exact(cfg, "Qh", 0, 1) == cov_exact(cfg, "Q", 0, 1)
    with pytest.raises(ValidationError):
        cov_exact(q, "Q", 0, 1)
    with pytest.raises(ValidationError):
        cov_exact(q, "B", 0, 0)


def test_cov_exact_matches_grid_quadrature():
    # independent check: the closed forms against inner products of the kernels on a fine grid
    cfg = OUConfig((1.0, 2.5), 15.0, mark_atoms=SKEWED, cells_per_unit=16)
    sp = build_space(cfg)
    gA = [kernel_A(cfg, lam, sp) for lam in cfg.lambdas]
    kq = [kernel_Q(cfg, lam, sp) for lam in cfg.lambdas]
    for i in range(2):
        for j in range(2):
            assert inner_product(gA[i], gA[j]) == pytest.approx(cov_exact(cfg, "A", i, j), rel=2e-3)
            single = inner_product(kq[i][0], kq[j][0])
            assert single == pytest.approx(cov_exact(cfg, "Q", i, j, "single"), rel=2e-3)
            double = 2 * inner_product(kq[i][1], kq[j][1])
            # midpoint bias at the diagonal kink is O(lambda dx)
            assert double == pytest.approx(cov_exact(cfg, "Q", i, j, "double"), rel=0.05)


@pytest.mark.parametrize("which,lams,h", [("A", (1.0, 4.0), 0.0), ("Q", (1.0, 2.0), 0.0), ("Qh", (1.0, 2.0), 0.5)])
def test_cov_exact_error_is_order_one_over_T(which, lams, h):
    cfg = OUConfig(lams, 10.0, h=h)
    lim = cov_limit(cfg, which).entries
    errs = [np.abs(np.array([[cov_exact(cfg.with_T(T), which, i, j) for j in range(2)] for i in range(2)]) - lim)
            for T in (10.0, 100.0, 1000.0)]
    for a, b in zip(errs, errs[1:]):
        assert np.all((a / b >= 8) & (a / b <= 12))


def test_cov_limit_examples():
    B = cov_limit(OUConfig((1.0, 4.0), 10.0), "A")
    assert np.allclose(B.entries, [[2.0, 1.0], [1.0, 0.5]])
    assert B.is_nonneg_definite and not B.is_positive_definite
    C = cov_limit(OUConfig((1.0, 2.0), 10.0), "Q")
    assert np.allclose(C.entries, 4.0 / np.add.outer([1.0, 2.0], [1.0, 2.0]) + 1.0)
    E0 = cov_limit(OUConfig((1.0, 2.0), 10.0, h=0.0), "Qh")
    assert np.array_equal(E0.entries, C.entries)
    E = cov_limit(OUConfig((1.0, 2.0), 10.0, h=0.5), "Qh", block=True)
    assert E.d == 4 and np.all(E.entries[:2, 2:] == 0)
    assert E.entries[0, 1] == pytest.approx(math.exp(-1.5))
    with pytest.raises(ValidationError):
        cov_limit(OUConfig((1.0,), 10.0), "A", block=True)


def test_cross_term_limit():
    assert cross_term_limit(1.0, 2.0, 0.0) == pytest.approx(4.0 / 3.0)
    # continuous in lambda_j -> lambda_i
    assert cross_term_limit(1.0, 1.0 + 1e-7, 0.7) == pytest.approx(cross_term_limit(1.0, 1.0, 0.7), rel=1e-6)
    assert cross_term_limit(2.0, 1.0, 0.4) == pytest.approx(cross_term_limit(1.0, 2.0, 0.4))


def test_symmetrized_shift_limit_matches_grid():
    cfg = OUConfig((1.0,), 60.0, h=0.5, cells_per_unit=8)
    _, double = kernel_Qh(cfg, 1.0)
    grid_var = 2 * inner_product(double, double)
    sym = cov_limit(cfg, "Qh", block=True, symmetrized=True).entries[1, 1]
    raw = cov_limit(cfg, "Qh", block=True).entries[1, 1]
    assert abs(grid_var - sym) < 0.03
    assert abs(grid_var - raw) > 0.2


def test_component_kernels_layout():
    cfg = OUConfig((1.0, 2.0), 5.0, cells_per_unit=2)
    assert [f.order for f in component_kernels(cfg, "A")] == [1, 1]
    assert [f.order for f in component_kernels(cfg, "Q")] == [1, 1, 2, 2]


def test_rate_experiment_small():
    cfg = OUConfig((1.0,), 25.0, mark_atoms=SKEWED, cells_per_unit=2)
    table = rate_experiment(cfg, [25.0, 50.0, 100.0])
    assert len(table.rows) == 15
    for (lam, name), slope in table.slopes.items():
        assert -0.6 <= slope <= -0.4, name
    vals = {(T, n): v for T, _, n, v in table.rows}
    for name in {n for _, n in vals}:
        ratio = vals[(50.0, name)] / vals[(25.0, name)]
        assert 0.65 <= ratio <= 0.75, name
    with pytest.raises(ValidationError):
        rate_experiment(cfg, [25.0], which="A")


def test_rate_e_vanishes_for_symmetric_marks():
    cfg = OUConfig((1.0,), 25.0, cells_per_unit=2)
    table = rate_experiment(cfg, [25.0, 50.0])
    e = [v for _, _, n, v in table.rows if n.startswith("e")]
    assert max(e) < 1e-12
    assert math.isnan(table.slopes[(1.0, table.rows[4][2])])


def test_shifted_rates_at_zero_shift():
    cfg = OUConfig((1.0,), 25.0, h=0.0, mark_atoms=SKEWED, cells_per_unit=2)
    a = rate_experiment(cfg, [25.0, 50.0], "Q")
    b = rate_experiment(cfg, [25.0, 50.0], "Qh")
    for ra, rb in zip(a.rows, b.rows):
        assert ra[3] == pytest.approx(rb[3], rel=1e-10, abs=1e-300)


def test_fit_slope():
    T = np.array([10.0, 20.0, 40.0])
    assert fit_slope(T, 3 * T**-0.5) == pytest.approx(-0.5)
