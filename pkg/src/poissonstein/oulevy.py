"""Ornstein-Uhlenbeck Levy examples: kernels, covariances, rates and demos.

The state space is marks x time, discretized into (atom, x-interval) cells of
weight mass(atom) * dx. Three functionals of the stationary process Y^lambda
are covered:

* ``A``: sqrt(T) * time average of Y, a first-chaos vector;
* ``Q``: sqrt(T) * (time average of Y^2 - 1), first plus second chaos;
* ``Qh``: sqrt(T) * (time average of Y_t Y_{t+h} - e^{-lambda h}).
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .algebra import contraction_norm, symmetrize
from .bounds import CovMatrix, assemble_d3, single_double_bound
from .errors import ValidationError
from .simulate import (
    DEFAULT_SEED,
    covariance_from_values,
    diag_free_projection,
    discrepancy_from_values,
    eval_multiple_integral,
    make_test_family,
    sample_counts,
)
from .space import DiscreteSpace, Kernel, inner_product, lp_norm

WHICH = ("A", "Q", "Qh")


@dataclass(frozen=True)
class OUConfig:
    lambdas: tuple
    T: float
    h: float = 0.0
    x_min: float | None = None
    nx: int | None = None
    cells_per_unit: float = 4.0
    mark_atoms: tuple = ((1.0, 0.5), (-1.0, 0.5))
    seed: int = DEFAULT_SEED
    reps: int = 10000

    def __post_init__(self):
        lams = tuple(float(x) for x in np.atleast_1d(self.lambdas))
        if not lams or any(not (x > 0 and math.isfinite(x)) for x in lams):
            raise ValidationError(f"lambdas must be positive and finite, got {self.lambdas!r}")
        if not self.T > 0:
            raise ValidationError(f"T must be positive, got {self.T!r}")
        if self.h < 0:
            raise ValidationError(f"h must be nonnegative, got {self.h!r}")
        atoms = tuple((float(u), float(w)) for u, w in self.mark_atoms)
        if not atoms or any(w <= 0 for _, w in atoms):
            raise ValidationError("mark atoms need positive masses")
        second = sum(u * u * w for u, w in atoms)
        if second <= 0:
            raise ValidationError("mark distribution has zero second moment")
        if abs(second - 1.0) > 1e-12:
            s = math.sqrt(second)
            atoms = tuple((u / s, w) for u, w in atoms)
        object.__setattr__(self, "lambdas", lams)
        object.__setattr__(self, "mark_atoms", atoms)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "h", float(self.h))
        if self.x_min is None:
            # keep x = 0 on a cell boundary
            steps = math.ceil(20.0 / min(lams) * self.cells_per_unit)
            object.__setattr__(self, "x_min", -steps / self.cells_per_unit)
        elif not self.x_min < 0:
            raise ValidationError(f"x_min must be negative, got {self.x_min!r}")
        if self.nx is None:
            object.__setattr__(self, "nx", max(1, round((self.x_max - self.x_min) * self.cells_per_unit)))

    @property
    def d(self) -> int:
        return len(self.lambdas)

    @property
    def x_max(self) -> float:
        return self.T + self.h

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def third_moment(self) -> float:
        return sum(u**3 * w for u, w in self.mark_atoms)

    @property
    def c_nu2(self) -> float:
        return sum(u**4 * w for u, w in self.mark_atoms)

    def with_T(self, T: float) -> "OUConfig":
        """Same per-unit-time mesh at a new horizon."""
        return replace(self, T=float(T), nx=None)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["mark_atoms"] = [list(a) for a in self.mark_atoms]
        out["lambdas"] = list(self.lambdas)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "OUConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValidationError(f"unknown OU config fields {sorted(unknown)}")
        doc = dict(doc)
        if "mark_atoms" in doc:
            doc["mark_atoms"] = tuple(tuple(a) for a in doc["mark_atoms"])
        return cls(**doc)


def grid(cfg: OUConfig) -> tuple[np.ndarray, np.ndarray]:
    """Mark value and x-midpoint of every cell, atom-major order."""
    mids = cfg.x_min + (np.arange(cfg.nx) + 0.5) * cfg.dx
    u = np.repeat([a for a, _ in cfg.mark_atoms], cfg.nx)
    x = np.tile(mids, len(cfg.mark_atoms))
    return u, x


def build_space(cfg: OUConfig) -> DiscreteSpace:
    w = np.repeat([mass for _, mass in cfg.mark_atoms], cfg.nx) * cfg.dx
    return DiscreteSpace(w)


def mesh_diagnostics(cfg: OUConfig) -> dict:
    lam = min(cfg.lambdas)
    return {
        "cells": cfg.nx * len(cfg.mark_atoms),
        "nx": cfg.nx,
        "dx": cfg.dx,
        "x_min": cfg.x_min,
        "x_max": cfg.x_max,
        "truncated_mass_bound": math.exp(2.0 * lam * cfg.x_min),
        "c_nu2": cfg.c_nu2,
        "mark_third_moment": cfg.third_moment,
    }


# pointwise kernel formulas; every exponent is kept <= 0 to avoid overflow


def g_A(u, x, lam: float, T: float):
    """u * sqrt(2 lam / T) * int_{max(x,0)}^T exp(-lam (t - x)) dt for x <= T."""
    u, x = np.broadcast_arrays(np.asarray(u, float), np.asarray(x, float))
    inner = np.where(x <= 0, np.exp(lam * np.minimum(x, 0.0)) * -np.expm1(-lam * T),
                     -np.expm1(-lam * (T - np.clip(x, 0.0, T))))
    return np.where(x <= T, u * math.sqrt(2.0 * lam / T) * inner / lam, 0.0)


def f_Y(u, x, lam: float, t: float):
    """Kernel of Y_t: sqrt(2 lam) u exp(-lam (t - x)) 1{x <= t}."""
    u, x = np.broadcast_arrays(np.asarray(u, float), np.asarray(x, float))
    return np.where(x <= t, math.sqrt(2.0 * lam) * u * np.exp(-lam * np.maximum(t - x, 0.0)), 0.0)


def h_star(u, x, lam: float, T: float, h: float = 0.0):
    """u^2 1{x <= T} / T * e^{lam (2x - h)} [(e^{-2 lam max(x,0)} - e^{-2 lam T})]."""
    u, x = np.broadcast_arrays(np.asarray(u, float), np.asarray(x, float))
    xc = np.minimum(x, T)
    pos = np.exp(-lam * h) - np.exp(lam * (2.0 * xc - h - 2.0 * T))
    neg = np.exp(lam * (2.0 * np.minimum(xc, 0.0) - h)) * -np.expm1(-2.0 * lam * T)
    val = np.where(xc > 0, pos, neg)
    return np.where(x <= T, u * u * val / T, 0.0)


def h_pair(u, x, u2, x2, lam: float, T: float, h: float = 0.0):
    """The order-2 kernel of the shifted quadratic functional.

    uu' 1{x <= T} 1{x' <= T+h} / T * e^{lam (x + y)} [e^{-2 lam max(x, y)} - e^{-2 lam T}]
    with y = x' - h, and e^{-2 lam max(x,y)} read as 1 when max(x, y) <= 0.
    """
    y = np.asarray(x2, float) - h
    return _h_pair_core(u, x, u2, y, lam, T) * (np.asarray(x2, float) <= T + h)


def _h_pair_core(u, x, u2, y, lam, T):
    u, x, u2, y = np.broadcast_arrays(*(np.asarray(a, float) for a in (u, x, u2, y)))
    xc = np.minimum(x, T)
    yc = np.minimum(y, T)
    mx = np.maximum(xc, yc)
    s = xc + yc
    pos = np.exp(lam * (s - 2.0 * mx)) - np.exp(lam * (s - 2.0 * T))
    neg = np.exp(lam * np.minimum(s, 0.0)) * -np.expm1(-2.0 * lam * T)
    val = np.where(mx > 0, pos, neg)
    return np.where((x <= T) & (y <= T), u * u2 * val / T, 0.0)


def kernel_Y(cfg: OUConfig, lam: float, t: float, space: DiscreteSpace | None = None) -> Kernel:
    u, x = grid(cfg)
    return Kernel._wrap(space or build_space(cfg), f_Y(u, x, lam, t), True)


def kernel_A(cfg: OUConfig, lam: float, space: DiscreteSpace | None = None) -> Kernel:
    u, x = grid(cfg)
    return Kernel._wrap(space or build_space(cfg), g_A(u, x, lam, cfg.T), True)


def kernel_Qh(cfg: OUConfig, lam: float, h: float | None = None, space: DiscreteSpace | None = None):
    """(sqrt(T) H^{*,h}, sqrt(T) sym H^h) on the cell midpoints."""
    h = cfg.h if h is None else float(h)
    if h > cfg.h + 1e-12:
        raise ValidationError(f"shift h={h} exceeds the grid extension cfg.h={cfg.h}")
    space = space or build_space(cfg)
    u, x = grid(cfg)
    rt = math.sqrt(cfg.T)
    single = Kernel._wrap(space, rt * h_star(u, x, lam, cfg.T, h), True)
    pair = rt * h_pair(u[:, None], x[:, None], u[None, :], x[None, :], lam, cfg.T, h)
    double = symmetrize(Kernel._wrap(space, pair)) if h > 0 else Kernel._wrap(space, (pair + pair.T) / 2.0, True)
    return single, double


def kernel_Q(cfg: OUConfig, lam: float, space: DiscreteSpace | None = None):
    """(sqrt(T) H*, sqrt(T) H) on the cell midpoints."""
    return kernel_Qh(cfg, lam, 0.0, space)


def _one_minus_exp(a):
    return -math.expm1(-a)


def cov_exact(cfg: OUConfig, which: str, i: int, j: int, part: str = "total") -> float:
    """Finite-T covariance of components i, j from the closed-form integrals.

    ``part`` selects the first-chaos ("single") or second-chaos ("double")
    contribution for Q and Qh. For Qh the double part is 2T <H^h_i, H^h_j>,
    the unsymmetrized kernel product, which equals the Q value.
    """
    if which not in WHICH:
        raise ValidationError(f"which must be one of {WHICH}, got {which!r}")
    if not (0 <= i < cfg.d and 0 <= j < cfg.d):
        raise ValidationError(f"component index out of range for d={cfg.d}: ({i}, {j})")
    li, lj, T = cfg.lambdas[i], cfg.lambdas[j], cfg.T
    L = li + lj
    if which == "A":
        ei, ej = _one_minus_exp(li * T), _one_minus_exp(lj * T)
        bracket = ei * ej / L + T - ei / li - ej / lj + _one_minus_exp(L * T) / L
        return 2.0 / (T * math.sqrt(li * lj)) * bracket
    ei, ej = _one_minus_exp(2 * li * T), _one_minus_exp(2 * lj * T)
    tail = T - ei / (2 * li) - ej / (2 * lj) + _one_minus_exp(2 * L * T) / (2 * L)
    single = cfg.c_nu2 / T * (ei * ej / (2 * L) + tail)
    double = 2.0 / T * (ei * ej / L**2 + 2.0 / L * tail)
    if which == "Qh":
        single *= math.exp(-L * cfg.h)
    if part == "single":
        return single
    if part == "double":
        return double
    if part == "total":
        return single + double
    raise ValidationError(f"part must be 'single', 'double' or 'total', got {part!r}")


def cross_term_limit(li: float, lj: float, h: float) -> float:
    """Limit of 2T <H^h_i, (H^h_j)^T>, the transpose overlap of the shifted kernels."""
    L = li + lj
    if h == 0:
        return 4.0 / L
    diff = lj - li
    middle = 2.0 * h if abs(diff) < 1e-300 else 2.0 * math.sinh(diff * h) / diff
    return 2.0 * ((math.exp(-2 * li * h) + math.exp(-2 * lj * h)) / L + math.exp(-L * h) * middle)


def cov_limit(cfg: OUConfig, which: str, block: bool = False, symmetrized: bool = False) -> CovMatrix:
    """Limit covariance: B (A), C (Q) or E (Qh); ``block`` gives the 2d chaos-split matrix.

    ``symmetrized`` applies to Qh only: the second-chaos block then uses the
    symmetrized shifted kernel, whose limit is 2/(li+lj) + cross_term_limit/2.
    """
    if which not in WHICH:
        raise ValidationError(f"which must be one of {WHICH}, got {which!r}")
    lam = np.asarray(cfg.lambdas)
    L = lam[:, None] + lam[None, :]
    if which == "A":
        if block:
            raise ValidationError("the A functional has no chaos split")
        return CovMatrix(2.0 / np.sqrt(lam[:, None] * lam[None, :]))
    h = cfg.h if which == "Qh" else 0.0
    single = cfg.c_nu2 * np.exp(-L * h)
    double = 4.0 / L
    if which == "Qh" and symmetrized and h > 0:
        cross = np.array([[cross_term_limit(a, b, h) for b in lam] for a in lam])
        double = 2.0 / L + cross / 2.0
    if not block:
        return CovMatrix(single + double)
    d = cfg.d
    out = np.zeros((2 * d, 2 * d))
    out[:d, :d] = single
    out[d:, d:] = double
    return CovMatrix(out)


def component_kernels(cfg: OUConfig, which: str, space: DiscreteSpace | None = None) -> list[Kernel]:
    """Kernels of the vector used for bounds: A -> d first-chaos kernels,
    Q/Qh -> d first-chaos kernels followed by d second-chaos kernels."""
    space = space or build_space(cfg)
    if which == "A":
        return [kernel_A(cfg, lam, space) for lam in cfg.lambdas]
    h = cfg.h if which == "Qh" else 0.0
    pairs = [kernel_Qh(cfg, lam, h, space) for lam in cfg.lambdas]
    return [s for s, _ in pairs] + [dbl for _, dbl in pairs]


RATE_QUANTITIES = (
    "a: L3 norm cubed of single kernel",
    "b: L4 norm squared of double kernel",
    "c: norm of double star_2^1 double",
    "d: norm of double star_1^1 double",
    "e: norm of single star_1^1 double",
)


# quantities below this are roundoff of an identically zero norm
VANISHING = 1e-12


def rate_quantities(single: Kernel, double: Kernel) -> list[float]:
    return [
        lp_norm(single, 3) ** 3,
        lp_norm(double, 4) ** 2,
        contraction_norm(double, double, 2, 1),
        contraction_norm(double, double, 1, 1),
        contraction_norm(single, double, 1, 1),
    ]


def fit_slope(T_values, y_values) -> float:
    x = np.log(np.asarray(T_values, float))
    y = np.log(np.asarray(y_values, float))
    return float(np.polyfit(x, y, 1)[0])


@dataclass
class RateTable:
    which: str
    rows: list  # (T, lambda, quantity, value)
    slopes: dict  # (lambda, quantity) -> slope
    mesh: list = field(default_factory=list)

    def csv_rows(self):
        for T, lam, name, val in self.rows:
            yield [T, lam, name, val, self.slopes[(lam, name)]]


def rate_experiment(cfg: OUConfig, T_grid, which: str = "Q") -> RateTable:
    """Quantities (a)-(e) for every T and lambda, with log-log slopes in T."""
    if which not in ("Q", "Qh"):
        raise ValidationError("rate experiments apply to the Q and Qh functionals")
    rows, mesh = [], []
    for T in T_grid:
        c = cfg.with_T(T)
        space = build_space(c)
        mesh.append({"T": float(T), **mesh_diagnostics(c)})
        for lam in c.lambdas:
            single, double = kernel_Qh(c, lam, c.h if which == "Qh" else 0.0, space)
            for name, val in zip(RATE_QUANTITIES, rate_quantities(single, double)):
                rows.append((float(T), lam, name, val))
            del single, double
    slopes = {}
    for lam in cfg.lambdas:
        for name in RATE_QUANTITIES:
            pts = [(T, v) for T, l, n, v in rows if l == lam and n == name]
            vals = [p[1] for p in pts]
            if min(vals) <= VANISHING:
                # e.g. quantity (e) when the marks have zero third moment
                slopes[(lam, name)] = float("nan")
            else:
                slopes[(lam, name)] = fit_slope([p[0] for p in pts], vals)
    return RateTable(which, rows, slopes, mesh)


def bound_trajectory(cfg: OUConfig, T_grid, which: str = "Q", symmetrized: bool = True) -> dict:
    """Analytic d3 bound of the chaos-split vector against its limit, per T."""
    out = {"T": [], "d3_bound": [], "term_sq_sum": [], "cubic_term": []}
    for T in T_grid:
        c = cfg.with_T(T)
        kernels = component_kernels(c, which)
        if which == "A":
            target = cov_limit(c, "A")
        else:
            target = cov_limit(c, which, block=True, symmetrized=symmetrized)
        rep = assemble_d3(kernels, target, "analytic")
        out["T"].append(float(T))
        out["d3_bound"].append(rep.d3_bound)
        out["term_sq_sum"].append(rep.term_sq_sum)
        out["cubic_term"].append(rep.cubic_term)
    out["slope"] = fit_slope(out["T"], out["d3_bound"]) if len(out["T"]) > 1 else None
    return out


def simulate_functionals(cfg: OUConfig, which: str, reps: int | None = None, seed: int | None = None,
                         workers: int = 1) -> dict:
    """Simulate the chaos-split vector and the d-dimensional functional.

    Second-chaos kernels are projected onto diagonal-free kernels; the lost
    variance is reported. Returns per-replication values of the split vector
    ("split", R x 2d or R x d for A) and the functional ("values", R x d).
    """
    reps = cfg.reps if reps is None else reps
    seed = cfg.seed if seed is None else seed
    space = build_space(cfg)
    kernels = component_kernels(cfg, which, space)
    simulated, lost = [], []
    for f in kernels:
        proj, mass = diag_free_projection(f)
        simulated.append(proj)
        lost.append(math.factorial(f.order) * mass)
    batch = sample_counts(space, reps, seed, workers=workers)
    split = np.column_stack([eval_multiple_integral(f, batch, check=False) for f in simulated])
    d = cfg.d
    values = split if which == "A" else split[:, :d] + split[:, d:]
    return {"space": space, "kernels": simulated, "discarded_variance": lost, "split": split, "values": values}


def _sum_map(d: int) -> np.ndarray:
    return np.hstack([np.eye(d), np.eye(d)])


def clt_demo(cfg: OUConfig, which: str, T_grid=None, reps: int | None = None, seed: int | None = None,
             workers: int = 1, family_size: int = 64, sim_cells_per_unit: float | None = None) -> dict:
    """End-to-end check for one functional: covariances, bounds, simulation, discrepancy."""
    if which not in WHICH:
        raise ValidationError(f"which must be one of {WHICH}, got {which!r}")
    t0 = time.perf_counter()
    d = cfg.d
    exact = np.array([[cov_exact(cfg, which, i, j) for j in range(d)] for i in range(d)])
    limit = cov_limit(cfg, which, symmetrized=True)
    report = {
        "version": __version__,
        "which": which,
        "config": cfg.to_dict(),
        "mesh": mesh_diagnostics(cfg),
        "cov_exact": exact.tolist(),
        "cov_limit": limit.entries.tolist(),
    }
    if which == "Qh":
        report["cov_limit_unsymmetrized"] = cov_limit(cfg, "Qh").entries.tolist()

    sim_cfg = cfg if sim_cells_per_unit is None else replace(cfg, cells_per_unit=sim_cells_per_unit, nx=None, x_min=None)
    report["sim_mesh"] = mesh_diagnostics(sim_cfg)
    sim = simulate_functionals(sim_cfg, which, reps, seed, workers)
    report["discarded_variance"] = sim["discarded_variance"]
    est = covariance_from_values(sim["values"])
    report["cov_empirical"] = est.matrix.tolist()
    report["cov_empirical_se"] = est.se.tolist()

    # bound for exactly the simulated vector, against the limit covariance
    if which == "A":
        target = limit
        bound = assemble_d3(sim["kernels"], target, "analytic")
    else:
        target = cov_limit(cfg, which, block=True, symmetrized=True)
        bound = assemble_d3(sim["kernels"], target, "analytic")
        report["single_double_bound"] = list(
            _single_double(sim["kernels"][:d], sim["kernels"][d:], target)
        )
    report["bound"] = bound.to_dict()
    split = sim["split"]
    family = make_test_family(split.shape[1], family_size)
    disc = discrepancy_from_values(split, target, family)
    report["discrepancy"] = {
        "value": disc.value,
        "se": disc.se,
        "index": disc.index,
        "label": disc.label,
        "sound": bool(disc.value <= bound.d3_bound + 4.0 * disc.se),
    }
    if which != "A":
        # the same bound holds for the summed functional: each split component feeds one sum
        fam_sum = make_test_family(d, family_size)
        disc_sum = discrepancy_from_values(sim["values"], _sum_map(d) @ target.entries @ _sum_map(d).T, fam_sum)
        report["discrepancy_functional"] = {"value": disc_sum.value, "se": disc_sum.se, "label": disc_sum.label}
    vals = sim["values"]
    z = (vals - vals.mean(axis=0)) / vals.std(axis=0)
    report["standardized_moments"] = {
        "skewness": (z**3).mean(axis=0).tolist(),
        "kurtosis": (z**4).mean(axis=0).tolist(),
    }
    report["replications"] = int(vals.shape[0])
    report["seed"] = int(cfg.seed if seed is None else seed)
    if T_grid:
        report["bound_trajectory"] = bound_trajectory(cfg, T_grid, which)
    report["elapsed_seconds"] = time.perf_counter() - t0
    return report


def _single_double(g_list, h_list, target):
    res = single_double_bound(g_list, h_list, target)
    return res.first, res.second
