"""Command-line entry point: ``poissonstein <command> [options]``.

Exit status is 0 on success, 2 on invalid input and 3 when a numerical
guard (memory or evaluation budget) trips.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import io as fileio
from .algebra import g_hat_operator, product_expand, star_contract, symmetrize
from .bounds import CovMatrix, assemble_d3, clt_conditions
from .chaos import ChaosExpansion
from .errors import NumericalGuardError, ValidationError
from .simulate import (
    DEFAULT_SEED,
    chaos_discarded_mass,
    covariance_from_values,
    diag_free_projection,
    discrepancy_from_values,
    eval_chaos,
    make_test_family,
    sample_counts,
)
from .space import Kernel, Tolerance, inner_product, lp_norm

EXIT_OK, EXIT_INVALID, EXIT_GUARD = 0, 2, 3
OUT_ENV = "POISSONSTEIN_OUT"


def data_path(name: str) -> Path:
    return Path(str(resources.files("poissonstein") / "data" / name))


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _marks(text: str) -> list[tuple[float, float]]:
    try:
        return [tuple(float(y) for y in pair.split(":")) for pair in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected value:mass pairs, got {text!r}") from None


def _seed(text: str) -> int:
    return int(text, 0)


def _fmt(x) -> str:
    return format(x, ".6g") if isinstance(x, float) else str(x)


class Run:
    """Shared state of one invocation: output directory, tolerance, provenance."""

    def __init__(self, args):
        self.args = args
        out = args.out_dir or os.environ.get(OUT_ENV) or "poissonstein-out"
        self.out = Path(out)
        try:
            self.out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ValidationError(f"--out-dir {self.out}: not writable ({exc})") from None
        if not os.access(self.out, os.W_OK):
            raise ValidationError(f"--out-dir {self.out}: not writable")
        self.tol = Tolerance(args.atol, args.rtol)
        self.formats = {"csv", "json"} if args.format == "both" else {args.format}

    def provenance(self) -> dict:
        # worker count is an execution detail and never changes results
        cfg = {k: v for k, v in vars(self.args).items() if k not in ("func", "workers", "out_dir")}
        return {"version": __version__, "seed": self.args.seed, "config": cfg}

    def write_json(self, name: str, doc: dict):
        if "json" in self.formats:
            fileio.write_json(self.out / name, {**self.provenance(), **doc})

    def write_csv(self, name: str, header, rows):
        if "csv" in self.formats:
            fileio.write_csv(self.out / name, header, rows)

    def load_kernel(self, path, space=None) -> Kernel:
        f = fileio.load_kernel(path, space, require_symmetric=False)
        if not f.is_symmetric(self.tol):
            raise ValidationError(f"{path}: kernel of order {f.order} is not symmetric")
        return f


def _space_diagnostics(space) -> dict:
    return {"cells": space.cell_count, "total_mass": space.total_mass}


def _load_cov(run: Run, d: int) -> CovMatrix:
    args = run.args
    if args.cov is None:
        return CovMatrix.identity(d)
    doc = fileio.read_json(args.cov)
    entries = doc.get("C") if isinstance(doc, dict) else doc
    if entries is None:
        raise ValidationError(f"{args.cov}: covariance document needs field 'C'")
    try:
        C = CovMatrix(entries)
    except ValidationError as exc:
        raise ValidationError(f"{args.cov}: {exc}") from None
    if C.d != d:
        raise ValidationError(f"{args.cov}: C is {C.d}x{C.d} but {d} components were given")
    return C


def cmd_algebra(run: Run) -> int:
    a = run.args
    f = run.load_kernel(a.f or data_path("sample_f.json"))
    g = run.load_kernel(a.g or data_path("sample_g.json"), f.space) if a.op in ("contract", "ghat", "product", "inner") else None
    if a.op == "contract":
        out = star_contract(f, g, a.r, a.l)
    elif a.op == "symmetrize":
        out = symmetrize(f)
    elif a.op == "ghat":
        out = g_hat_operator(f, g, a.k, method=a.method)
    elif a.op == "inner":
        out = Kernel.scalar(f.space, inner_product(f, g))
    elif a.op == "norm":
        out = Kernel.scalar(f.space, lp_norm(f, a.exponent))
    else:  # product
        terms = product_expand(f, g)
        for k, gk in terms:
            print(f"order {k}: " + " ".join(_fmt(float(x)) for x in gk.values.reshape(-1)))
        run.write_json("algebra.json", {"op": a.op, "terms": {str(k): fileio.kernel_to_document(gk) for k, gk in terms}})
        return EXIT_OK
    print(" ".join(_fmt(float(x)) for x in out.values.reshape(-1)))
    run.write_json("algebra.json", {"op": a.op, "result": fileio.kernel_to_document(out)})
    return EXIT_OK


def _load_components(run: Run) -> list[ChaosExpansion]:
    a = run.args
    comps, space = [], None
    for path in a.kernels or []:
        f = run.load_kernel(path, space)
        if space is not None and f.space != space:
            raise ValidationError(f"{path}: weights differ from the other components")
        space = f.space
        comps.append(ChaosExpansion.multiple_integral(f))
    for path in a.expansions or []:
        F = fileio.load_expansion(path)
        if space is not None and F.space != space:
            raise ValidationError(f"{path}: weights differ from the other components")
        space = F.space
        comps.append(F)
    if not comps:
        raise ValidationError("give at least one --kernels or --expansions file")
    return comps


def cmd_bound(run: Run) -> int:
    a = run.args
    comps = _load_components(run)
    C = _load_cov(run, len(comps))
    batch = sample_counts(comps[0].space, a.reps, a.seed, a.workers) if a.mode == "montecarlo" else None
    rep = assemble_d3(comps, C, a.mode, batch)
    doc = rep.to_dict()
    run.write_json("bound_report.json", {"mesh": _space_diagnostics(comps[0].space), "bound": doc, "C": C.entries})
    rows = [[f"pair_term[{i},{j}]", v] for (i, j), v in np.ndenumerate(rep.per_pair_detail)]
    rows += [["term_sq_sum", rep.term_sq_sum], ["cubic_term", rep.cubic_term], ["d3_bound", rep.d3_bound]]
    if rep.d2_bound is not None:
        rows.append(["d2_bound", rep.d2_bound])
    run.write_csv("bound_report.csv", ["quantity", "value"], rows)
    print(f"d3 bound {_fmt(rep.d3_bound)}" + ("" if rep.d2_bound is None else f", d2 bound {_fmt(rep.d2_bound)}"))
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    a = run.args
    comps = _load_components(run)
    projected = []
    lost = []
    for F in comps:
        lost.append(chaos_discarded_mass(F))
        projected.append(F.map_kernels(lambda k, f: diag_free_projection(f)[0]))
    batch = sample_counts(comps[0].space, a.reps, a.seed, a.workers)
    values = np.column_stack([eval_chaos(F, batch) for F in projected])
    d = values.shape[1]
    est = covariance_from_values(values)
    summary = {
        "mesh": _space_diagnostics(comps[0].space),
        "replications": a.reps,
        "mean": values.mean(axis=0),
        "cov": est.matrix,
        "cov_se": est.se,
        "discarded_squared_mass": lost,
    }
    rows = [["mean", f"F{i + 1}", "", float(values[:, i].mean()), float(values[:, i].std(ddof=1) / math.sqrt(a.reps))]
            for i in range(d)]
    rows += [["cov", f"F{i + 1}", f"F{j + 1}", est.matrix[i, j], est.se[i, j]] for i in range(d) for j in range(d)]
    if a.cov is not None:
        C = _load_cov(run, d)
        disc = discrepancy_from_values(values, C, make_test_family(d, a.family_size))
        summary["discrepancy"] = {"value": disc.value, "se": disc.se, "index": disc.index, "label": disc.label}
        rows.append(["discrepancy", "", "", disc.value, disc.se])
    run.write_csv("values.csv", ["replication"] + [f"F{i + 1}" for i in range(d)],
                  ([r] + list(v) for r, v in enumerate(values)))
    run.write_csv("summary.csv", ["statistic", "row", "col", "value", "standard_error"], rows)
    run.write_json("summary.json", summary)
    print(f"simulated {a.reps} replications of {d} components; means " + " ".join(_fmt(float(x)) for x in values.mean(axis=0)))
    return EXIT_OK


def _ou_config(run: Run):
    from .oulevy import OUConfig

    a = run.args
    doc = fileio.read_json(a.config) if a.config else {}
    for key in ("lambdas", "T", "h", "cells_per_unit", "x_min", "nx"):
        val = getattr(a, key, None)
        if val is not None:
            doc[key] = val
    if getattr(a, "marks", None):
        doc["mark_atoms"] = a.marks
    doc["seed"] = a.seed
    if getattr(a, "reps", None) is not None:
        doc["reps"] = a.reps
    if "lambdas" not in doc:
        raise ValidationError("give --lambdas or a --config file with field 'lambdas'")
    doc.setdefault("T", 100.0)
    try:
        return OUConfig.from_dict(doc)
    except (TypeError, ValidationError) as exc:
        where = a.config or "OU options"
        raise ValidationError(f"{where}: {exc}") from None


def cmd_ou_demo(run: Run) -> int:
    from .oulevy import clt_demo

    a = run.args
    cfg = _ou_config(run)
    rep = clt_demo(cfg, a.which, T_grid=a.T_grid, workers=a.workers, family_size=a.family_size,
                   sim_cells_per_unit=a.sim_cells_per_unit)
    elapsed = rep.pop("elapsed_seconds")
    run.write_json("ou_demo_report.json", rep)
    d = cfg.d
    rows = []
    for i in range(d):
        for j in range(d):
            rows.append([i, j, rep["cov_exact"][i][j], rep["cov_limit"][i][j],
                         rep["cov_empirical"][i][j], rep["cov_empirical_se"][i][j]])
    run.write_csv("covariance.csv", ["i", "j", "exact", "limit", "empirical", "empirical_se"], rows)
    b = rep["bound"]
    brows = [["d3_bound", b["d3_bound"]], ["term_sq_sum", b["term_sq_sum"]], ["cubic_term", b["cubic_term"]],
             ["discrepancy", rep["discrepancy"]["value"]], ["discrepancy_se", rep["discrepancy"]["se"]]]
    if "bound_trajectory" in rep:
        tr = rep["bound_trajectory"]
        brows += [[f"d3_bound[T={T:g}]", v] for T, v in zip(tr["T"], tr["d3_bound"])]
        if tr["slope"] is not None:
            brows.append(["d3_bound_slope", tr["slope"]])
    run.write_csv("bound.csv", ["quantity", "value"], brows)
    print(f"{a.which}: d3 bound {_fmt(b['d3_bound'])}, discrepancy {_fmt(rep['discrepancy']['value'])} "
          f"(se {_fmt(rep['discrepancy']['se'])}), {elapsed:.1f} s", file=sys.stdout)
    return EXIT_OK


def cmd_rates(run: Run) -> int:
    from .oulevy import mesh_diagnostics, rate_experiment

    a = run.args
    cfg = _ou_config(run)
    table = rate_experiment(cfg, a.T_grid, a.which)
    run.write_csv("rates.csv", ["T", "lambda", "quantity", "value", "slope"], table.csv_rows())
    run.write_json("rates.json", {
        "mesh": mesh_diagnostics(cfg),
        "mesh_per_T": table.mesh,
        "slopes": [{"lambda": lam, "quantity": name, "slope": s} for (lam, name), s in table.slopes.items()],
    })
    for (lam, name), s in table.slopes.items():
        print(f"lambda={lam:g} {name}: slope {_fmt(s)}")
    return EXIT_OK


def cmd_clt_check(run: Run) -> int:
    from .oulevy import component_kernels, cov_limit, mesh_diagnostics

    a = run.args
    cfg = _ou_config(run)
    rows, entries = [], []
    for T in a.T_grid:
        c = cfg.with_T(T)
        kernels = component_kernels(c, a.which)
        C = cov_limit(c, a.which) if a.which == "A" else cov_limit(c, a.which, block=True, symmetrized=True)
        (entry,) = clt_conditions([(float(T), kernels)], C)
        for i, norms in enumerate(entry.contraction_norms):
            for (r, l), v in sorted(norms.items()):
                rows.append([T, i, f"contraction_norm r={r} l={l}", v])
            rows.append([T, i, "l4_fourth_power", entry.l4_fourth_powers[i]])
            rows.append([T, i, "l3_cube", entry.l3_cubes[i]])
        rows.append([T, "", "max_covariance_gap", float(entry.covariance_gap.max())])
        rows.append([T, "", "d3_bound", entry.d3_bound])
        entries.append({"T": T, "mesh": mesh_diagnostics(c), "covariance_gap": entry.covariance_gap,
                        "d3_bound": entry.d3_bound})
        print(f"T={T:g}: max covariance gap {_fmt(float(entry.covariance_gap.max()))}, d3 bound {_fmt(entry.d3_bound)}")
    run.write_csv("clt_check.csv", ["T", "component", "quantity", "value"], rows)
    run.write_json("clt_check.json", {"which": a.which, "entries": entries})
    return EXIT_OK


def _common(p: argparse.ArgumentParser):
    p.add_argument("--out-dir", type=Path, default=None, help=f"output directory (default ${OUT_ENV} or ./poissonstein-out)")
    p.add_argument("--seed", type=_seed, default=DEFAULT_SEED, help="RNG seed (default 0x5EED)")
    p.add_argument("--format", choices=("csv", "json", "both"), default="both")
    p.add_argument("--atol", type=float, default=1e-9, help="absolute tolerance for symmetry checks")
    p.add_argument("--rtol", type=float, default=1e-9, help="relative tolerance for symmetry checks")
    p.add_argument("--workers", type=int, default=1, help="sampling threads; results do not depend on it")


def _ou_options(p: argparse.ArgumentParser, which=("A", "Q", "Qh"), default_which="Q"):
    p.add_argument("--config", type=Path, default=None, help="OU config JSON")
    p.add_argument("--which", choices=which, default=default_which)
    p.add_argument("--lambdas", type=_floats, default=None)
    p.add_argument("--T", type=float, default=None)
    p.add_argument("--h", type=float, default=None)
    p.add_argument("--cells-per-unit", dest="cells_per_unit", type=float, default=None)
    p.add_argument("--marks", type=_marks, default=None, help="mark atoms as value:mass,value:mass")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poissonstein", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("algebra", help="kernel operations on kernel files")
    _common(p)
    p.add_argument("--op", choices=("contract", "symmetrize", "ghat", "product", "inner", "norm"), default="contract")
    p.add_argument("--f", type=Path, default=None, help="first kernel (default: shipped sample_f.json)")
    p.add_argument("--g", type=Path, default=None, help="second kernel (default: shipped sample_g.json)")
    p.add_argument("--r", type=int, default=1)
    p.add_argument("--l", type=int, default=1)
    p.add_argument("--k", type=int, default=0)
    p.add_argument("--method", choices=("closed", "slices"), default="closed")
    p.add_argument("--exponent", type=float, default=2.0)
    p.set_defaults(func=cmd_algebra)

    for name, helptext, func in (("bound", "assemble the d3/d2 bound", cmd_bound),
                                 ("simulate", "Monte Carlo values, covariance and discrepancy", cmd_simulate)):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--kernels", type=Path, nargs="*", default=None, help="one kernel file per component I_q(f)")
        p.add_argument("--expansions", type=Path, nargs="*", default=None, help="chaos expansion files")
        p.add_argument("--cov", type=Path, default=None, help="JSON with field C (default identity)")
        p.add_argument("--reps", type=int, default=10000)
        p.add_argument("--family-size", type=int, default=64)
        if name == "bound":
            p.add_argument("--mode", choices=("analytic", "montecarlo"), default="analytic")
        p.set_defaults(func=func)

    p = sub.add_parser("ou-demo", help="end-to-end OU Levy example")
    _common(p)
    _ou_options(p)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--family-size", type=int, default=64)
    p.add_argument("--T-grid", dest="T_grid", type=_floats, default=None)
    p.add_argument("--sim-cells-per-unit", type=float, default=None, help="coarser mesh for the simulation")
    p.set_defaults(func=cmd_ou_demo)

    p = sub.add_parser("rates", help="contraction-norm decay table")
    _common(p)
    _ou_options(p, which=("Q", "Qh"))
    p.add_argument("--T-grid", dest="T_grid", type=_floats, default=[25.0, 50.0, 100.0, 200.0, 400.0])
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("clt-check", help="CLT condition norms along a T grid")
    _common(p)
    _ou_options(p)
    p.add_argument("--T-grid", dest="T_grid", type=_floats, default=[25.0, 50.0, 100.0])
    p.set_defaults(func=cmd_clt_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", 0) is None and args.command in ("clt-check",) and args.lambdas is None:
        args.config = data_path("ou_example2.json")
    if getattr(args, "reps", None) is not None and args.reps < 1:
        print(f"error: --reps must be positive, got {args.reps}", file=sys.stderr)
        return EXIT_INVALID
    t0 = time.perf_counter()
    try:
        status = args.func(Run(args))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalGuardError as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    print(f"done in {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
