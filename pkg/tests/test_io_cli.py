import json
import math
import subprocess
import sys

import numpy as np
import pytest

from poissonstein import io as fileio
from poissonstein.chaos import ChaosExpansion
from poissonstein.cli import data_path, main
from poissonstein.errors import ValidationError
from poissonstein.space import DiscreteSpace, Kernel


def run(tmp_path, *argv):
    return main(list(argv) + ["--out-dir", str(tmp_path)])


def write_kernel(path, weights, values):
    sp = DiscreteSpace(weights)
    fileio.save_kernel(path, Kernel(sp, np.asarray(values, float)))
    return path


def test_kernel_round_trip(tmp_path):
    sp = DiscreteSpace([0.1, 1 / 3, 2.0])
    f = Kernel(sp, np.random.default_rng(1).normal(size=(3, 3)))
    fileio.save_kernel(tmp_path / "f.json", f)
    g = fileio.load_kernel(tmp_path / "f.json", require_symmetric=False)
    assert np.array_equal(f.values, g.values)
    assert np.array_equal(f.space.weights, g.space.weights)
    with pytest.raises(ValidationError, match="not symmetric"):
        fileio.load_kernel(tmp_path / "f.json")


def test_read_errors_name_the_file(tmp_path):
    with pytest.raises(ValidationError, match="missing.json"):
        fileio.read_json(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ValidationError, match="bad.json"):
        fileio.read_json(bad)


def test_expansion_document(tmp_path):
    h = fileio.load_kernel(data_path("sample_h.json"))
    g = Kernel(h.space, [1.0, -2.0, 0.5])
    F = ChaosExpansion(h.space, 1.5, [g, h])
    fileio.write_json(tmp_path / "F.json", fileio.expansion_to_document(F))
    G = fileio.load_expansion(tmp_path / "F.json")
    assert G.mean == 1.5 and np.array_equal(G.kernels[1].values, h.values)
    fileio.write_json(tmp_path / "H.json", {"mean": 0.0, "kernels": [str(data_path("sample_h.json"))]})
    assert fileio.load_expansion(tmp_path / "H.json").kernels[1].order == 2
    fileio.write_json(tmp_path / "E.json", {"mean": 0.0, "kernels": []})
    with pytest.raises(ValidationError):
        fileio.load_expansion(tmp_path / "E.json")


def test_json_is_exact_and_finite(tmp_path):
    x = 0.1 + 0.2
    fileio.write_json(tmp_path / "x.json", {"x": x, "nan": float("nan"), "arr": np.arange(3)})
    doc = json.loads((tmp_path / "x.json").read_text())
    assert doc == {"x": x, "nan": None, "arr": [0, 1, 2]}


def test_csv_seventeen_digits(tmp_path):
    fileio.write_csv(tmp_path / "t.csv", ["a", "b"], [[1, 1 / 3]])
    header, rows = fileio.read_csv(tmp_path / "t.csv")
    assert header == ["a", "b"] and rows == [["1", "0.33333333333333331"]]
    assert float(rows[0][1]) == 1 / 3


def test_algebra_contract_prints_11(tmp_path, capsys):
    assert run(tmp_path, "algebra", "--op", "contract", "--r", "1", "--l", "1") == 0
    assert capsys.readouterr().out.strip() == "11"
    doc = json.loads((tmp_path / "algebra.json").read_text())
    assert doc["result"]["values"] == [11.0]
    assert doc["seed"] == 0x5EED and "version" in doc


def test_algebra_other_ops(tmp_path, capsys):
    h = str(data_path("sample_h.json"))
    assert run(tmp_path, "algebra", "--op", "norm", "--f", h) == 0
    assert run(tmp_path, "algebra", "--op", "ghat", "--f", h, "--g", h, "--k", "1", "--method", "slices") == 0
    assert run(tmp_path, "algebra", "--op", "product") == 0
    out = capsys.readouterr().out
    assert "order 0: 11" in out


def test_exit_code_on_asymmetric_kernel(tmp_path, capsys):
    path = write_kernel(tmp_path / "asym.json", [1.0, 1.0], [[0.0, 1.0], [2.0, 0.0]])
    assert run(tmp_path, "algebra", "--op", "norm", "--f", str(path)) == 2
    err = capsys.readouterr().err
    assert "asym.json" in err and "not symmetric" in err


def test_exit_code_on_mismatched_spaces(tmp_path, capsys):
    a = write_kernel(tmp_path / "a.json", [1.0, 2.0], [1.0, 0.0])
    b = write_kernel(tmp_path / "b.json", [1.0, 3.0], [0.0, 1.0])
    assert run(tmp_path, "bound", "--kernels", str(a), str(b)) == 2
    assert "b.json" in capsys.readouterr().err


def test_exit_code_on_bad_cov(tmp_path, capsys):
    cov = tmp_path / "cov.json"
    cov.write_text(json.dumps({"C": [[1.0, 2.0], [0.0, 1.0]]}))
    h = str(data_path("sample_h.json"))
    assert run(tmp_path, "bound", "--kernels", h, "--cov", str(cov)) == 2
    assert "cov.json" in capsys.readouterr().err


def test_exit_code_on_guard(tmp_path, capsys):
    h = str(data_path("sample_h.json"))
    assert run(tmp_path, "simulate", "--kernels", h, "--reps", str(10**9)) == 3
    assert "exceeds budget" in capsys.readouterr().err


def test_bound_command(tmp_path):
    h = str(data_path("sample_h.json"))
    cov = tmp_path / "cov.json"
    cov.write_text(json.dumps({"C": [[2.0]]}))
    assert run(tmp_path, "bound", "--kernels", h, "--cov", str(cov)) == 0
    header, rows = fileio.read_csv(tmp_path / "bound_report.csv")
    names = [r[0] for r in rows]
    assert {"term_sq_sum", "cubic_term", "d3_bound", "d2_bound"} <= set(names)
    doc = json.loads((tmp_path / "bound_report.json").read_text())
    b = doc["bound"]
    assert b["d3_bound"] == pytest.approx(0.5 * math.sqrt(b["term_sq_sum"]) + 0.25 * b["cubic_term"])


def test_simulate_is_byte_identical_across_workers(tmp_path):
    h = str(data_path("sample_h.json"))
    f = str(data_path("sample_f.json"))
    outs = []
    for i, workers in enumerate((1, 3, 1)):
        d = tmp_path / f"run{i}"
        assert main(["simulate", "--kernels", h, "--reps", "3000", "--workers", str(workers),
                     "--out-dir", str(d)]) == 0
        outs.append({name: (d / name).read_bytes() for name in ("values.csv", "summary.csv", "summary.json")})
    assert outs[0] == outs[1] == outs[2]
    header, rows = fileio.read_csv(tmp_path / "run0" / "values.csv")
    assert header == ["replication", "F1"] and len(rows) == 3000
    # different space: the second-order sample lives on 3 cells, the first-order one on 2
    assert main(["simulate", "--kernels", h, f, "--out-dir", str(tmp_path / "x")]) == 2


def test_simulate_discrepancy_and_env_out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("POISSONSTEIN_OUT", str(tmp_path / "env"))
    h = str(data_path("sample_h.json"))
    cov = tmp_path / "cov.json"
    cov.write_text(json.dumps({"C": [[2.0]]}))
    assert main(["simulate", "--kernels", h, "--reps", "2000", "--cov", str(cov), "--format", "json"]) == 0
    doc = json.loads((tmp_path / "env" / "summary.json").read_text())
    assert "lower" in doc["discrepancy"]["label"]
    assert not (tmp_path / "env" / "values.csv").exists()


def test_rates_and_clt_check_agree(tmp_path):
    args = ["--lambdas", "1", "--cells-per-unit", "2", "--marks", "2:0.2,-0.5:0.8", "--T-grid", "25,50"]
    assert main(["rates", *args, "--out-dir", str(tmp_path / "r")]) == 0
    assert main(["clt-check", *args, "--out-dir", str(tmp_path / "c")]) == 0
    _, rates = fileio.read_csv(tmp_path / "r" / "rates.csv")
    _, clt = fileio.read_csv(tmp_path / "c" / "clt_check.csv")
    rate_c = {float(T): float(v) for T, _, name, v, _ in rates if name.startswith("c:")}
    clt_c = {float(T): float(v) for T, comp, name, v in clt if comp == "1" and name == "contraction_norm r=2 l=1"}
    assert rate_c.keys() == clt_c.keys()
    for T in rate_c:
        assert clt_c[T] == pytest.approx(rate_c[T], rel=1e-12)


def test_clt_check_default_family(tmp_path):
    assert main(["clt-check", "--T-grid", "10", "--cells-per-unit", "1", "--out-dir", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "clt_check.json").read_text())
    assert doc["config"]["config"] is not None
    assert doc["entries"][0]["mesh"]["cells"] > 0


def test_ou_demo_writes_reports(tmp_path):
    argv = ["ou-demo", "--which", "Q", "--lambdas", "1,4", "--T", "200", "--reps", "1000",
            "--sim-cells-per-unit", "1"]
    assert main(argv + ["--out-dir", str(tmp_path / "a")]) == 0
    assert main(argv + ["--out-dir", str(tmp_path / "b"), "--workers", "2"]) == 0
    for name in ("covariance.csv", "bound.csv", "ou_demo_report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rep = json.loads((tmp_path / "a" / "ou_demo_report.json").read_text())
    for key in ("version", "seed", "config", "mesh", "sim_mesh", "bound", "discrepancy"):
        assert key in rep
    assert rep["discrepancy"]["sound"]


def test_bad_ou_options(tmp_path, capsys):
    assert main(["rates", "--lambdas", "-1", "--out-dir", str(tmp_path)]) == 2
    assert main(["rates", "--out-dir", str(tmp_path)]) == 2
    assert "lambdas" in capsys.readouterr().err


def test_console_script_runs():
    out = subprocess.run([sys.executable, "-m", "poissonstein.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "0.1.0" in out.stdout
