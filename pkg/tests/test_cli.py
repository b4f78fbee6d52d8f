import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from vbil.cli import main, parse_header
from vbil.likelihood import io
from vbil.models import kl_beta


@pytest.fixture
def run():
    runner = CliRunner()

    def invoke(*args):
        return runner.invoke(main, [str(a) for a in args], catch_exceptions=False)

    return invoke


def _rows(path):
    return io.read_table(path)[1].shape[0]


def _text_table(path):
    with open(path) as fh:
        rows = list(csv.reader(ln for ln in fh if not ln.startswith("#")))
    return rows[0], rows[1:]


@pytest.mark.parametrize(
    "cmd,rows",
    [(["glmm", "--n", 300, "--ni", 5], 1500), (["sv", "--T", 1001], 1001), (["stable", "--n", 500], 500)],
)
def test_simulate_row_counts(run, tmp_path, cmd, rows):
    out = tmp_path / "d.csv"
    res = run("simulate", *cmd, "--seed", 3, "--out", out)
    assert res.exit_code == 0, res.output
    assert _rows(out) == rows
    meta = parse_header(out)
    assert meta["seed"] == "3" and len(meta["config"]) == 12


def test_simulate_is_seeded(run, tmp_path):
    for name in ("a", "b"):
        run("simulate", "sv", "--T", 50, "--seed", 9, "--out", tmp_path / f"{name}.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


@pytest.fixture
def bern(run, tmp_path):
    data = tmp_path / "y.csv"
    assert run("simulate", "bernoulli", "--theta", 0.3, "--n", 200, "--seed", 1, "--out", data).exit_code == 0
    return data


def test_fit_bernoulli_writes_outputs(run, tmp_path, bern):
    out = tmp_path / "fit"
    res = run("fit", "--config", "bernoulli", "--data", bern, "--out", out, "--workers", 2)
    assert res.exit_code == 0, res.output
    fit = json.loads((out / "fit.json").read_text())
    k = int(np.sum(io.read_table(bern)[1]))
    a, b = fit["lambda"]
    assert kl_beta(a, b, k + 1, 200 - k + 1) < 1e-3
    assert fit["stop_reason"] == "WindowConverged"
    assert fit["parameters"][0]["name"] == "theta"
    header, trace = io.read_table(out / "trace.csv")
    assert header[:4] == ["iter", "lb_hat", "lb_scaled", "lb_window_avg"]
    assert trace.shape[0] == fit["iterations"]
    assert (out / "fit.timing.json").exists()
    assert parse_header(out / "density.csv")["model"] == "bernoulli"


def test_fit_is_identical_across_worker_counts(run, tmp_path, bern):
    outs = []
    for w in (1, 4):
        out = tmp_path / f"w{w}"
        assert run("fit", "--config", "bernoulli", "--data", bern, "--out", out, "--workers", w).exit_code == 0
        outs.append(out)
    for name in ("trace.csv", "fit.json", "density.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_iteration_cap_exits_3_and_still_writes(run, tmp_path, bern):
    out = tmp_path / "cap"
    res = run("fit", "--config", "bernoulli", "--data", bern, "--out", out, "--max-iters", 2)
    assert res.exit_code == 3
    assert json.loads((out / "fit.json").read_text())["stop_reason"] == "MaxIterations"


def test_empty_data_exits_2(run, tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("y\n")
    assert run("fit", "--config", "bernoulli", "--data", empty, "--out", tmp_path / "o").exit_code == 2


def test_unknown_model_exits_2(run, tmp_path, bern):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "probit"}))
    assert run("fit", "--config", cfg, "--data", bern, "--out", tmp_path / "o").exit_code == 2
    assert run("fit", "--config", "no_such_fixture", "--data", bern, "--out", tmp_path / "o").exit_code == 2


def test_bad_config_value_exits_2(run, tmp_path, bern):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": "bernoulli", "step_kappa": 0.3}))
    assert run("fit", "--config", cfg, "--data", bern, "--out", tmp_path / "o").exit_code == 2


def test_baseline_and_compare(run, tmp_path, bern):
    fit_dir, chain_dir = tmp_path / "fit", tmp_path / "chain"
    assert run("fit", "--config", "bernoulli", "--data", bern, "--out", fit_dir).exit_code == 0
    res = run("baseline", "--config", "bernoulli", "--data", bern, "--out", chain_dir,
              "--iterations", 3000, "--burn-in", 500)
    assert res.exit_code == 0, res.output
    assert _rows(chain_dir / "chain.csv") == 3000
    meta = parse_header(chain_dir / "chain.csv")
    assert meta["burn_in"] == "500" and meta["params"] == "theta"

    table = tmp_path / "cmp.csv"
    overlay = tmp_path / "ov.csv"
    res = run("compare", "--fit", fit_dir / "fit.json", "--chain", chain_dir / "chain.csv",
              "--out", table, "--overlay", overlay)
    assert res.exit_code == 0, res.output
    header, body = _text_table(table)
    assert header == ["parameter", "vbil_mean", "vbil_sd", "pmmh_mean", "pmmh_sd"]
    row = body[0]
    assert abs(float(row[1]) - float(row[3])) < 3 * float(row[2])
    assert (tmp_path / "cmp.timing.csv").exists()
    oh, ov = _text_table(overlay)
    assert len(ov) == 512
    assert oh == ["parameter", "x", "vbil_density", "pmmh_density"]


def test_compare_rejects_mismatched_model(run, tmp_path, bern):
    fit_dir, chain_dir = tmp_path / "fit", tmp_path / "chain"
    run("fit", "--config", "bernoulli", "--data", bern, "--out", fit_dir)
    run("baseline", "--config", "bernoulli", "--data", bern, "--out", chain_dir, "--iterations", 600, "--burn-in", 100)
    fit = json.loads((fit_dir / "fit.json").read_text())
    fit["model"] = "sv"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(fit))
    res = run("compare", "--fit", bad, "--chain", chain_dir / "chain.csv", "--out", tmp_path / "x.csv")
    assert res.exit_code == 2


def test_small_noise_study(run, tmp_path):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({
        "model": "bernoulli", "n": 200, "k": 57, "init": [58, 144], "S": 50, "max_iterations": 5,
        "sigma2_grid": [0.0, 1.0], "replications": 4, "kl_samples": 1000,
    }))
    out = tmp_path / "study.csv"
    res = run("study-theorem1", "--config", cfg, "--out", out)
    assert res.exit_code == 0, res.output
    header, table = _text_table(out)
    assert header == ["coordinate", "slope", "intercept", "r_squared", "var_sigma2_0", "var_sigma2_1"]
    assert len(table) == 2
    assert _rows(tmp_path / "study_kl.csv") == 2


def test_version(run):
    res = run("--version")
    assert res.exit_code == 0 and "vbil" in res.output
