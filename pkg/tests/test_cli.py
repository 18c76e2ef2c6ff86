import csv
import json

import numpy as np
import pandas as pd
import pytest

from rdge.cli import main
from rdge import ingest

from test_ge import _economy


@pytest.fixture
def noiseless(tmp_path):
    x = np.random.default_rng(0).uniform(0.1, 0.7, 600)
    df = pd.DataFrame({"literacy": x, "y": 1 + 0.5 * x + 0.7 * (x < 0.3929),
                       "d": np.repeat(np.arange(60), 10)})
    path = tmp_path / "data.csv"
    df.to_csv(path, index=False)
    return path


def _run(tmp_path, name, *argv):
    out = tmp_path / name
    return main(["--out", str(out), *argv]), out


def test_estimate_noiseless_json(tmp_path, noiseless):
    code, out = _run(tmp_path, "e", "estimate", "--data", str(noiseless), "--h", "0.2", "--b", "0.3")
    assert code == 0
    res = json.loads((out / "result.json").read_text())
    assert res["tau_conventional"] == pytest.approx(0.7, abs=1e-8)
    assert res["bandwidths"]["h"] == 0.2 and res["bandwidths"]["b"] == 0.3
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["command"] == "estimate" and cfg["seed"] == 0


def test_rho_sets_bias_bandwidth(tmp_path, noiseless):
    code, out = _run(tmp_path, "r", "estimate", "--data", str(noiseless), "--h", "0.2", "--rho", "0.5")
    assert code == 0
    bw = json.loads((out / "result.json").read_text())["bandwidths"]
    assert bw["b"] == pytest.approx(0.4)


def test_config_reproduces_run(tmp_path, noiseless):
    code, out = _run(tmp_path, "a", "estimate", "--data", str(noiseless), "--vce", "hc3",
                     "--cluster", "d", "--h", "0.25", "--b", "0.35")
    assert code == 0
    code, again = _run(tmp_path, "b", "--config", str(out / "config.json"), "estimate")
    assert code == 0
    assert (out / "result.json").read_text() == (again / "result.json").read_text()


def test_exit_codes(tmp_path, noiseless, capsys):
    assert _run(tmp_path, "m", "estimate", "--data", str(tmp_path / "nope.csv"))[0] == 2
    assert _run(tmp_path, "c", "estimate", "--data", str(noiseless), "--outcome", "zz")[0] == 2
    code, _ = _run(tmp_path, "i", "estimate", "--data", str(noiseless), "--cutoff", "0.05",
                   "--h", "0.1", "--b", "0.1")
    assert code == 3
    assert "error" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweeps_and_balance(tmp_path, noiseless):
    code, out = _run(tmp_path, "s", "sweep-threshold", "--data", str(noiseless), "--grid", "0.38,0.3929,0.41",
                     "--vce", "hc1")
    assert code == 0
    assert len(pd.read_csv(out / "sweep_threshold.csv")) == 3
    code, out = _run(tmp_path, "w", "sweep-bandwidth", "--data", str(noiseless), "--grid", "0.1:0.2:0.05",
                     "--h", "0.15", "--b", "0.25")
    assert code == 0
    assert pd.read_csv(out / "sweep_bandwidth.csv")["flagged"].sum() == 1
    code, out = _run(tmp_path, "n", "balance")
    assert code == 0 and (out / "balance.csv").exists()


def test_plot_outputs(tmp_path, noiseless):
    df = pd.read_csv(noiseless)
    df["t"] = (df["literacy"] < 0.3929).astype(int)
    df.to_csv(noiseless, index=False)
    code, out = _run(tmp_path, "p", "plot", "--data", str(noiseless), "--rule", "manual", "--bins", "4,6",
                     "--hist-treatment", "t")
    assert code == 0
    assert len(pd.read_csv(out / "plot_bins.csv")) == 10
    assert (out / "treatment_histogram.csv").exists() and (out / "plot.svg").exists()


def test_bootstrap_command(tmp_path, noiseless):
    argv = ["bootstrap", "--data", str(noiseless), "--h", "0.2", "--b", "0.3", "--cluster", "d",
            "--by-cluster", "--replications", "30"]
    code, out = _run(tmp_path, "b1", "--seed", "4", *argv)
    code2, out2 = _run(tmp_path, "b2", "--seed", "4", "--workers", "3", *argv)
    assert code == code2 == 0
    assert (out / "bootstrap.json").read_text() == (out2 / "bootstrap.json").read_text()


def _csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return str(path)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_ingest_then_ge(tmp_path):
    d = _csv(tmp_path / "d.csv", ["district_id", "name", "female_literacy_1991", "population_1991", "treatment"],
             [["p", "P", "0.35", "100", "1"], ["q", "Q", "0.45", "100", "0"]])
    l = _csv(tmp_path / "l.csv", list(ingest.LINEAGE_COLUMNS),
             [["c", "p", "1"], ["e", "q", "1"], ["x", "p", "0.5"], ["x", "q", "0.5"]])
    p = _csv(tmp_path / "p.csv", list(ingest.PERSON_COLUMNS),
             [["c", "30", "10", "0", "100;50", "0.5", "2"], ["e", "80", "3", "0", "10", "1", "1"],
              ["x", "40", "3", "1", "10", "1", "1"]])
    code, out = _run(tmp_path, "ing", "ingest", "--districts", d, "--lineage", l, "--persons", p)
    assert code == 0
    sample = pd.read_csv(out / "sample.csv")
    assert sample["wage"].tolist() == [300.0]
    rep = json.loads((out / "exclusions.json").read_text())
    assert rep["excluded"] == {"age_over_75": 1, "district_excluded_by_lineage": 1}

    econ = _economy({"young": (8, 12), "old": (6, 7)}, (0.5, 0.35))
    econ.to_csv(tmp_path / "econ.csv", index=False)
    code, out = _run(tmp_path, "ge", "ge", "--data", str(tmp_path / "econ.csv"), "--cutoff", "0.3929",
                     "--replications", "5", "--method", "decomposition")
    assert code == 0
    res = json.loads((out / "ge.json").read_text())
    assert res["estimates"]["decomposition"]["beta0"] == pytest.approx(0.5, abs=1e-6)
