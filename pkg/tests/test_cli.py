import csv
import json

import pytest

from conftest import DATA
from robust_boosting.cli import run_command
from robust_boosting.model_io import save_model
from robust_boosting.stumps import StumpEnsemble

BC = str(DATA / "breast-cancer.csv")


def json_lines(text):
    return [json.loads(line) for line in text.splitlines() if line.startswith("{")]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    args = ["train", "--data", BC, "--model", "stumps", "--mode", "robust_exact", "--eps", "0.3",
            "--rounds", "15", "--shrinkage", "1", "--seed", "0"]
    assert run_command(args + ["--out", str(d / "a.json")]) == 0
    assert run_command(args + ["--out", str(d / "b.json")]) == 0
    return d


def test_train_is_byte_identical(trained):
    assert (trained / "a.json").read_bytes() == (trained / "b.json").read_bytes()


def test_eval_reports_metrics_and_csvs(trained, capsys, tmp_path):
    code = run_command(["eval", "-m", str(trained / "a.json"), "--out-dir", str(tmp_path)])
    assert code == 0
    rep = json_lines(capsys.readouterr().out)[-1]
    assert rep["n"] == 137 and rep["eps"] == 0.3
    assert rep["te"] <= rep["lrte"] <= rep["rte_exact"] == rep["urte"]
    with open(tmp_path / "metrics.csv") as fh:
        row = list(csv.DictReader(fh))[0]
    assert float(row["urte"]) == rep["urte"]


def test_certify_and_attack_lines(trained, capsys):
    assert run_command(["certify", "-m", str(trained / "a.json"), "--limit", "3"]) == 0
    cert = json_lines(capsys.readouterr().out)
    assert len(cert) == 3 and all(c["exact"] for c in cert)
    assert run_command(["attack", "-m", str(trained / "a.json"), "--limit", "3"]) == 0
    att = json_lines(capsys.readouterr().out)
    assert [a["index"] for a in att] == [0, 1, 2]
    assert all(a["margin"] >= c["margin"] for a, c in zip(att, cert))


def test_certify_radius_flag(trained, capsys):
    assert run_command(["certify", "-m", str(trained / "a.json"), "--limit", "2",
                        "--radius"]) == 0
    lines = json_lines(capsys.readouterr().out)
    assert all("radius" in line for line in lines)


def test_sweep_writes_csv(tmp_path, capsys):
    code = run_command(["sweep", "--data", BC, "--model", "stumps", "--mode", "robust_exact",
                        "--rounds", "5", "--eps-grid", "0", "0.3", "--out-dir", str(tmp_path)])
    assert code == 0
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["eps"]) for r in rows] == [0.0, 0.3]


def test_empty_model_counts_everything_as_error(tmp_path, capsys):
    save_model(StumpEnsemble(n_features=9, eps_trained=0.3), tmp_path / "empty.json")
    assert run_command(["eval", "-m", str(tmp_path / "empty.json"), "--data", BC]) == 0
    rep = json_lines(capsys.readouterr().out)[-1]
    assert rep["te"] == rep["lrte"] == rep["urte"] == 1.0


def test_usage_errors_exit_2(capsys):
    for argv in (["train", "--bogus"], ["frobnicate"], [],
                 ["train", "--data", BC, "--out", "x.json", "--model", "trees",
                  "--mode", "robust_exact"]):
        with pytest.raises(SystemExit) as err:
            run_command(argv)
        assert err.value.code == 2


def test_data_errors_exit_1(tmp_path, capsys):
    assert run_command(["eval", "-m", str(tmp_path / "missing.json"), "--data", BC]) == 1
    (tmp_path / "bad.json").write_text('{"format_version": 999}')
    assert run_command(["eval", "-m", str(tmp_path / "bad.json"), "--data", BC]) == 1
    (tmp_path / "bad.csv").write_text("a,label\n1\n")
    assert run_command(["train", "--data", str(tmp_path / "bad.csv"),
                        "--out", str(tmp_path / "m.json")]) == 1
    assert "error:" in capsys.readouterr().err
