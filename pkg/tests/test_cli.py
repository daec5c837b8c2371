import csv
import json

import pytest

from mmgp.cli import run


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run(["datagen", "--n", "10", "--seed", "4", "--split", "4", "1", "--mesh-size", "0.18",
                "--out", str(d / "data"), "--threads", "1"]) == 0
    for name in ("a", "b"):
        assert run(["train", "--data", str(d / "data" / "train"), "--out", str(d / f"{name}.mmgp"),
                    "--shape-modes", "3", "--field-modes", "3", "--restarts", "2", "--mc-samples", "16",
                    "--threads", "1"]) == 0
    return d


def test_datagen_layout(workdir):
    d = workdir / "data"
    assert (d / "manifest.json").exists() and (d / "config.json").exists()
    assert (d / "train").is_dir() and (d / "test").is_dir()


def test_training_twice_gives_identical_bytes(workdir):
    assert (workdir / "a.mmgp").read_bytes() == (workdir / "b.mmgp").read_bytes()
    assert json.loads((workdir / "a.mmgp.config.json").read_text())["command"] == "train"


def test_predict_writes_fields_and_csv(workdir, capsys):
    mesh = sorted((workdir / "data" / "test").glob("*.json"))
    mesh = [m for m in mesh if m.name not in ("manifest.json", "index.json")][0]
    out = workdir / "pred.json"
    plot = workdir / "pred.csv"
    capsys.readouterr()
    code = run(["predict", "--model", str(workdir / "a.mmgp"), "--mesh", str(mesh), "--mu", "1.0", "1.5",
                "--out", str(out), "--samples", "8", "--plot-csv", str(plot), "--threads", "1"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary["scalars"]) == {"w1", "w2"}
    doc = json.loads(out.read_text())
    assert "U" in json.dumps(doc) and "U_variance" in json.dumps(doc)
    with open(plot) as fh:
        header = next(csv.reader(fh))
    assert header == ["x", "y", "u1_mean", "u1_variance", "u2_mean", "u2_variance"]


def test_evaluate_writes_metrics(workdir):
    out = workdir / "eval"
    code = run(["evaluate", "--model", str(workdir / "a.mmgp"), "--model", str(workdir / "b.mmgp"),
                "--data", str(workdir / "data" / "test"), "--out", str(out), "--threads", "1"])
    assert code == 0
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["model", "quantity", "kind", "n", "rrmse", "q2", "picp"]
    assert len(rows) == 8
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics["mean_picp"]) == {"w1", "w2"}
    assert "seconds" not in (out / "metrics.json").read_text()
    assert (out / "timing.json").exists() and (out / "config.json").exists()


def test_inspect_commands(workdir, capsys):
    capsys.readouterr()
    assert run(["inspect-basis", "--model", str(workdir / "a.mmgp")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "basis,mode,singular_value,explained_energy"
    assert len(lines) == 1 + 3 * 3
    assert run(["inspect-gp", "--model", str(workdir / "a.mmgp")]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc["scalars"]) == {"w1", "w2"} and set(doc["fields"]) == {"u1", "u2"}


def test_unknown_flag_is_usage_error_and_writes_nothing(tmp_path):
    out = tmp_path / "x"
    assert run(["datagen", "--n", "6", "--out", str(out), "--bogus"]) == 64
    assert run(["nonsense"]) == 64
    assert run(["datagen", "--n", "6", "--out", str(out), "--threads", "0"]) == 64
    assert list(tmp_path.iterdir()) == []


def test_missing_model_is_validation_error(tmp_path):
    assert run(["inspect-gp", "--model", str(tmp_path / "none.mmgp")]) == 2
