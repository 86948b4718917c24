import csv
import json

import numpy as np
import pytest

from engnn.cli import main
from engnn.graphs import read_jsonl
from engnn.train import CSV_HEADER


def _config(tmp_path, **over):
    cfg = {
        "model": {"layers": 1, "d": 4, "L": 2, "C": 2, "L0": 2, "L1": 2, "d1": 4, "task_level": "node"},
        "train": {"epochs": 1, "seed": 0},
        "data": {"task": "count:C3", "n": 8, "count": 10, "seed": 1},
        "output": {"dir": str(tmp_path / "out")},
    }
    for section, values in over.items():
        cfg[section].update(values)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return path


def test_gen_data_count(tmp_path, capsys):
    out = tmp_path / "c3.jsonl"
    assert main(["gen-data", "--task", "count:C3", "--n", "16", "--count", "10", "--seed", "0", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 10
    for g in read_jsonl(out):
        assert g.y.shape == (16,) and np.all(g.y == np.round(g.y))
    assert "10 records" in capsys.readouterr().out
    again = tmp_path / "again.jsonl"
    main(["gen-data", "--task", "count:C3", "--n", "16", "--count", "10", "--seed", "0", "--out", str(again)])
    assert out.read_bytes() == again.read_bytes()


def test_gen_data_csl_pair(tmp_path, capsys):
    out = tmp_path / "csl.jsonl"
    assert main(["gen-data", "--task", "csl-pairs", "--n", "11", "--seed", "0", "--out", str(out)]) == 0
    assert len(read_jsonl(out)) == 2
    text = capsys.readouterr().out
    assert "1-WL equivalent: yes" in text and "spectrally distinct: yes" in text


def test_gen_data_subgraph(tmp_path):
    out = tmp_path / "s.jsonl"
    assert main(["gen-data", "--task", "subgraph:component", "--n", "50", "--count", "9", "--seed", "2",
                 "--out", str(out)]) == 0
    assert len(read_jsonl(out)) == 9


@pytest.mark.parametrize("argv", [
    ["gen-data", "--task", "count:C9", "--seed", "0", "--out", "x"],
    ["gen-data", "--task", "count:C3", "--seed", "0"],
    ["gen-data", "--task", "count:C3", "--n", "0", "--seed", "0", "--out", "x"],
    ["check", "--what", "everything"],
    ["report"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_gen_data_failure_exit_1(tmp_path):
    # CSL needs gcd(n, skip) = 1, impossible for n = 12 and skip = 2
    assert main(["gen-data", "--task", "csl-pairs", "--n", "12", "--seed", "0", "--out", str(tmp_path / "x")]) == 1


def test_train_minimal(tmp_path):
    assert main(["train", "--config", str(_config(tmp_path))]) == 0
    out = tmp_path / "out"
    ckpt = json.loads((out / "checkpoint.json").read_text())
    assert set(ckpt) >= {"config", "tensors"}
    with open(out / "metrics.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == CSV_HEADER and len(rows) - 1 >= 2


def test_train_mpnn_and_dataset_path(tmp_path):
    data = tmp_path / "d.jsonl"
    main(["gen-data", "--task", "count:C4", "--n", "8", "--count", "10", "--seed", "3", "--out", str(data)])
    cfg = _config(tmp_path, model={"variant": "MPNN", "C": 4}, data={"path": str(data)})
    cfg_doc = json.loads(cfg.read_text())
    cfg_doc["data"] = {"path": str(data)}
    cfg.write_text(json.dumps(cfg_doc))
    assert main(["train", "--config", str(cfg)]) == 0


def test_train_config_errors(tmp_path):
    assert main(["train", "--config", str(_config(tmp_path, model={"depth": 2}))]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"model": {}, "train": {"seed": 0}, "data": {"task": "count:C3", "seed": 0},
                               "output": {"dir": "x"}, "extra": {}}))
    assert main(["train", "--config", str(bad)]) == 1
    bad.write_text("{not json")
    assert main(["train", "--config", str(bad)]) == 1
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 1


def test_train_divergence_exit_1(tmp_path, capsys):
    cfg = _config(tmp_path, train={"epochs": 30, "lr": 1e200})
    assert main(["train", "--config", str(cfg)]) == 1
    assert "diverged at epoch" in capsys.readouterr().err


def test_seed_env_override(tmp_path, monkeypatch):
    cfg = _config(tmp_path)
    main(["train", "--config", str(cfg)])
    base = (tmp_path / "out" / "metrics.csv").read_text()
    monkeypatch.setenv("ENGNN_SEED", "11")
    main(["train", "--config", str(cfg)])
    other = (tmp_path / "out" / "metrics.csv").read_text()
    assert other != base
    assert all(line.endswith(",11") for line in other.splitlines()[1:])
    monkeypatch.setenv("ENGNN_SEED", "0")
    main(["train", "--config", str(cfg)])
    assert (tmp_path / "out" / "metrics.csv").read_text() == base


def test_check_verbs(capsys):
    assert main(["check", "--what", "equivariance", "--trials", "5", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("trial") == 5 and out.strip().endswith("PASS")


def test_check_covering_prints_trivial_group_rows(capsys):
    assert main(["check", "--what", "covering", "--seed", "0"]) == 0
    rows = [line.split(",") for line in capsys.readouterr().out.splitlines() if line.startswith("1,")]
    assert rows and all(float(r[4]) == 1.0 for r in rows)


def _write_metrics(path, seed, value):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerow(["run", "C3", "ENGNN", "test", "NMAE", value, seed])
        w.writerow([f"run@0", "C3", "ENGNN", "train", "loss", 9.0, seed])


def test_report_median(tmp_path, capsys):
    paths = []
    for seed, v in enumerate([0.3, 0.1, 0.7]):
        p = tmp_path / f"m{seed}.csv"
        _write_metrics(p, seed, v)
        paths.append(str(p))
    merged = tmp_path / "all.csv"
    assert main(["report", "--inputs", *paths, "--merged", str(merged)]) == 0
    out = capsys.readouterr().out
    line = [l for l in out.splitlines() if "ENGNN" in l]
    assert len(line) == 1 and "0.3" in line[0].split() and line[0].split()[-1] == "3"
    assert len(merged.read_text().splitlines()) == 1 + 6
    assert main(["report", "--inputs", paths[0]]) == 0


def test_report_header_mismatch(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,c\n1,2,3\n")
    assert main(["report", "--inputs", str(p)]) == 2
