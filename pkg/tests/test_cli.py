from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest

from ticketprune.cli import SUMMARY_FIELDS, main, summarise_reports
from ticketprune.experiments import ExperimentConfig, load_dataset


def run(tmp_path, *args, out="out"):
    return main(["run", "--out", str(tmp_path / out), *args])


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


ONE_COORD = {"experiment": "lemma-one-coord", "d": 2, "s": 2, "eps": 0.2, "delta": 0.2,
             "trials": 5, "sampler": {"n": 100}}


def test_unknown_experiment_is_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": "lemma-nope"})
    assert run(tmp_path, "--config", cfg) != 0
    assert "unknown experiment" in capsys.readouterr().err


def test_bad_config_inputs(tmp_path):
    assert run(tmp_path, "--config", str(tmp_path / "missing.json")) == 2
    assert run(tmp_path, "--config", write_config(tmp_path, dict(ONE_COORD, colour=1))) == 2
    assert run(tmp_path, "--config", write_config(tmp_path, dict(ONE_COORD, widths={"k1": 3}))) == 2
    assert run(tmp_path, "--experiment", "rkhs") == 2
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", write_config(tmp_path, ONE_COORD), "--out", str(blocker / "x")]) == 2


def test_rerun_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path, ONE_COORD)
    assert run(tmp_path, "--config", cfg, "--seed", "0", out="a") == 0
    assert run(tmp_path, "--config", cfg, "--seed", "0", out="b") == 0
    a = (tmp_path / "a" / "lemma-one-coord-seed0.json").read_bytes()
    b = (tmp_path / "b" / "lemma-one-coord-seed0.json").read_bytes()
    assert a == b
    timing = json.loads((tmp_path / "a" / "lemma-one-coord-seed0.timing.json").read_text())
    assert timing["runtime_s"] >= 0 and "runtime" not in a.decode()


def test_report_embeds_resolved_config(tmp_path):
    cfg = write_config(tmp_path, ONE_COORD)
    run(tmp_path, "--config", cfg, "--seed", "3", "--trials", "4", "--set", "eps=0.3")
    rep = json.loads((tmp_path / "out" / "lemma-one-coord-seed3.json").read_text())
    assert rep["config"]["seed"] == 3 and rep["config"]["trials"] == 4 and rep["config"]["eps"] == 0.3
    assert ExperimentConfig.from_dict(rep["config"]).to_dict() == rep["config"]
    assert len(rep["trials"]) == 4


def test_deep_formula_width(tmp_path):
    doc = {"experiment": "thm1-deep", "d": 3, "n": 2, "l": 2, "eps": 0.8, "delta": 0.2,
           "trials": 1, "sampler": {"n": 50}}
    assert run(tmp_path, "--config", write_config(tmp_path, doc)) == 0
    rep = json.loads((tmp_path / "out" / "thm1-deep-seed0.json").read_text())
    s, n, l, eps, delta = 3, 2, 2, 0.8, 0.2
    per_block = math.ceil(64 * s * s * l * l * n / eps**2 * math.log(2 * n * s * l / delta))
    assert rep["widths"]["k"] == n * s * per_block == 206820
    assert rep["width_source"] == "paper-formula"


def test_report_zero_files(capsys):
    assert main(["report"]) == 0
    out = capsys.readouterr().out
    assert out.strip() == ",".join(SUMMARY_FIELDS)


def test_report_single_file_echoes_fields(tmp_path, capsys):
    run(tmp_path, "--config", write_config(tmp_path, ONE_COORD))
    path = tmp_path / "out" / "lemma-one-coord-seed0.json"
    rep = json.loads(path.read_text())
    capsys.readouterr()
    assert main(["report", str(path)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1
    assert int(rows[0]["successes"]) == rep["summary"]["successes"]
    assert float(rows[0]["rate"]) == rep["summary"]["rate"]
    assert float(rows[0]["runtime_s"]) > 0


def test_report_pools_two_seeds(tmp_path):
    cfg = write_config(tmp_path, ONE_COORD)
    paths = []
    for seed, trials in ((1, 5), (2, 7)):
        run(tmp_path, "--config", cfg, "--seed", str(seed), "--trials", str(trials))
        paths.append(tmp_path / "out" / f"lemma-one-coord-seed{seed}.json")
    reps = [json.loads(p.read_text()) for p in paths]
    (row,) = summarise_reports(paths)
    assert summarise_reports(sorted((tmp_path / "out").glob("*.json"))) == [row]
    succ = sum(r["summary"]["successes"] for r in reps)
    assert row["trials"] == 12 and row["successes"] == succ
    assert row["rate"] == succ / 12


def test_report_markdown_and_malformed(tmp_path, capsys):
    run(tmp_path, "--config", write_config(tmp_path, ONE_COORD))
    path = tmp_path / "out" / "lemma-one-coord-seed0.json"
    out = tmp_path / "table.md"
    assert main(["report", str(path), "--format", "markdown", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("| experiment") and lines[2].startswith("| lemma-one-coord")
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["report", str(bad)]) == 2


def test_dataset_files_load_identically(tmp_path):
    X = np.array([[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8]])
    y = np.array([1.0, -1.0, 1.0])
    (tmp_path / "d.csv").write_text("x1,x2,y\n" + "\n".join(",".join(repr(float(v)) for v in [*a, b]) for a, b in zip(X, y)))
    (tmp_path / "d.json").write_text(json.dumps({"x": X.tolist(), "y": y.tolist()}))
    for name in ("d.csv", "d.json"):
        Xl, yl = load_dataset(tmp_path / name)
        assert np.array_equal(Xl, X) and np.array_equal(yl, y)


def test_finite_dataset_from_file(tmp_path):
    (tmp_path / "d.csv").write_text("1,0,1\n0,1,-1\n")
    doc = {"experiment": "finite-dataset", "dataset": str(tmp_path / "d.csv"), "d": 2, "eps": 0.5,
           "widths": {"k1": 16, "k2": 200}, "trials": 2, "kernel_samples": 10**4}
    assert run(tmp_path, "--config", write_config(tmp_path, doc)) == 0
    rep = json.loads((tmp_path / "out" / "finite-dataset-seed0.json").read_text())
    assert rep["summary"]["trials"] == 2 and rep["widths"] == {"k1": 16, "k2": 200}
