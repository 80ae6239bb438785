import csv
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import yaml

from wheelgen import cli
from wheelgen.config import ConfigError, RunConfigFile, config_from_dict, dump_config, load_config
from wheelgen.imageio import read_image, write_image
from wheelgen.pipeline import PipelineConfig, pareto_mask, read_records_csv
from wheelgen.synthetic import generate_synthetic_wheels


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# --- config ------------------------------------------------------------------

def test_dumped_defaults_round_trip(tmp_path):
    text = dump_config()
    path = tmp_path / "c.yaml"
    path.write_text(text)
    assert load_config(path) == RunConfigFile()
    assert all("#" in line for line in text.splitlines()[1:] if line.startswith("  "))


def test_partial_config_keeps_defaults():
    cfg = config_from_dict({"pipeline": {"resolution": 48, "similarity_levels": [0.5]},
                            "simp": {"r_min": 2}})
    assert cfg.pipeline.resolution == 48
    assert cfg.pipeline.similarity_levels == (0.5,)
    assert cfg.simp.r_min == 2.0
    assert cfg.began == RunConfigFile().began


@pytest.mark.parametrize("data", [{"pipline": {}}, {"simp": {"rmin": 2}}, {"pipeline": {"resolution": 4.5}},
                                  {"began": {"gamma": 3.0}}, {"pipeline": []}, [1, 2]])
def test_bad_configs_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_missing_config_names_path(tmp_path):
    with pytest.raises(ConfigError, match="nope.yaml"):
        load_config(tmp_path / "nope.yaml")


# --- cli ---------------------------------------------------------------------

def test_usage_errors_exit_2(capsys):
    for argv in ([], ["frobnicate"], ["gen-data"], ["topopt", "--out", "x", "--bogus", "1"]):
        code, _, err = run(argv, capsys)
        assert code == 2
        assert err.startswith("wheelgen: error: usage:") and err.count("\n") == 1


def test_missing_config_file_exit_1(tmp_path, capsys):
    code, _, err = run(["run", "--config", tmp_path / "missing.yaml", "--out", tmp_path / "o"], capsys)
    assert code == 1
    assert "missing.yaml" in err and err.count("\n") == 1


def test_print_config(capsys):
    code, out, _ = run(["run", "--print-config"], capsys)
    assert code == 0
    assert yaml.safe_load(out)["pipeline"]["termination_threshold"] == 0.3


def test_gen_data_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(["gen-data", "--count", 3, "--resolution", 32, "--out", tmp_path / name], capsys)[0] == 0
    files = sorted((tmp_path / "a").glob("*.pgm"))
    assert len(files) == 3
    for f in files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_topopt_writes_design_and_history(tmp_path, capsys):
    ref = tmp_path / "r.pgm"
    write_image(ref, generate_synthetic_wheels(1, 24, seed=0)[0])
    out = tmp_path / "d"
    code, _, err = run(["topopt", "--ref", ref, "--lambda", 0.005, "--force-ratio", 0.2,
                        "--max-iterations", 8, "--out", out], capsys)
    assert code == 0, err
    assert read_image(out / "design.pgm").shape == (24, 24)
    with open(out / "history.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 8 and "compliance" in rows[0]
    result = json.loads((out / "result.json").read_text())
    assert result["iterations"] == 8 and result["lambda_sim"] == 0.005


def test_topopt_needs_reference_or_volume(tmp_path, capsys):
    assert run(["topopt", "--out", tmp_path], capsys)[0] == 2


def test_evaluate_then_pareto_matches_oracle(tmp_path, capsys):
    designs = tmp_path / "designs"
    designs.mkdir()
    for i, im in enumerate(generate_synthetic_wheels(6, 24, seed=3)):
        write_image(designs / f"w{i}.pgm", im)
    rec = tmp_path / "records.csv"
    assert run(["evaluate", "--designs", designs, "--out", rec], capsys)[0] == 0
    assert run(["pareto", "--records", rec], capsys)[0] == 0
    rows = read_records_csv(rec)
    with open(tmp_path / "pareto.csv", newline="") as fh:
        front = list(csv.DictReader(fh))
    obj = np.array([[r["compliance"], r["cost"], -r["novelty"]] for r in rows])
    expected = {rows[i]["id"] for i in np.flatnonzero(pareto_mask(obj))}
    assert {r["id"] for r in front if r["pareto3d"] == "1"} == expected


def test_training_sampling_and_scoring(tmp_path, capsys):
    data = tmp_path / "data"
    assert run(["gen-data", "--count", 12, "--resolution", 16, "--out", data], capsys)[0] == 0
    assert run(["train-began", "--data", data, "--out", tmp_path / "g", "--epochs", 1, "--side", 8,
                "--batch-size", 4], capsys)[0] == 0
    assert (tmp_path / "g" / "training_log.csv").exists()
    assert run(["sample", "--model", tmp_path / "g" / "began.ckpt", "--count", 3, "--binarize",
                "--out", tmp_path / "s"], capsys)[0] == 0
    samples = [read_image(p) for p in sorted((tmp_path / "s").glob("*.pgm"))]
    assert len(samples) == 3 and set(np.unique(samples)) <= {0.0, 1.0}
    assert run(["train-ae", "--data", data, "--out", tmp_path / "ae", "--epochs", 1, "--side", 8],
               capsys)[0] == 0
    held = json.loads((tmp_path / "ae" / "heldout.json").read_text())
    assert len(held) == 3
    code, _, err = run(["score", "--model", tmp_path / "ae" / "novelty.ckpt", "--designs", data,
                        "--generated", tmp_path / "s", "--out", tmp_path / "sc"], capsys)
    assert code == 0, err
    with open(tmp_path / "sc" / "scores.csv", newline="") as fh:
        scores = list(csv.DictReader(fh))
    assert len(scores) == 12
    assert sorted(int(r["rank"]) for r in scores) == list(range(1, 13))
    summary = json.loads((tmp_path / "sc" / "confusion.json").read_text())
    assert summary["TP"] + summary["FN"] == 3


def test_plots_are_valid_and_byte_stable(tmp_path, capsys):
    rec = tmp_path / "records.csv"
    rng = np.random.default_rng(0)
    with open(rec, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "iteration", "origin", "parent_id", "lambda_sim", "force_ratio", "compliance",
                    "cost", "novelty", "norm_compliance", "norm_cost", "norm_novelty", "feasible"])
        for i in range(30):
            c, k, n = rng.uniform(size=3)
            w.writerow([f"t{i}", 1, "topopt", "p0", 0.05, 0.2, c, k, n, "", "", "", 1])
    for name in ("a", "b"):
        assert run(["plot", "--records", rec, "--out", tmp_path / name], capsys)[0] == 0
    svgs = sorted((tmp_path / "a").glob("*.svg"))
    assert len(svgs) == 4
    for p in svgs:
        assert ET.parse(p).getroot().tag.endswith("svg")
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_missing_inputs_are_reported(tmp_path, capsys):
    code, _, err = run(["train-ae", "--data", tmp_path / "none", "--out", tmp_path / "o"], capsys)
    assert code == 1 and "none" in err
