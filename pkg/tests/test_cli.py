import csv
import json
import subprocess
import sys

import pytest

from spdgnn.cli import main


def run(*argv):
    return main([str(a) for a in argv])


def test_synth_then_hyperbolicity(tmp_path, capsys):
    out = tmp_path / "tree"
    assert run("synth", "--kind", "tree", "--depth", "3", "--out", out) == 0
    assert sorted(p.name for p in out.iterdir()) == ["features.csv", "graph.edges", "labels.csv", "split.json"]
    assert run("hyperbolicity", "--dataset-dir", out) == 0
    assert "delta = 0 (exact)" in capsys.readouterr().out


def test_hyperbolicity_synthetic_grid(capsys):
    assert run("hyperbolicity", "--dataset-dir", "synth:tree-of-grids") == 0
    assert "delta = 2" in capsys.readouterr().out
    assert run("hyperbolicity", "--dataset-dir", "synth:grid", "--mode", "sampled", "--samples", 500) == 0


def test_train_evaluate_export(tmp_path, capsys):
    common = ["--dataset-dir", "synth:tree", "--geometry", "spd", "--dim", 2, "--out", tmp_path,
              "--max-epochs", 3, "--patience", 3, "--seed", 0, "--seeds", 2]
    assert run("train", *common) == 0
    assert "seed 1:" in capsys.readouterr().out
    assert run("evaluate", *common) == 0
    rows = list(csv.DictReader((tmp_path / "summary.csv").read_text().splitlines()))
    assert rows[0]["seeds"] == "0 1"
    emb = tmp_path / "emb.csv"
    assert run("export-embeddings", *common, "--output", emb) == 0
    header = emb.read_text().splitlines()[0].split(",")
    assert header == ["id", "label", "t0", "t1", "t2"]


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": "synth:grid", "geometry": "euclidean", "dim": 4,
                               "max_epochs": 2, "patience": 2, "out": str(tmp_path)}))
    assert run("train", "--config", cfg, "--geometry", "hyperbolic") == 0
    written = list((tmp_path / "runs").glob("*/config.json"))
    assert json.loads(written[0].read_text())["geometry"] == "hyperbolic"


def test_gridsearch_subcommand(tmp_path, capsys, monkeypatch):
    import spdgnn.harness as hz

    monkeypatch.setattr(hz, "GRID", dict(hz.GRID, lr=(0.01,), weight_decay=(0.0,)))
    assert run("gridsearch", "--dataset-dir", "synth:tree", "--geometry", "euclidean", "--dim", 3,
               "--max-epochs", 2, "--patience", 2, "--out", tmp_path) == 0
    assert (tmp_path / "leaderboard.csv").is_file() and (tmp_path / "best_config.json").is_file()


@pytest.mark.parametrize(
    "argv,code",
    [
        (["train", "--dataset-dir", "synth:tree", "--lr", "-1"], 2),
        (["train", "--arch", "gcn"], 2),
        (["train", "--dataset-dir", "synth:tree", "--geometry", "euclidean", "--classifier", "svm-mm"], 2),
        (["train", "--dataset-dir", "/definitely/not/here"], 3),
        (["hyperbolicity", "--dataset-dir", "synth:nothing"], 3),
        (["train", "--dataset-dir", "synth:tree", "--geometry", "euclidean", "--dim", "3",
          "--lr", "1e300", "--max-epochs", "20", "--patience", "20"], 4),
    ],
)
def test_exit_codes(argv, code, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == code
    assert capsys.readouterr().err


def test_exit_code_for_large_exact_delta(tmp_path):
    run("synth", "--kind", "grid", "--width", 20, "--height", 16, "--out", tmp_path / "g")
    assert run("hyperbolicity", "--dataset-dir", tmp_path / "g") == 2


def test_console_script_help():
    proc = subprocess.run([sys.executable, "-m", "spdgnn.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("train", "gridsearch", "evaluate", "export-embeddings", "hyperbolicity", "synth"):
        assert sub in proc.stdout
