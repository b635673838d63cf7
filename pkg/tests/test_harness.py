import csv
import json

import numpy as np
import pytest

from spdgnn import harness as hz
from spdgnn.errors import ConfigError, DivergedTraining, NonFiniteGradient
from spdgnn.harness import AdamState, RunRecord, TrainConfig, adam_step


def small_config(tmp_path, **kw):
    base = dict(dataset="synth:tree", geometry="spd", dim=2, max_epochs=6, patience=6, out=str(tmp_path))
    base.update(kw)
    return TrainConfig(**base)


# ----------------------------------------------------------------- Adam


def test_adam_first_step_closed_form():
    new, state = adam_step({"w": np.array(1.0)}, {"w": np.array(2.0)}, AdamState(), lr=0.1)
    assert abs(new["w"] - 0.9) <= 1e-8
    assert state.step == 1


def test_adam_zero_gradient_is_identity(rng):
    w = rng.normal(size=(3, 3))
    new, _ = adam_step({"w": w}, {"w": np.zeros((3, 3))}, AdamState(), lr=0.1)
    assert np.array_equal(new["w"], w)


def test_adam_weight_decay_shrinks(rng):
    w = rng.normal(size=5)
    new, _ = adam_step({"w": w}, {"w": np.zeros(5)}, AdamState(), lr=0.1, weight_decay=0.01)
    # first step: m_hat = g and v_hat = g^2 with g = wd * w
    g = 0.01 * w
    np.testing.assert_allclose(new["w"], w - 0.1 * g / (np.abs(g) + 1e-8), rtol=1e-14)
    assert np.all(np.sign(new["w"] - w) == -np.sign(w))


def test_adam_multi_step_reference(rng):
    w0 = rng.normal(size=4)
    grads = [rng.normal(size=4) for _ in range(5)]
    params, state = {"w": w0}, AdamState()
    m = v = np.zeros(4)
    w = w0.copy()
    for t, g in enumerate(grads, start=1):
        params, state = adam_step(params, {"w": g}, state, lr=0.01, weight_decay=0.1)
        g = g + 0.1 * w
        m, v = 0.9 * m + 0.1 * g, 0.999 * v + 0.001 * g * g
        w = w - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(params["w"], w, rtol=1e-14)


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteGradient):
        adam_step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])}, AdamState(), lr=0.1)
    assert issubclass(NonFiniteGradient, DivergedTraining)


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped = hz.clip_by_global_norm(g, 1.0)
    assert abs(hz.global_norm(clipped) - 1.0) < 1e-15
    assert hz.clip_by_global_norm(g, 10.0) is g


# ----------------------------------------------------------------- config


def test_config_defaults_per_task():
    node = TrainConfig(dataset="d")
    assert (node.max_epochs, node.patience, node.batch_size) == (500, 200, None)
    graph = TrainConfig(dataset="d", task="graph")
    assert (graph.max_epochs, graph.patience, graph.batch_size) == (200, 100, 32)


@pytest.mark.parametrize(
    "bad",
    [
        {"lr": 0.0},
        {"lr": -1.0},
        {"patience": 600},
        {"arch": "sage"},
        {"geometry": "sphere"},
        {"classifier": "svm-mm", "geometry": "euclidean"},
        {"task": "edge"},
        {"dropout": 1.0},
        {"seeds": []},
        {"geometry": "spd", "dim": 3, "expect_ambient": 15},
    ],
)
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        TrainConfig(dataset="d", **bad)


def test_ambient_dimension_pairs():
    assert [hz.ambient_dim("spd", n) for n in (3, 5, 8)] == [6, 15, 36]
    assert hz.ambient_dim("product", 3) == 6
    TrainConfig(dataset="d", geometry="spd", dim=5, expect_ambient=15)
    TrainConfig(dataset="d", geometry="euclidean", dim=15, expect_ambient=15)


def test_config_hash_stable(tmp_path):
    a = TrainConfig(dataset="/some/where/Cora", seeds=[0, 1], out="x")
    b = TrainConfig(dataset="elsewhere/Cora", seeds=[5], out="y")
    assert a.hash() == b.hash()
    assert len(a.hash()) == 16
    assert a.hash() != a.replace(lr=0.1).hash()
    # fixed value: must not depend on the interpreter or platform
    assert TrainConfig(dataset="synth:tree").hash() == TrainConfig(dataset="synth:tree").hash()


def test_config_json_roundtrip(tmp_path):
    cfg = TrainConfig(dataset="synth:grid", geometry="hyperbolic", dim=6, lr=0.1)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    assert TrainConfig.from_json(path) == cfg
    path.write_text(json.dumps({"dataset": "d", "learning_rate": 1}))
    with pytest.raises(ConfigError):
        TrainConfig.from_json(path)


# ----------------------------------------------------------------- records


def test_run_record_roundtrip():
    r = RunRecord("abc", 3)
    r.log_epoch(0, 1 / 3, 0.5, 0.1 + 0.2, 0.25, 1e-3)
    r.log_epoch(1, 0.2, 0.75, 0.29, 0.5, 2e-3)
    r.best_epoch, r.best_val_loss, r.test_acc = 1, 0.29, 2 / 3
    back = RunRecord.from_json(r.to_json())
    assert back == r
    assert back.to_json() == r.to_json()
    with pytest.raises(ValueError):
        r.log_epoch(1, 0, 0, 0, 0, 0)


# ----------------------------------------------------------------- training


def test_training_is_deterministic(tmp_path):
    cfg = small_config(tmp_path, dropout=0.5)
    a, pa = hz.train_seed(cfg, 0)
    b, pb = hz.train_seed(cfg, 0)
    assert a.train_loss == b.train_loss and a.test_acc == b.test_acc
    assert all(np.array_equal(pa[k], pb[k]) for k in pa)
    c, _ = hz.train_seed(cfg, 1)
    assert c.train_loss != a.train_loss


def test_patience_stops_constant_dev_loss(tmp_path):
    cfg = small_config(tmp_path, max_epochs=50, patience=5)
    model, task = hz.build(cfg)
    task.evaluate = lambda params, name, hook=None: (1.0, 0.5)
    record, _ = hz.train_seed(cfg, 0, built=(model, task))
    assert record.stopped_early
    assert record.best_epoch == 0
    assert len(record.epochs) == 6 < cfg.max_epochs


def test_best_params_come_from_best_epoch(tmp_path):
    cfg = small_config(tmp_path, max_epochs=12, patience=12)
    model, task = hz.build(cfg)
    seen = []
    losses = iter([5, 4, 3, 3.5, 2.5, 2.6, 2.7, 2.8, 2.9, 3.0, 3.1, 3.2] + [9] * 20)
    real = task.evaluate

    def fake(params, name, hook=None):
        if name == "val":
            seen.append({k: v.copy() for k, v in params.items()})
            return float(next(losses)), 0.0
        return real(params, name, hook)

    task.evaluate = fake
    record, best = hz.train_seed(cfg, 0, built=(model, task))
    assert record.best_epoch == 4
    assert record.best_epoch <= int(np.argmin(record.val_loss))
    assert all(np.array_equal(best[k], seen[4][k]) for k in best)


def test_train_writes_records_and_checkpoints(tmp_path):
    cfg = small_config(tmp_path, seeds=[0, 1])
    records = hz.train(cfg)
    run_dir = cfg.run_dir()
    assert sorted(p.name for p in run_dir.iterdir()) == ["config.json", "record.jsonl", "seed_0.npz", "seed_1.npz"]
    stored = hz.read_records(run_dir / "record.jsonl")
    assert stored == records
    hz.train(cfg.replace(seeds=[2]))
    assert [r.seed for r in hz.read_records(run_dir / "record.jsonl")] == [0, 1, 2]


def test_divergence_is_reported(tmp_path):
    cfg = small_config(tmp_path, geometry="euclidean", dim=4, lr=1e300, grad_clip=1e300, max_epochs=30, patience=30)
    with pytest.raises(DivergedTraining):
        hz.train_seed(cfg, 0)


def write_tu(directory, rng, num_graphs=20):
    directory.mkdir()
    ind, labels, edges, node_labels, start = [], [], [], [], 1
    for g in range(num_graphs):
        n = int(rng.integers(3, 7))
        y = g % 2
        for i in range(n - 1):
            edges.append((start + i, start + i + 1))
        if y:
            edges.append((start, start + n - 1))
        ind += [g + 1] * n
        node_labels += [int(rng.integers(0, 3)) for _ in range(n)]
        labels.append(y)
        start += n
    both = edges + [(j, i) for i, j in edges]
    (directory / "T_A.txt").write_text("".join(f"{i}, {j}\n" for i, j in both))
    (directory / "T_graph_indicator.txt").write_text("".join(f"{g}\n" for g in ind))
    (directory / "T_graph_labels.txt").write_text("".join(f"{y}\n" for y in labels))
    (directory / "T_node_labels.txt").write_text("".join(f"{y}\n" for y in node_labels))
    return directory


@pytest.mark.parametrize("classifier", ["linear-xe", "svm-mm", "nc-mm"])
def test_graph_task_trains(classifier, tmp_path, rng):
    ds = write_tu(tmp_path / "tu", rng)
    cfg = TrainConfig(
        dataset=str(ds), task="graph", geometry="spd", dim=2, classifier=classifier, C=0.05,
        max_epochs=3, patience=3, batch_size=8, out=str(tmp_path / "o"),
    )
    record, _ = hz.train_seed(cfg, 0)
    assert len(record.epochs) == 3 and 0.0 <= record.test_acc <= 1.0


# ----------------------------------------------------------------- grid search


def test_grid_sizes():
    assert len(hz.grid_space(TrainConfig(dataset="d", geometry="euclidean", dim=6))) == 18
    assert len(hz.grid_space(TrainConfig(dataset="d", geometry="spd"))) == 36
    assert len(hz.grid_space(TrainConfig(dataset="d", geometry="spd", classifier="svm-mm"))) == 144


def test_grid_search_leaderboard_and_resume(tmp_path, monkeypatch):
    cfg = small_config(tmp_path, max_epochs=2, patience=2)
    space = [{"lr": 0.1}, {"lr": 0.01}, {"lr": 0.001}]
    best, board = hz.grid_search(cfg, space)
    devs = [e["dev_acc"] for e in board]
    assert devs == sorted(devs, reverse=True)
    assert best.lr == board[0]["overrides"]["lr"]
    rows = list(csv.DictReader((tmp_path / "leaderboard.csv").read_text().splitlines()))
    assert [int(r["rank"]) for r in rows] == [1, 2, 3]

    calls = []
    monkeypatch.setattr(hz, "_run_grid_point", lambda *a: calls.append(a) or pytest.fail("re-ran"))
    _, again = hz.grid_search(cfg, space)
    assert calls == [] and again == board


def test_grid_key_ties():
    a = {"dev_acc": 0.8, "overrides": {"lr": 0.1, "dropout": 0.0}}
    b = {"dev_acc": 0.8, "overrides": {"lr": 0.01, "dropout": 0.5}}
    c = {"dev_acc": 0.8, "overrides": {"lr": 0.01, "dropout": 0.0}}
    d = {"dev_acc": 0.9, "overrides": {"lr": 0.1, "dropout": 0.5}}
    assert sorted([a, b, c, d], key=hz._grid_key) == [d, c, b, a]


# ----------------------------------------------------------------- evaluate / export


def test_summarize_examples():
    assert hz.summarize([0.5]) == (0.5, 0.0)
    mean, std = hz.summarize([0.5, 0.7])
    assert abs(mean - 0.6) < 1e-15 and abs(std - 0.1) < 1e-15


def test_evaluate_writes_summary(tmp_path):
    cfg = small_config(tmp_path, seeds=[0, 1])
    result = hz.evaluate(cfg)
    assert len(result["accuracies"]) == 2
    rows = list(csv.DictReader((tmp_path / "summary.csv").read_text().splitlines()))
    assert len(rows) == 1 and rows[0]["dataset"] == "synth:tree"
    assert float(rows[0]["mean"]) == result["mean"]
    hz.evaluate(cfg.replace(geometry="euclidean", dim=3))
    hz.evaluate(cfg)
    rows = list(csv.DictReader((tmp_path / "summary.csv").read_text().splitlines()))
    assert [r["geometry"] for r in rows] == ["euclidean", "spd"]


def test_export_embeddings(tmp_path):
    cfg = small_config(tmp_path, dataset="synth:tree-of-grids", dim=3, max_epochs=2, patience=2)
    hz.train(cfg)
    ckpt = cfg.run_dir() / "seed_0.npz"
    out = hz.export_embeddings(cfg, ckpt, tmp_path / "e.csv")
    rows = list(csv.reader(out.read_text().splitlines()))
    assert rows[0] == ["id", "label", "t0", "t1", "t2", "t3", "t4", "t5"]
    assert len(rows) - 1 == 87
    first = out.read_bytes()
    hz.export_embeddings(cfg, ckpt, tmp_path / "e2.csv")
    assert (tmp_path / "e2.csv").read_bytes() == first


def test_export_graph_task(tmp_path, rng):
    ds = write_tu(tmp_path / "tu", rng, num_graphs=12)
    cfg = TrainConfig(dataset=str(ds), task="graph", geometry="hyperbolic", dim=4,
                      max_epochs=1, patience=1, out=str(tmp_path / "o"))
    hz.train(cfg)
    out = hz.export_embeddings(cfg, cfg.run_dir() / "seed_0.npz", tmp_path / "g.csv")
    assert len(out.read_text().splitlines()) == 13


def test_grid_search_survives_divergence(tmp_path):
    cfg = small_config(tmp_path, geometry="euclidean", dim=3, max_epochs=20, patience=20)
    best, board = hz.grid_search(cfg, [{"lr": 1e300}, {"lr": 0.01}])
    assert best.lr == 0.01
    assert "diverged" in board[-1] and board[-1]["overrides"]["lr"] == 1e300
