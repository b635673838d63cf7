import itertools
import json
import os
from pathlib import Path

import numpy as np
import pytest

from spdgnn import data
from spdgnn.errors import (
    DatasetError,
    Disconnected,
    InconsistentCounts,
    IndexOutOfRange,
    ParseError,
    TooLargeForExact,
)
from spdgnn.graph import Graph


def write_files(directory: Path, files: dict) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (directory / name).write_text(text, encoding="utf-8")
    return directory


NODE_FIXTURE = {
    "graph.edges": "0\t1\n1\t2\n1\t2\n",
    "features.csv": "1.0,0.5\n0.0,2.0\n-1.5,3.0\n",
    "labels.csv": "0\n1\n0\n",
    "split.json": json.dumps({"train": [0], "val": [1], "test": [2]}),
}


# ----------------------------------------------------------------- node datasets


def test_node_loader_fixture(tmp_path):
    g = data.load_node_dataset(write_files(tmp_path / "ds", NODE_FIXTURE))
    assert g.num_nodes == 3 and g.num_edges == 2  # duplicate line collapsed
    assert g.neighbors(0).tolist() == [0, 1]
    assert g.labels.tolist() == [0, 1, 0]
    assert g.train_mask.tolist() == [True, False, False]
    np.testing.assert_array_equal(g.features[2], [-1.5, 3.0])


def test_node_loader_two_nodes_and_empty_edges(tmp_path):
    files = dict(NODE_FIXTURE, **{"graph.edges": "0\t1\n", "features.csv": "1\n2\n", "labels.csv": "0\n1\n"})
    files["split.json"] = json.dumps({"train": [0], "val": [], "test": [1]})
    g = data.load_node_dataset(write_files(tmp_path / "two", files))
    assert sorted(g.neighbors(0).tolist()) == [0, 1]
    files["graph.edges"] = ""
    g = data.load_node_dataset(write_files(tmp_path / "iso", files))
    assert [g.neighbors(i).tolist() for i in range(2)] == [[0], [1]]


def test_node_loader_tolerates_crlf(tmp_path):
    files = {k: v.replace("\n", "\r\n") for k, v in NODE_FIXTURE.items()}
    g = data.load_node_dataset(write_files(tmp_path / "crlf", files))
    assert g.num_edges == 2


def test_node_loader_idempotent(tmp_path):
    src = write_files(tmp_path / "a", NODE_FIXTURE)
    a, b = data.load_node_dataset(src), data.load_node_dataset(src)
    assert np.array_equal(a.indptr, b.indptr) and np.array_equal(a.features, b.features)


def test_write_then_load_roundtrip(tmp_path):
    g = data.synth_tree_of_grids(seed=4)
    back = data.load_node_dataset(data.write_node_dataset(g, tmp_path / "tog"))
    assert np.array_equal(back.features, g.features)
    assert np.array_equal(back.labels, g.labels)
    assert np.array_equal(back.indices, g.indices)
    assert np.array_equal(back.test_mask, g.test_mask)


@pytest.mark.parametrize("missing", data.NODE_FILES)
def test_node_loader_missing_file(missing, tmp_path):
    files = {k: v for k, v in NODE_FIXTURE.items() if k != missing}
    with pytest.raises(DatasetError, match=missing.replace(".", r"\.")):
        data.load_node_dataset(write_files(tmp_path / "m", files))


def test_node_loader_bad_index_is_located(tmp_path):
    files = dict(NODE_FIXTURE, **{"graph.edges": "0\t1\n1\t7\n"})
    with pytest.raises(IndexOutOfRange) as info:
        data.load_node_dataset(write_files(tmp_path / "b", files))
    assert info.value.line == 2 and info.value.path.name == "graph.edges"


def test_node_loader_ragged_row_is_located(tmp_path):
    files = dict(NODE_FIXTURE, **{"features.csv": "1.0,0.5\n0.0\n-1.5,3.0\n"})
    with pytest.raises(ParseError) as info:
        data.load_node_dataset(write_files(tmp_path / "r", files))
    assert info.value.line == 2 and "features.csv:2" in str(info.value)


def test_node_loader_inconsistent_and_overlap(tmp_path):
    with pytest.raises(InconsistentCounts):
        data.load_node_dataset(write_files(tmp_path / "c", dict(NODE_FIXTURE, **{"labels.csv": "0\n1\n"})))
    overlap = json.dumps({"train": [0, 1], "val": [1], "test": [2]})
    with pytest.raises(DatasetError, match="overlap"):
        data.load_node_dataset(write_files(tmp_path / "o", dict(NODE_FIXTURE, **{"split.json": overlap})))
    with pytest.raises(DatasetError):
        data.load_node_dataset(tmp_path / "absent")


# ----------------------------------------------------------------- TUDataset


TU_FIXTURE = {
    "TOY_A.txt": "1, 2\n2, 1\n3, 4\n4, 3\n4, 5\n5, 4\n",
    "TOY_graph_indicator.txt": "1\n1\n2\n2\n2\n",
    "TOY_graph_labels.txt": "-1\n1\n",
    "TOY_node_labels.txt": "0\n1\n1\n0\n1\n",
}


def test_tudataset_minimal_fixture(tmp_path):
    files = {
        "ONE_A.txt": "1, 2\n",
        "ONE_graph_indicator.txt": "1\n1\n",
        "ONE_graph_labels.txt": "0\n",
        "ONE_node_labels.txt": "0\n1\n",
    }
    graphs, labels = data.load_tudataset(write_files(tmp_path / "one", files))
    assert len(graphs) == 1 and graphs[0].num_nodes == 2 and graphs[0].num_edges == 1
    np.testing.assert_array_equal(graphs[0].features, np.eye(2))
    assert labels.tolist() == [0]


def test_tudataset_two_graphs_with_attributes(tmp_path):
    files = dict(TU_FIXTURE, **{"TOY_node_attributes.txt": "0.5\n1.5\n2.5\n3.5\n4.5\n"})
    graphs, labels = data.load_tudataset(write_files(tmp_path / "toy", files))
    assert [g.num_nodes for g in graphs] == [2, 3]
    assert [g.num_edges for g in graphs] == [1, 2]
    assert labels.tolist() == [0, 1]
    np.testing.assert_array_equal(graphs[1].features, [[0, 1, 2.5], [1, 0, 3.5], [0, 1, 4.5]])


def test_tudataset_errors(tmp_path):
    bad = dict(TU_FIXTURE, **{"TOY_A.txt": "1, 2\n2, 9\n"})
    with pytest.raises(IndexOutOfRange) as info:
        data.load_tudataset(write_files(tmp_path / "bad", bad))
    assert info.value.line == 2
    cross = dict(TU_FIXTURE, **{"TOY_A.txt": "2, 3\n"})
    with pytest.raises(InconsistentCounts):
        data.load_tudataset(write_files(tmp_path / "cross", cross))
    short = dict(TU_FIXTURE, **{"TOY_node_labels.txt": "0\n1\n"})
    with pytest.raises(InconsistentCounts):
        data.load_tudataset(write_files(tmp_path / "short", short))
    files = {k: v for k, v in TU_FIXTURE.items() if k != "TOY_graph_labels.txt"}
    with pytest.raises(DatasetError, match="graph_labels"):
        data.load_tudataset(write_files(tmp_path / "missing", files))


def _tu_dir(name):
    root = os.environ.get("SPDGNN_DATA_DIR")
    path = Path(root) / name if root else None
    if path is None or not path.is_dir():
        pytest.skip(f"set SPDGNN_DATA_DIR to a directory containing {name}/")
    return path


def test_proteins_counts():
    graphs, labels = data.load_tudataset(_tu_dir("PROTEINS"))
    assert len(graphs) == 1113
    assert abs(np.mean([g.num_nodes for g in graphs]) - 39.1) < 0.05


def test_split_sizes_and_determinism():
    labels = np.repeat([0, 1, 2], [40, 30, 30])
    train, dev, test = data.split_tudataset(labels, seed=5)
    assert (len(train), len(dev), len(test)) == (81, 9, 10)
    assert len(set(train) | set(dev) | set(test)) == 100
    again = data.split_tudataset(labels, seed=5)
    assert all(np.array_equal(a, b) for a, b in zip((train, dev, test), again))
    other = data.split_tudataset(labels, seed=6)
    assert not np.array_equal(test, other[2])


def test_split_stratified(rng):
    for seed in range(20):
        labels = rng.integers(0, 4, size=int(rng.integers(40, 200)))
        _, _, test = data.split_tudataset(labels, seed)
        ideal = np.bincount(labels, minlength=4) / 10
        assert np.all(np.abs(np.bincount(labels[test], minlength=4) - ideal) <= 1)


# ----------------------------------------------------------------- synthetic


def test_synthetic_counts():
    t = data.synth_tree(2, 3)
    assert (t.num_nodes, t.num_edges) == (15, 14)
    g = data.synth_grid(3, 3)
    assert (g.num_nodes, g.num_edges) == (9, 12)
    tog = data.synth_tree_of_grids(2, 3, 3, 3)
    assert tog.num_nodes == 15 + 8 * 9
    assert tog.num_edges == 14 + 8 * (12 + 1)
    assert np.bincount(tog.labels).tolist() == [7, 64, 16]
    assert tog.is_connected()


def test_synthetic_seeded():
    a, b = data.synth_tree_of_grids(seed=1), data.synth_tree_of_grids(seed=1)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.train_mask, b.train_mask)
    assert not np.array_equal(a.features, data.synth_tree_of_grids(seed=2).features)
    masks = np.stack([a.train_mask, a.val_mask, a.test_mask])
    assert np.all(masks.sum(axis=0) == 1)


def test_synthetic_features_depend_on_degree_only():
    g = data.synth_grid(4, 4, seed=0)
    deg = g.degrees
    for d in np.unique(deg):
        rows = g.features[deg == d]
        assert np.all(rows == rows[0])


# ----------------------------------------------------------------- hyperbolicity


def brute_force_delta(graph):
    """Exhaustive four-point condition over BFS hop distances."""
    n = graph.num_nodes
    dist = np.full((n, n), np.inf)
    for s in range(n):
        dist[s, s], frontier = 0, [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in graph.neighbors(u):
                    if dist[s, v] == np.inf:
                        dist[s, v] = dist[s, u] + 1
                        nxt.append(v)
            frontier = nxt
    best = 0.0
    for x, y, z, w in itertools.combinations(range(n), 4):
        sums = sorted([dist[x, y] + dist[z, w], dist[x, z] + dist[y, w], dist[x, w] + dist[y, z]])
        best = max(best, (sums[2] - sums[1]) / 2)
    return best


def test_delta_small_trees():
    path = Graph.from_edges(5, [(i, i + 1) for i in range(4)])
    star = Graph.from_edges(5, [(0, i) for i in range(1, 5)])
    assert data.delta_hyperbolicity(path) == 0.0
    assert data.delta_hyperbolicity(star) == 0.0
    assert data.delta_hyperbolicity(data.synth_tree(2, 4)) == 0.0


def test_delta_generated_trees_up_to_100_nodes(rng):
    for b, h in [(2, 1), (2, 2), (2, 5), (3, 3), (4, 2), (9, 2)]:
        tree = data.synth_tree(b, h)
        assert tree.num_nodes <= 100
        assert data.delta_hyperbolicity(tree) == 0.0
    for _ in range(10):
        n = int(rng.integers(2, 101))
        parents = [int(rng.integers(0, i)) for i in range(1, n)]
        tree = Graph.from_edges(n, [(p, i + 1) for i, p in enumerate(parents)])
        assert data.delta_hyperbolicity(tree) == 0.0


def test_delta_grid_matches_brute_force():
    grid = data.synth_grid(4, 4)
    expected = brute_force_delta(grid)
    assert data.delta_hyperbolicity(grid) == expected
    cycle = Graph.from_edges(6, [(i, (i + 1) % 6) for i in range(6)])
    assert data.delta_hyperbolicity(cycle) == brute_force_delta(cycle)


def test_delta_sampled_is_lower_bound():
    g = data.synth_tree_of_grids()
    exact = data.delta_hyperbolicity(g)
    sampled = data.delta_hyperbolicity(g, "sampled", 20_000, seed=3)
    assert sampled <= exact
    assert data.delta_hyperbolicity(g, "sampled", 20_000, seed=3) == sampled


def test_delta_errors():
    with pytest.raises(Disconnected):
        data.delta_hyperbolicity(Graph.from_edges(3, [(0, 1)]))
    big = data.synth_grid(20, 16)
    with pytest.raises(TooLargeForExact):
        data.delta_hyperbolicity(big)
    assert data.delta_hyperbolicity(big, "sampled", 1000) >= 0
