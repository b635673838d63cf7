"""Dataset loaders, synthetic graph generators and Gromov delta-hyperbolicity."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.sparse import csgraph

from .errors import (
    DatasetError,
    Disconnected,
    InconsistentCounts,
    IndexOutOfRange,
    ParseError,
    TooLargeForExact,
)
from .graph import Graph

EXACT_DELTA_LIMIT = 300
NODE_FILES = ("graph.edges", "features.csv", "labels.csv", "split.json")

ROLE_TREE, ROLE_GRID, ROLE_JUNCTION = 0, 1, 2
ROLE_NAMES = ("tree", "grid", "junction")


# ---------------------------------------------------------------- text parsing


def _read_lines(path: Path):
    """Non-blank lines as ``(line_number, text)``; tolerates CRLF and a BOM."""
    if not path.is_file():
        raise DatasetError(f"missing file: {path}")
    try:
        text = path.read_text(encoding="utf-8-sig")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not valid UTF-8 ({exc.reason})", path) from exc
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if line:
            yield number, line


def _parse_ints(path, number, parts, count=None):
    if count is not None and len(parts) != count:
        raise ParseError(f"expected {count} fields, found {len(parts)}", path, number)
    try:
        return [int(p) for p in parts]
    except ValueError as exc:
        raise ParseError(f"expected integers, got {parts!r}", path, number) from exc


def _read_int_column(path: Path) -> np.ndarray:
    return np.array(
        [_parse_ints(path, n, [line], 1)[0] for n, line in _read_lines(path)], dtype=np.int64
    )


def _read_real_rows(path: Path) -> np.ndarray:
    rows, width = [], None
    for number, line in _read_lines(path):
        parts = [p.strip() for p in line.split(",")]
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise ParseError(f"ragged row: {len(parts)} values, expected {width}", path, number)
        try:
            row = [float(p) for p in parts]
        except ValueError as exc:
            raise ParseError(f"expected real numbers, got {line!r}", path, number) from exc
        if not np.all(np.isfinite(row)):
            raise ParseError("non-finite value", path, number)
        rows.append(row)
    return np.array(rows, dtype=np.float64).reshape(len(rows), width or 0)


def _read_pairs(path: Path, sep=None):
    pairs = []
    for number, line in _read_lines(path):
        parts = line.split(sep) if sep else line.split()
        pairs.append((number, _parse_ints(path, number, [p.strip() for p in parts], 2)))
    return pairs


# ---------------------------------------------------------------- node datasets


def load_node_dataset(directory) -> Graph:
    """Read ``graph.edges``, ``features.csv``, ``labels.csv`` and ``split.json``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory not found: {directory}")

    features = _read_real_rows(directory / "features.csv")
    labels = _read_int_column(directory / "labels.csv")
    n = features.shape[0]
    if labels.shape[0] != n:
        raise InconsistentCounts(f"{n} feature rows but {labels.shape[0]} labels in {directory}")
    if np.any(labels < 0):
        raise ParseError("labels must be non-negative", directory / "labels.csv")

    edge_path = directory / "graph.edges"
    edges = []
    for number, (u, v) in _read_pairs(edge_path):
        if not (0 <= u < n and 0 <= v < n):
            raise IndexOutOfRange(f"edge ({u}, {v}) outside 0..{n - 1}", edge_path, number)
        edges.append((u, v))

    split_path = directory / "split.json"
    if not split_path.is_file():
        raise DatasetError(f"missing file: {split_path}")
    try:
        split = json.loads(split_path.read_text(encoding="utf-8-sig"))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, split_path, exc.lineno) from exc
    if not isinstance(split, dict):
        raise ParseError("split.json must hold a single JSON object", split_path)
    masks = {}
    for key in ("train", "val", "test"):
        idx = split.get(key)
        if not isinstance(idx, list) or not all(isinstance(i, int) for i in idx):
            raise ParseError(f"'{key}' must be a list of integer node indices", split_path)
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexOutOfRange(f"'{key}' index outside 0..{n - 1}", split_path)
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
        masks[key] = mask
    if np.any(masks["train"] & masks["val"]) or np.any(masks["train"] & masks["test"]) or np.any(
        masks["val"] & masks["test"]
    ):
        raise DatasetError(f"train/val/test splits overlap in {split_path}")

    return Graph.from_edges(
        n,
        np.asarray(edges, dtype=np.int64).reshape(-1, 2),
        features=features,
        labels=labels,
        train_mask=masks["train"],
        val_mask=masks["val"],
        test_mask=masks["test"],
        name=directory.name,
    )


def write_node_dataset(graph: Graph, directory) -> Path:
    """Inverse of :func:`load_node_dataset`; reals are written with ``repr`` so reloads are exact."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "graph.edges", "w", encoding="utf-8", newline="\n") as fh:
        for u, v in graph.edge_list():
            fh.write(f"{u}\t{v}\n")
    with open(directory / "features.csv", "w", encoding="utf-8", newline="\n") as fh:
        for row in graph.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with open(directory / "labels.csv", "w", encoding="utf-8", newline="\n") as fh:
        for y in graph.labels:
            fh.write(f"{int(y)}\n")
    split = {
        key: np.flatnonzero(mask).tolist()
        for key, mask in (("train", graph.train_mask), ("val", graph.val_mask), ("test", graph.test_mask))
    }
    (directory / "split.json").write_text(json.dumps(split), encoding="utf-8")
    return directory


# ---------------------------------------------------------------- TUDataset


def _tu_prefix(directory: Path) -> str:
    found = sorted(directory.glob("*_A.txt"))
    if not found:
        raise DatasetError(f"no '<name>_A.txt' file in {directory}")
    if len(found) > 1:
        raise DatasetError(f"several '_A.txt' files in {directory}: {[p.name for p in found]}")
    return found[0].name[: -len("_A.txt")]


def load_tudataset(directory, zscore: bool = False):
    """Parse a TUDataset directory into ``(graphs, graph_labels)``.

    Node features are the one-hot node labels followed by the node
    attributes when both files exist.  Graph labels are re-indexed to
    ``0..K-1`` in sorted order of the raw values.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory not found: {directory}")
    name = _tu_prefix(directory)

    def path(suffix):
        return directory / f"{name}_{suffix}.txt"

    indicator = _read_int_column(path("graph_indicator"))
    num_nodes = indicator.shape[0]
    if num_nodes == 0:
        raise DatasetError(f"{path('graph_indicator')} lists no nodes")
    raw_graph_labels = _read_int_column(path("graph_labels"))
    num_graphs = raw_graph_labels.shape[0]
    ids = np.unique(indicator)
    if ids[0] != 1 or ids[-1] != len(ids) or len(ids) != num_graphs:
        raise InconsistentCounts(
            f"graph ids must run 1..{num_graphs} without gaps; found {len(ids)} ids up to {ids[-1]}"
        )
    if np.any(np.diff(indicator) < 0):
        raise InconsistentCounts("graph indicator must be sorted by graph id")

    blocks = []
    if path("node_labels").is_file():
        node_labels = _read_int_column(path("node_labels"))
        if node_labels.shape[0] != num_nodes:
            raise InconsistentCounts(f"{node_labels.shape[0]} node labels for {num_nodes} nodes")
        values, codes = np.unique(node_labels, return_inverse=True)
        blocks.append(np.eye(len(values))[codes])
    if path("node_attributes").is_file():
        attrs = _read_real_rows(path("node_attributes"))
        if attrs.shape[0] != num_nodes:
            raise InconsistentCounts(f"{attrs.shape[0]} attribute rows for {num_nodes} nodes")
        if zscore:
            std = attrs.std(axis=0)
            attrs = (attrs - attrs.mean(axis=0)) / np.where(std > 0, std, 1.0)
        blocks.append(attrs)
    if not blocks:
        raise DatasetError(f"{name} has neither node labels nor node attributes")
    features = np.concatenate(blocks, axis=1)

    edge_path = path("A")
    graph_of = indicator - 1
    starts = np.concatenate([[0], np.cumsum(np.bincount(graph_of, minlength=num_graphs))])
    per_graph = [[] for _ in range(num_graphs)]
    for number, (i, j) in _read_pairs(edge_path, sep=","):
        if not (1 <= i <= num_nodes and 1 <= j <= num_nodes):
            raise IndexOutOfRange(f"edge ({i}, {j}) outside 1..{num_nodes}", edge_path, number)
        g = graph_of[i - 1]
        if graph_of[j - 1] != g:
            raise InconsistentCounts(f"{edge_path}:{number}: edge joins graphs {g + 1} and {graph_of[j - 1] + 1}")
        per_graph[g].append((i - 1 - starts[g], j - 1 - starts[g]))

    _, graph_labels = np.unique(raw_graph_labels, return_inverse=True)
    graphs = []
    for g in range(num_graphs):
        size = int(starts[g + 1] - starts[g])
        graphs.append(
            Graph.from_edges(
                size,
                np.asarray(per_graph[g], dtype=np.int64).reshape(-1, 2),
                features=features[starts[g] : starts[g + 1]],
                labels=None,
                name=f"{name}[{g}]",
            )
        )
    return graphs, graph_labels.astype(np.int64)


def split_tudataset(labels, seed: int, folds: int = 10, dev_fraction: float = 0.1):
    """Stratified fold 0 as test, then a random ``dev_fraction`` of the rest as dev.

    Returns index arrays ``(train, dev, test)``, each sorted.
    """
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        # deal class members round-robin, continuing where the last class stopped
        fold_of[members] = (np.arange(len(members)) + offset) % folds
        offset = (offset + len(members)) % folds
    test = np.flatnonzero(fold_of == 0)
    rest = np.flatnonzero(fold_of != 0)
    n_dev = int(round(dev_fraction * len(rest)))
    dev = np.sort(rng.choice(rest, size=n_dev, replace=False))
    train = np.setdiff1d(rest, dev)
    return train, dev, test


# ---------------------------------------------------------------- synthetic graphs


def _degree_features(degrees, dim, rng):
    """Random projection of the one-hot degree (self-loop excluded)."""
    onehot = np.eye(int(degrees.max()) + 1)[degrees]
    return onehot @ rng.normal(size=(onehot.shape[1], dim))


def _tree_edges(branching, depth, offset=0):
    edges, frontier, next_id = [], [offset], offset + 1
    for _ in range(depth):
        new = []
        for parent in frontier:
            for _ in range(branching):
                edges.append((parent, next_id))
                new.append(next_id)
                next_id += 1
        frontier = new
    return edges, frontier, next_id - offset


def _grid_edges(w, h, offset=0):
    edges = []
    for r in range(h):
        for c in range(w):
            i = offset + r * w + c
            if c + 1 < w:
                edges.append((i, i + 1))
            if r + 1 < h:
                edges.append((i, i + w))
    return edges


def _finish(num_nodes, edges, labels, feature_dim, seed, name, split=(0.6, 0.2)):
    rng = np.random.default_rng(seed)
    g = Graph.from_edges(num_nodes, edges, labels=labels)
    g.features = _degree_features(g.degrees - 1, feature_dim, rng)
    order = rng.permutation(num_nodes)
    n_train = int(round(split[0] * num_nodes))
    n_val = int(round(split[1] * num_nodes))
    masks = [np.zeros(num_nodes, dtype=bool) for _ in range(3)]
    masks[0][order[:n_train]] = True
    masks[1][order[n_train : n_train + n_val]] = True
    masks[2][order[n_train + n_val :]] = True
    g.train_mask, g.val_mask, g.test_mask = masks
    g.name = name
    return g


def synth_tree(branching: int = 2, depth: int = 3, feature_dim: int = 8, seed: int = 0) -> Graph:
    """Complete ``branching``-ary tree; labels 0 for interior nodes, 1 for leaves."""
    edges, leaves, n = _tree_edges(branching, depth)
    labels = np.zeros(n, dtype=np.int64)
    labels[leaves] = 1
    return _finish(n, edges, labels, feature_dim, seed, f"tree_b{branching}_h{depth}")


def synth_grid(w: int = 3, h: int = 3, feature_dim: int = 8, seed: int = 0) -> Graph:
    """``w x h`` lattice; labels 0 for boundary nodes, 1 for interior nodes."""
    n = w * h
    r, c = np.divmod(np.arange(n), w)
    labels = ((r > 0) & (r < h - 1) & (c > 0) & (c < w - 1)).astype(np.int64)
    return _finish(n, _grid_edges(w, h), labels, feature_dim, seed, f"grid_{w}x{h}")


def synth_tree_of_grids(
    branching: int = 2,
    depth: int = 3,
    grid_w: int = 3,
    grid_h: int = 3,
    feature_dim: int = 8,
    seed: int = 0,
) -> Graph:
    """A tree whose every leaf is joined by one edge to the corner of its own grid.

    Structural roles: 0 tree node, 1 grid node, 2 junction (the leaf and the
    grid corner on either side of the joining edge).
    """
    edges, leaves, n = _tree_edges(branching, depth)
    labels = [ROLE_TREE] * n
    for leaf in leaves:
        corner = n
        edges += _grid_edges(grid_w, grid_h, offset=n)
        edges.append((leaf, corner))
        labels += [ROLE_GRID] * (grid_w * grid_h)
        labels[leaf] = labels[corner] = ROLE_JUNCTION
        n += grid_w * grid_h
    return _finish(
        n,
        edges,
        np.asarray(labels, dtype=np.int64),
        feature_dim,
        seed,
        f"tree_of_grids_b{branching}_h{depth}_{grid_w}x{grid_h}",
    )


SYNTHETIC = {"tree": synth_tree, "grid": synth_grid, "tree-of-grids": synth_tree_of_grids}


# ---------------------------------------------------------------- hyperbolicity


def shortest_paths(graph: Graph) -> np.ndarray:
    """All-pairs hop distances by BFS; raises :class:`Disconnected` on infinite entries."""
    dist = csgraph.shortest_path(graph.adjacency(self_loops=False), method="D", unweighted=True, directed=False)
    if not np.all(np.isfinite(dist)):
        raise Disconnected(f"graph {graph.name or ''} is not connected".replace("  ", " "))
    return dist


def four_point_defect(d_ij, d_kl, d_ik, d_jl, d_il, d_jk):
    """Half the gap between the largest and middle of the three pairwise sums."""
    s1, s2, s3 = d_ij + d_kl, d_ik + d_jl, d_il + d_jk
    hi = np.maximum(np.maximum(s1, s2), s3)
    lo = np.minimum(np.minimum(s1, s2), s3)
    mid = s1 + s2 + s3 - hi - lo
    return (hi - mid) / 2.0


def _exact_delta(dist: np.ndarray) -> float:
    n = dist.shape[0]
    best = 0.0
    for i in range(n - 1):
        di = dist[i]
        for j in range(i + 1, n):
            dj = dist[j]
            # k, l range over all nodes; tuples with repeats contribute 0
            defect = four_point_defect(
                dist[i, j], dist, di[:, None], dj[None, :], di[None, :], dj[:, None]
            )
            best = max(best, float(defect.max()))
    return best


def delta_hyperbolicity(
    graph: Graph,
    mode: str = "exact",
    num_quadruples: int = 10**6,
    seed: int = 0,
) -> float:
    """Gromov delta of the hop metric.

    ``exact`` scans every 4-tuple (at most 300 nodes); ``sampled`` scans
    ``num_quadruples`` random tuples and so returns a lower bound.
    """
    if graph.num_nodes == 0:
        raise Disconnected("empty graph")
    if mode == "exact":
        if graph.num_nodes > EXACT_DELTA_LIMIT:
            raise TooLargeForExact(
                f"{graph.num_nodes} nodes; exact mode allows at most {EXACT_DELTA_LIMIT}, use mode='sampled'"
            )
        return _exact_delta(shortest_paths(graph))
    if mode != "sampled":
        raise ValueError(f"mode must be 'exact' or 'sampled', got {mode!r}")
    dist = shortest_paths(graph)
    rng = np.random.default_rng(seed)
    n, best, left = graph.num_nodes, 0.0, int(num_quadruples)
    while left > 0:
        m = min(left, 100_000)
        i, j, k, l = rng.integers(0, n, size=(4, m))
        defect = four_point_defect(dist[i, j], dist[k, l], dist[i, k], dist[j, l], dist[i, l], dist[j, k])
        best = max(best, float(defect.max()))
        left -= m
    return best
