"""Training loop, grid search, evaluation and embedding export."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .classifiers import HEADS, Head, make_head
from .data import SYNTHETIC, load_node_dataset, load_tudataset, split_tudataset
from .errors import (
    ConfigError,
    DatasetError,
    DivergedTraining,
    NoConvergence,
    NonFinite,
    NonFiniteGradient,
    NotPositiveDefinite,
    Overflow,
)
from .gnn import ARCHS, GNNEncoder, ModelConfig, graph_readout_mean, scope
from .graph import Graph, disjoint_union
from .manifolds import GEOMETRIES, make_geometry

TASK_DEFAULTS = {
    "node": {"max_epochs": 500, "patience": 200, "batch_size": None},
    "graph": {"max_epochs": 200, "patience": 100, "batch_size": 32},
}
NONLINEARITIES = ("reeig", "tgreeig")
MARGIN_HEADS = ("svm-mm", "nc-mm")
GRID = {
    "lr": (0.1, 0.01, 0.001),
    "dropout": (0.0, 0.5),
    "weight_decay": (0.0, 0.005, 0.0005),
    "nonlinearity": ("tgreeig", "reeig"),
    "C": (0.5, 0.05, 0.005, 0.0005),
}
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
_NOT_HASHED = ("seeds", "out")


# ----------------------------------------------------------------- config


def ambient_dim(geometry: str, dim: int) -> int:
    """Number of real coordinates of a point (``n(n+1)/2`` for SPD_n, ``2m`` for H^m x R^m)."""
    return make_geometry(geometry, dim).ambient_dim


@dataclass
class TrainConfig:
    """Everything that determines a training run.

    ``dataset`` is a directory (node layout or TUDataset) or
    ``synth:<tree|grid|tree-of-grids>`` for an in-memory synthetic graph.
    ``max_epochs``, ``patience`` and ``batch_size`` default per task.
    For ``product``, ``dim`` is the size of each factor.
    """

    dataset: str
    task: str = "node"
    arch: str = "gcn"
    geometry: str = "spd"
    dim: int = 3
    classifier: str = "linear-xe"
    lr: float = 0.01
    dropout: float = 0.0
    weight_decay: float = 0.0
    nonlinearity: str = "tgreeig"
    C: float = 0.0
    max_epochs: int | None = None
    patience: int | None = None
    batch_size: int | None = None
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs"
    num_layers: int = 2
    reeig_eps: float = 0.5
    grad_clip: float = 5.0
    zscore: bool = False
    split_seed: int = 0
    expect_ambient: int | None = None

    def __post_init__(self):
        defaults = TASK_DEFAULTS.get(self.task)
        if defaults is None:
            raise ConfigError(f"task must be 'node' or 'graph', got {self.task!r}")
        for key, value in defaults.items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.dataset, str) and self.dataset, "dataset must be a non-empty string")
        need(self.arch in ARCHS, f"arch must be one of {ARCHS}")
        need(self.geometry in GEOMETRIES, f"geometry must be one of {tuple(GEOMETRIES)}")
        need(self.classifier in HEADS, f"classifier must be one of {HEADS}")
        need(self.nonlinearity in NONLINEARITIES, f"nonlinearity must be one of {NONLINEARITIES}")
        need(self.classifier != "svm-mm" or self.geometry == "spd", "svm-mm needs the spd geometry")
        need(int(self.dim) == self.dim and self.dim >= 1, "dim must be a positive integer")
        need(self.geometry != "spd" or self.dim >= 2, "spd dim n must be at least 2")
        need(self.lr > 0, "lr must be positive")
        need(0.0 <= self.dropout < 1.0, "dropout must lie in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay must be non-negative")
        need(self.C >= 0, "C must be non-negative")
        need(self.max_epochs >= 1, "max_epochs must be at least 1")
        need(1 <= self.patience <= self.max_epochs, "patience must lie in [1, max_epochs]")
        need(self.batch_size is None or self.batch_size >= 1, "batch_size must be positive")
        need(len(self.seeds) >= 1, "at least one seed is required")
        need(self.num_layers >= 1, "num_layers must be at least 1")
        need(self.grad_clip > 0, "grad_clip must be positive")
        if self.expect_ambient is not None:
            got = ambient_dim(self.geometry, self.dim)
            need(
                got == self.expect_ambient,
                f"{self.geometry} with dim {self.dim} has {got} coordinates, expected {self.expect_ambient}",
            )

    # serialization
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "dataset" not in data:
            raise ConfigError("config needs a 'dataset' entry")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def hash(self) -> str:
        """Stable 16-hex-digit id of everything except seeds and output location."""
        data = {k: v for k, v in self.to_dict().items() if k not in _NOT_HASHED}
        data["dataset"] = Path(self.dataset).name if not self.dataset.startswith("synth:") else self.dataset
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def run_dir(self) -> Path:
        return Path(self.out) / "runs" / self.hash()


def derived_seed(config_hash: str, seed: int) -> int:
    return int.from_bytes(hashlib.sha256(f"{config_hash}:{seed}".encode()).digest()[:8], "little")


# ----------------------------------------------------------------- records


@dataclass
class RunRecord:
    """Per-epoch curves and the final result of one seed."""

    config_hash: str
    seed: int
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    best_val_acc: float = 0.0
    test_acc: float = float("nan")
    stopped_early: bool = False

    def log_epoch(self, epoch, train_loss, train_acc, val_loss, val_acc, seconds):
        if self.epochs and epoch <= self.epochs[-1]:
            raise ValueError("epoch indices must increase")
        self.epochs.append(int(epoch))
        self.train_loss.append(float(train_loss))
        self.train_acc.append(float(train_acc))
        self.val_loss.append(float(val_loss))
        self.val_acc.append(float(val_acc))
        self.seconds.append(float(seconds))

    def to_json(self) -> str:
        # json writes floats with repr, so the round trip is exact
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        return cls(**json.loads(line))


def read_records(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [RunRecord.from_json(line) for line in fh if line.strip()]


# ----------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: dict, max_norm: float) -> dict:
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, weight_decay: float = 0.0):
    """One bias-corrected Adam update; ``weight_decay * w`` is added to the gradient.

    Returns ``(new_params, state)``; ``state`` is updated in place.
    """
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {key!r}")
    b1, b2 = ADAM_BETAS
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    new = {}
    for key, w in params.items():
        g = grads.get(key)
        if g is None:
            new[key] = w
            continue
        if weight_decay:
            g = g + weight_decay * w
        m = b1 * state.m.get(key, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(key, 0.0) + (1.0 - b2) * g * g
        state.m[key], state.v[key] = m, v
        new[key] = w - lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
    return new, state


# ----------------------------------------------------------------- datasets


@dataclass
class GraphDataset:
    graphs: list
    labels: np.ndarray
    train: np.ndarray
    dev: np.ndarray
    test: np.ndarray

    @property
    def in_dim(self):
        return self.graphs[0].features.shape[1]


def load_dataset(config: TrainConfig):
    """A :class:`Graph` for node tasks, a :class:`GraphDataset` for graph tasks."""
    if config.dataset.startswith("synth:"):
        kind = config.dataset[len("synth:") :]
        if kind not in SYNTHETIC or config.task != "node":
            raise DatasetError(f"unknown synthetic node dataset {config.dataset!r}; choose from {sorted(SYNTHETIC)}")
        return SYNTHETIC[kind](seed=config.split_seed)
    if config.task == "node":
        return load_node_dataset(config.dataset)
    graphs, labels = load_tudataset(config.dataset, zscore=config.zscore)
    train, dev, test = split_tudataset(labels, config.split_seed)
    return GraphDataset(graphs, labels, train, dev, test)


# ----------------------------------------------------------------- model


class Model:
    """Encoder plus classification head sharing one flat parameter dict."""

    def __init__(self, config: TrainConfig, in_dim: int, num_classes: int):
        kwargs = {"nonlinearity": config.nonlinearity, "reeig_eps": config.reeig_eps}
        geometry = make_geometry(config.geometry, config.dim, **(kwargs if config.geometry == "spd" else {}))
        self.geometry = geometry
        self.task = config.task
        self.encoder = GNNEncoder(
            ModelConfig(config.arch, geometry, in_dim, num_layers=config.num_layers, dropout=config.dropout)
        )
        self.head: Head = make_head(config.classifier, geometry, num_classes, config.C)

    def init_params(self, rng) -> dict:
        params = self.encoder.init_params(rng)
        params.update({f"head.{k}": v for k, v in self.head.init_params(rng).items()})
        return params

    def points(self, params, graph: Graph, train=False, rng=None, layer_hook=None, pool=None):
        """Node embeddings, or per-graph means when ``pool`` is given."""
        Z = self.encoder.embed(params, graph, train=train, rng=rng, layer_hook=layer_hook)
        if pool is not None:
            Z = graph_readout_mean(self.geometry, Z, pool)
        return Z

    def loss_and_scores(self, params, Z, labels):
        hp = scope(params, "head")
        return self.head.loss(hp, Z, labels), self.head.scores(hp, Z)


def _accuracy(scores, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return float("nan")
    return float(np.mean(np.argmax(ad.value_of(scores), axis=-1) == labels))


_NUMERIC_FAILURES = (Overflow, NonFinite, NotPositiveDefinite, NoConvergence)


class _Task:
    """Shared evaluation plumbing for node and graph tasks."""

    def __init__(self, model: Model, data):
        self.model = model
        self.data = data

    def split(self, params, name, hook=None):
        raise NotImplementedError

    def train_batches(self, rng):
        raise NotImplementedError

    def evaluate(self, params, name, hook=None):
        Z, labels = self.split(params, name, hook)
        loss, scores = self.model.loss_and_scores(params, Z, labels)
        return float(ad.value_of(loss)), _accuracy(scores, labels)


class _NodeTask(_Task):
    def __init__(self, model, graph: Graph):
        super().__init__(model, graph)
        if graph.labels is None or graph.train_mask is None:
            raise DatasetError("node task needs labels and train/val/test masks")
        self.idx = {
            "train": np.flatnonzero(graph.train_mask),
            "val": np.flatnonzero(graph.val_mask),
            "test": np.flatnonzero(graph.test_mask),
        }
        for key in ("train", "val"):
            if self.idx[key].size == 0:
                raise DatasetError(f"node split '{key}' is empty")

    def split(self, params, name, hook=None):
        Z = self.model.points(params, self.data, layer_hook=hook)
        idx = self.idx[name]
        return ad.gather_rows(Z, idx), self.data.labels[idx]

    def train_batches(self, rng):
        idx = self.idx["train"]
        yield lambda params, hook: (
            ad.gather_rows(self.model.points(params, self.data, True, rng, hook), idx),
            self.data.labels[idx],
        )


class _GraphTask(_Task):
    def __init__(self, model, data: GraphDataset, batch_size: int):
        super().__init__(model, data)
        self.batch_size = batch_size
        self.idx = {"train": data.train, "val": data.dev, "test": data.test}
        self._unions = {name: self._union(ix) for name, ix in self.idx.items() if ix.size}

    def _union(self, ix):
        return disjoint_union([self.data.graphs[i] for i in ix])

    def split(self, params, name, hook=None):
        union, pool = self._unions[name]
        return self.model.points(params, union, layer_hook=hook, pool=pool), self.data.labels[self.idx[name]]

    def train_batches(self, rng):
        order = rng.permutation(self.idx["train"])
        for start in range(0, len(order), self.batch_size):
            ix = order[start : start + self.batch_size]
            union, pool = self._union(ix)
            labels = self.data.labels[ix]
            yield lambda params, hook, union=union, pool=pool, labels=labels: (
                self.model.points(params, union, True, rng, hook, pool=pool),
                labels,
            )


def build(config: TrainConfig, dataset=None):
    """Load data (unless given) and construct the model and task driver."""
    data = load_dataset(config) if dataset is None else dataset
    if config.task == "node":
        if not isinstance(data, Graph):
            raise DatasetError("node task needs a single graph")
        num_classes = int(data.labels.max()) + 1
        model = Model(config, data.features.shape[1], num_classes)
        return model, _NodeTask(model, data)
    if not isinstance(data, GraphDataset):
        raise DatasetError("graph task needs a graph dataset")
    model = Model(config, data.in_dim, int(data.labels.max()) + 1)
    return model, _GraphTask(model, data, config.batch_size)


# ----------------------------------------------------------------- training


def train_seed(config: TrainConfig, seed: int, dataset=None, layer_hook=None, built=None):
    """Train one seed; returns ``(RunRecord, best_params)``.

    Early stopping watches the dev loss; the parameters of the best dev-loss
    epoch are restored before the test accuracy is computed.
    """
    model, task = build(config, dataset) if built is None else built
    config_hash = config.hash()
    rng = np.random.default_rng(derived_seed(config_hash, seed))
    params = model.init_params(rng)
    state = AdamState()
    record = RunRecord(config_hash, int(seed))
    best_params = params

    for epoch in range(config.max_epochs):
        start = time.perf_counter()
        losses, correct, seen = [], 0, 0
        # overflow surfaces as a non-finite loss or gradient, which is checked explicitly
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                for batch in task.train_batches(rng):
                    tape = ad.Tape()
                    tensors = {k: tape.param(v) for k, v in params.items()}
                    Z, labels = batch(tensors, layer_hook)
                    loss, scores = model.loss_and_scores(tensors, Z, labels)
                    value = float(ad.value_of(loss))
                    if not np.isfinite(value):
                        raise DivergedTraining(f"non-finite training loss at epoch {epoch}")
                    grads = ad.backward(tape, loss)
                    grads = clip_by_global_norm({k: grads[t] for k, t in tensors.items()}, config.grad_clip)
                    params, state = adam_step(params, grads, state, config.lr, config.weight_decay)
                    losses.append(value * len(labels))
                    correct += int(np.sum(np.argmax(ad.value_of(scores), axis=-1) == labels))
                    seen += len(labels)
                val_loss, val_acc = task.evaluate(params, "val", layer_hook)
            except _NUMERIC_FAILURES as exc:
                raise DivergedTraining(f"numerical failure at epoch {epoch}: {exc}") from exc
        if not np.isfinite(val_loss):
            raise DivergedTraining(f"non-finite dev loss at epoch {epoch}")
        record.log_epoch(
            epoch, sum(losses) / seen, correct / seen, val_loss, val_acc, time.perf_counter() - start
        )
        if val_loss < record.best_val_loss:
            record.best_val_loss, record.best_val_acc, record.best_epoch = val_loss, val_acc, epoch
            best_params = params
        elif epoch - record.best_epoch >= config.patience:
            record.stopped_early = True
            break

    if task.idx["test"].size:
        try:
            record.test_acc = task.evaluate(best_params, "test")[1]
        except _NUMERIC_FAILURES as exc:
            raise DivergedTraining(f"numerical failure on the test split: {exc}") from exc
    return record, best_params


def save_checkpoint(path, params: dict) -> None:
    np.savez(path, **params)


def load_checkpoint(path) -> dict:
    with np.load(path) as data:
        return {k: data[k] for k in data.files}


def train(config: TrainConfig, dataset=None, layer_hook=None) -> list:
    """Train every seed, writing ``runs/<hash>/record.jsonl`` and one checkpoint per seed."""
    built = build(config, dataset)
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    log_path = run_dir / "record.jsonl"
    kept = [r for r in read_records(log_path) if r.seed not in config.seeds] if log_path.is_file() else []
    records = []
    for seed in config.seeds:
        record, params = train_seed(config, seed, layer_hook=layer_hook, built=built)
        save_checkpoint(run_dir / f"seed_{seed}.npz", params)
        records.append(record)
    with open(log_path, "w", encoding="utf-8") as fh:
        for record in sorted(kept + records, key=lambda r: r.seed):
            fh.write(record.to_json() + "\n")
    return records


# ----------------------------------------------------------------- grid search


def grid_space(config: TrainConfig) -> list:
    """Override dicts for the Cartesian grid that applies to ``config``."""
    axes = ["lr", "dropout", "weight_decay"]
    if config.geometry == "spd":
        axes.append("nonlinearity")
    if config.classifier in MARGIN_HEADS:
        axes.append("C")
    return [dict(zip(axes, values)) for values in itertools.product(*(GRID[a] for a in axes))]


def _grid_key(entry):
    return (-entry["dev_acc"], entry["overrides"]["lr"], json.dumps(entry["overrides"], sort_keys=True))


def _run_grid_point(config_dict, overrides, dataset):
    cfg = TrainConfig.from_dict({**config_dict, **overrides})
    try:
        records = train(cfg, dataset)
    except DivergedTraining as exc:
        # a diverging grid point ranks last instead of aborting the search
        return {"hash": cfg.hash(), "overrides": overrides, "dev_acc": 0.0, "test_acc": 0.0, "diverged": str(exc)}
    return {
        "hash": cfg.hash(),
        "overrides": overrides,
        "dev_acc": float(np.mean([r.best_val_acc for r in records])),
        "test_acc": float(np.mean([r.test_acc for r in records])),
    }


def grid_search(config: TrainConfig, space=None, threads: int = 1, dataset=None):
    """Train every grid point not already logged in ``gridsearch.jsonl``.

    Returns ``(best_config, leaderboard)``; the leaderboard is sorted by dev
    accuracy, ties broken by the smaller learning rate and then by the
    override dict's JSON text.
    """
    space = grid_space(config) if space is None else list(space)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "gridsearch.jsonl"
    done = {}
    if log_path.is_file():
        for line in log_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                entry = json.loads(line)
                done[entry["hash"]] = entry

    base = config.to_dict()
    todo = [o for o in space if config.replace(**o).hash() not in done]
    with open(log_path, "a", encoding="utf-8") as log:

        def record(entry):
            done[entry["hash"]] = entry
            log.write(json.dumps(entry, sort_keys=True) + "\n")
            log.flush()

        if threads > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                futures = [pool.submit(_run_grid_point, base, o, dataset) for o in todo]
                for future in futures:
                    record(future.result())
        else:
            for o in todo:
                record(_run_grid_point(base, o, dataset))

    wanted = {config.replace(**o).hash() for o in space}
    leaderboard = sorted((done[h] for h in wanted), key=_grid_key)
    with open(out / "leaderboard.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "hash", "dev_acc", "test_acc", "overrides"])
        for rank, entry in enumerate(leaderboard, start=1):
            writer.writerow(
                [rank, entry["hash"], repr(entry["dev_acc"]), repr(entry["test_acc"]),
                 json.dumps(entry["overrides"], sort_keys=True)]
            )
    best = config.replace(**leaderboard[0]["overrides"]) if leaderboard else None
    return best, leaderboard


# ----------------------------------------------------------------- evaluation

SUMMARY_FIELDS = ("dataset", "arch", "geometry", "dim", "classifier", "config_hash", "seeds", "mean", "std")


def summarize(accuracies) -> tuple:
    """Mean and population standard deviation."""
    acc = np.asarray(accuracies, dtype=np.float64)
    return float(acc.mean()), float(acc.std())


def evaluate(config: TrainConfig, checkpoint=None, dataset=None) -> dict:
    """Test accuracy over all seeds, training those without a checkpoint.

    ``checkpoint`` is a run directory holding ``seed_<s>.npz`` files
    (default: ``config.run_dir()``).  Upserts one row in ``<out>/summary.csv``.
    """
    model, task = build(config, dataset)
    run_dir = Path(checkpoint) if checkpoint is not None else config.run_dir()
    missing = [s for s in config.seeds if not (run_dir / f"seed_{s}.npz").is_file()]
    if missing:
        if checkpoint is not None:
            raise DatasetError(f"no checkpoint for seeds {missing} in {run_dir}")
        train(config.replace(seeds=missing), dataset=task.data)
    accs = []
    for seed in config.seeds:
        params = load_checkpoint(run_dir / f"seed_{seed}.npz")
        accs.append(task.evaluate(params, "test")[1])
    mean, std = summarize(accs)
    row = {
        "dataset": Path(config.dataset).name if not config.dataset.startswith("synth:") else config.dataset,
        "arch": config.arch,
        "geometry": config.geometry,
        "dim": str(config.dim),
        "classifier": config.classifier,
        "config_hash": config.hash(),
        "seeds": " ".join(str(s) for s in config.seeds),
        "mean": repr(mean),
        "std": repr(std),
    }
    _upsert_summary(Path(config.out) / "summary.csv", row)
    return {"mean": mean, "std": std, "accuracies": accs, "row": row}


def _upsert_summary(path: Path, row: dict) -> None:
    rows = []
    if path.is_file():
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
    key = ("dataset", "arch", "geometry")
    rows = [r for r in rows if tuple(r[k] for k in key) != tuple(row[k] for k in key)]
    rows.append(row)
    rows.sort(key=lambda r: tuple(r[k] for k in key))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def export_embeddings(config: TrainConfig, checkpoint, out, dataset=None) -> Path:
    """CSV rows ``id, label, t_1..t_D`` of log-mapped, vectorized embeddings.

    Node task: one row per node.  Graph task: one row per graph (mean readout).
    """
    model, task = build(config, dataset)
    params = load_checkpoint(checkpoint)
    if config.task == "node":
        graph = task.data
        Z = model.points(params, graph)
        labels = graph.labels
    else:
        union, pool = disjoint_union(task.data.graphs)
        Z = model.points(params, union, pool=pool)
        labels = task.data.labels
    T = ad.value_of(model.geometry.tangent_vectors(Z))
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "label"] + [f"t{i}" for i in range(T.shape[1])])
        for i, (y, t) in enumerate(zip(labels, T)):
            writer.writerow([i, int(y)] + [repr(float(x)) for x in t])
    return out

