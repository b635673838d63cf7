"""Soft benchmark: mean seconds per training epoch for each geometry.

Larger synthetic graphs make the gap between flat, hyperbolic and SPD
embeddings visible. The ordering is informative only; it is not a test.

    python demos/epoch_timing.py [--epochs 20]
"""
import argparse
import statistics
import tempfile

from spdgnn import data
from spdgnn.harness import TrainConfig, train_seed


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--epochs", type=int, default=20)
    args = parser.parse_args()
    graph = data.synth_tree_of_grids(branching=2, depth=4, grid_w=4, grid_h=4)
    print(f"graph: {graph.num_nodes} nodes")
    with tempfile.TemporaryDirectory() as out:
        for geometry, dim in [("euclidean", 6), ("hyperbolic", 6), ("spd", 3)]:
            cfg = TrainConfig(dataset="synth:tree-of-grids", geometry=geometry, dim=dim,
                              max_epochs=args.epochs, patience=args.epochs, out=out)
            record, _ = train_seed(cfg, 0, dataset=graph)
            print(f"{geometry:>10}  {1000 * statistics.mean(record.seconds[1:]):8.2f} ms/epoch")


if __name__ == "__main__":
    main()
