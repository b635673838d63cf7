"""Graph neural networks with node embeddings on SPD manifolds, plus Euclidean,
Poincare-ball and product-space baselines, in numpy."""
from . import autodiff, classifiers, data, gnn, harness, manifolds, symcore
from .graph import Graph, disjoint_union

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "autodiff",
    "classifiers",
    "data",
    "disjoint_union",
    "gnn",
    "harness",
    "manifolds",
    "symcore",
]
