"""Label-free structural features of molecular graphs.

The four features are the ones the affinity surrogate consumes: node
count, independent-cycle count (cyclomatic number), rotatable-bond count
(single-order cut edges whose endpoints both have at least two incident
edges), and graph diameter in hops. Labels never enter: two molecules
with the same heavy-atom skeleton get identical features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graphs
from .chem import UnlabelledGraph

__all__ = [
    "StructuralFeatures",
    "FeatureStats",
    "extract",
    "fit_stats",
    "standardize",
]

N_FEATURES = 4


@dataclass(frozen=True)
class StructuralFeatures:
    n_nodes: int
    n_rings: int
    n_rotatable: int
    diameter: int

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.n_nodes, self.n_rings, self.n_rotatable, self.diameter], dtype=np.float64
        )


@dataclass(frozen=True)
class FeatureStats:
    """Per-feature mean and standard deviation fitted on a training corpus."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != (N_FEATURES,) or std.shape != (N_FEATURES,):
            raise ValueError(f"stats must have shape ({N_FEATURES},)")
        if not (np.isfinite(mean).all() and np.isfinite(std).all()):
            raise ValueError("stats must be finite")
        if (std <= 0).any():
            raise ValueError("std entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)


def extract(g: UnlabelledGraph) -> StructuralFeatures:
    """Features of a connected graph; raises ValueError when disconnected."""
    n = g.n_nodes
    if n <= 0:
        raise ValueError("graph has no nodes")
    adj = graphs.adjacency(n, g.edges)
    dist0 = graphs.bfs_distances(adj, 0)
    if any(d < 0 for d in dist0):
        raise ValueError("graph is disconnected")

    n_rings = len(g.edges) - n + 1

    cut = graphs.bridges(n, g.edges)
    edge_count = [len(a) for a in adj]
    n_rotatable = sum(
        1
        for i, j, order in g.edges
        if order == 1 and (i, j) in cut and edge_count[i] >= 2 and edge_count[j] >= 2
    )

    diameter = 0
    for start in range(n):
        ecc = max(graphs.bfs_distances(adj, start))
        if ecc > diameter:
            diameter = ecc

    return StructuralFeatures(n, n_rings, n_rotatable, diameter)


def fit_stats(features: list[StructuralFeatures]) -> FeatureStats:
    """Population mean/std per feature; zero spread maps to std 1."""
    if not features:
        raise ValueError("cannot fit stats on an empty corpus")
    mat = np.stack([f.as_array() for f in features])
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return FeatureStats(mean, std)


def standardize(f: StructuralFeatures, stats: FeatureStats) -> np.ndarray:
    return (f.as_array() - stats.mean) / stats.std
