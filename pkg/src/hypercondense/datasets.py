"""Synthetic co-citation-style hypergraphs.

``cora_like`` reproduces the shape of the Cora co-citation hypergraph
(2,708 nodes, 1,579 hyperedges, 7,494 memberships, 1,433 binary bag-of-words
features, 7 classes with Cora's class sizes) with class-correlated features
and homophilous hyperedges. ``planted`` builds small instances for tests.
"""
from __future__ import annotations

import numpy as np

from .hypergraph import Hypergraph, make_splits
from .seeding import substream

CORA_CLASS_SIZES = (818, 426, 418, 351, 298, 217, 180)
CORA_EDGES = 1579
CORA_MEMBERSHIPS = 7494
CORA_FEATURES = 1433


def _edge_sizes(rng, m, total, min_size=2):
    sizes = min_size + rng.geometric(1.0 / (total / m - min_size + 1), size=m) - 1
    # nudge random edges until the membership count matches exactly
    while sizes.sum() != total:
        j = rng.integers(m)
        if sizes.sum() < total:
            sizes[j] += 1
        elif sizes[j] > min_size:
            sizes[j] -= 1
    return sizes


def _bag_of_words(rng, labels, d, num_classes, words_per_node, topic_size, signal):
    topics = [rng.choice(d, size=topic_size, replace=False) for _ in range(num_classes)]
    X = np.zeros((len(labels), d))
    for i, c in enumerate(labels):
        k = 1 + rng.poisson(words_per_node - 1)
        from_topic = rng.random(k) < signal
        words = np.where(from_topic, rng.choice(topics[c], size=k), rng.integers(d, size=k))
        X[i, words] = 1.0
    return X


def _homophilous_edges(rng, labels, sizes, homophily):
    n = len(labels)
    by_class = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
    edges = []
    for size in sizes:
        size = min(int(size), n)
        center = int(rng.integers(n))
        same = by_class[labels[center]]
        members = {center}
        while len(members) < size:
            pool = same if rng.random() < homophily and len(members) < same.size else None
            members.add(int(rng.choice(pool)) if pool is not None else int(rng.integers(n)))
        edges.append(sorted(members))
    return edges


def cora_like(seed=0, homophily=0.6, signal=0.12, words_per_node=18, topic_size=60,
              splits=True) -> Hypergraph:
    rng = substream(seed, "dataset")
    labels = np.repeat(np.arange(len(CORA_CLASS_SIZES)), CORA_CLASS_SIZES)
    labels = labels[rng.permutation(labels.size)]
    X = _bag_of_words(rng, labels, CORA_FEATURES, len(CORA_CLASS_SIZES), words_per_node,
                      topic_size, signal)
    sizes = _edge_sizes(rng, CORA_EDGES, CORA_MEMBERSHIPS)
    edges = _homophilous_edges(rng, labels, sizes, homophily)
    h = Hypergraph(edges, X, labels, len(CORA_CLASS_SIZES), name="cora-like")
    return make_splits(h, seed=seed) if splits else h


def planted(n=60, num_classes=3, d=8, num_edges=30, edge_size=3, homophily=0.8,
            noise=0.5, seed=0, splits=True) -> Hypergraph:
    """Gaussian class means plus noise, homophilous fixed-size hyperedges."""
    rng = substream(seed, "planted")
    labels = np.arange(n) % num_classes
    means = rng.normal(size=(num_classes, d))
    X = means[labels] + noise * rng.normal(size=(n, d))
    sizes = np.full(num_edges, edge_size)
    edges = _homophilous_edges(rng, labels, sizes, homophily)
    h = Hypergraph(edges, X, labels, num_classes, name=f"planted-{seed}")
    return make_splits(h, seed=seed) if splits else h
