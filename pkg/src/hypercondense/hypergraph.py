"""Hypergraph containers, dataset I/O, stratified splits and the normalized
propagation operator ``Dv^-1/2 H De^-1 H^T Dv^-1/2``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    CannotStratify,
    DegenerateDegree,
    DimensionMismatch,
    EmptyHyperedge,
    LabelOutOfRange,
    ParseError,
    ShapeMismatch,
)
from .seeding import substream

TEXT_MAGIC = "# hypercondense-text v1"


@dataclass
class LabelAudit:
    """Counts label reads per split. Condensation must never touch test labels."""

    test_reads: int = 0
    val_reads: int = 0
    train_reads: int = 0

    def reset(self):
        self.test_reads = self.val_reads = self.train_reads = 0


@dataclass(frozen=True)
class DegreePair:
    d_v: np.ndarray
    d_e: np.ndarray

    @property
    def isolated(self) -> np.ndarray:
        return self.d_v == 0


def _readonly(a):
    a = np.asarray(a)
    a.setflags(write=False)
    return a


class Hypergraph:
    """Attributed hypergraph with binary incidence, labels and split masks.

    ``incidence`` is the N x M node-to-edge CSR matrix exactly as loaded;
    ``incidence_t`` is its M x N transpose. Nodes that belong to no hyperedge
    are kept as-is and receive a singleton self-hyperedge only inside the
    propagation operator (see :func:`augmented_incidence`).
    """

    def __init__(self, edges, features, labels, num_classes=None, masks=None, name="hypergraph"):
        features = np.ascontiguousarray(np.asarray(features, dtype=np.float64))
        if features.ndim != 2:
            raise DimensionMismatch(f"features must be a 2-D matrix, got shape {features.shape}")
        n = features.shape[0]
        labels = np.asarray(labels)
        if labels.shape != (n,):
            raise DimensionMismatch(f"labels has length {labels.shape[0] if labels.ndim else 0}, expected {n}")
        if not np.issubdtype(labels.dtype, np.integer):
            if not np.all(np.mod(labels, 1) == 0):
                raise LabelOutOfRange("labels must be integers")
        labels = labels.astype(np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if n else 0
        bad = np.flatnonzero((labels < 0) | (labels >= num_classes))
        if bad.size:
            raise LabelOutOfRange(
                f"node {bad[0]}: label {labels[bad[0]]} outside [0, {num_classes})")

        rows, cols = [], []
        for j, e in enumerate(edges):
            members = np.unique(np.asarray(list(e), dtype=np.int64))
            if members.size == 0:
                raise EmptyHyperedge(f"hyperedge {j} is empty")
            if members[0] < 0 or members[-1] >= n:
                raise DimensionMismatch(f"hyperedge {j}: node id out of range [0, {n})")
            rows.append(members)
            cols.append(np.full(members.size, j, dtype=np.int64))
        m = len(rows)
        r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
        c = np.concatenate(cols) if cols else np.zeros(0, np.int64)
        inc = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n, m))
        inc.sort_indices()

        self.name = name
        self.num_nodes = n
        self.num_edges = m
        self.num_classes = int(num_classes)
        self.incidence = inc
        self.incidence_t = inc.T.tocsr()
        self.incidence_t.sort_indices()
        self.features = _readonly(features)
        self._labels = _readonly(labels)
        self.audit = LabelAudit()
        if masks is None:
            masks = (np.zeros(n, bool),) * 3
        self.train_mask, self.val_mask, self.test_mask = (_readonly(np.asarray(x, bool).copy()) for x in masks)
        self._check_masks()

    def _check_masks(self):
        for m in (self.train_mask, self.val_mask, self.test_mask):
            if m.shape != (self.num_nodes,):
                raise DimensionMismatch(f"mask length {m.shape} != ({self.num_nodes},)")
        overlap = (self.train_mask.astype(int) + self.val_mask + self.test_mask) > 1
        if overlap.any():
            raise DimensionMismatch(f"split masks overlap at node {np.flatnonzero(overlap)[0]}")
        if self.train_mask.any():
            present = np.bincount(self._labels[self.train_mask], minlength=self.num_classes)
            if (present == 0).any():
                raise CannotStratify(f"class {int(np.argmin(present))} has no training node")

    # -- label access (audited) -------------------------------------------------
    def labels_of(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        self.audit.test_reads += int(self.test_mask[idx].sum())
        self.audit.val_reads += int(self.val_mask[idx].sum())
        self.audit.train_reads += int(self.train_mask[idx].sum())
        return self._labels[idx]

    @property
    def labels(self) -> np.ndarray:
        return self.labels_of(np.arange(self.num_nodes))

    @property
    def train_index(self):
        return np.flatnonzero(self.train_mask)

    @property
    def val_index(self):
        return np.flatnonzero(self.val_mask)

    @property
    def test_index(self):
        return np.flatnonzero(self.test_mask)

    @property
    def edges(self) -> list[np.ndarray]:
        t = self.incidence_t
        return [t.indices[t.indptr[j]:t.indptr[j + 1]] for j in range(self.num_edges)]

    @property
    def total_edge_size(self) -> int:
        return int(self.incidence.nnz)

    def degrees(self) -> DegreePair:
        d_v = np.asarray(self.incidence.sum(axis=1)).ravel()
        d_e = np.asarray(self.incidence.sum(axis=0)).ravel()
        return DegreePair(d_v, d_e)

    def with_masks(self, train, val, test) -> "Hypergraph":
        return Hypergraph(self.edges, self.features, self._labels, self.num_classes,
                          (train, val, test), self.name)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64([self.num_nodes, self.num_edges, self.num_classes]).tobytes())
        h.update(self.features.tobytes())
        h.update(self._labels.tobytes())
        h.update(self.incidence.indptr.astype(np.int64).tobytes())
        h.update(self.incidence.indices.astype(np.int64).tobytes())
        return h.hexdigest()

    def __repr__(self):
        return (f"Hypergraph({self.name!r}, N={self.num_nodes}, M={self.num_edges}, "
                f"d={self.features.shape[1]}, C={self.num_classes})")


@dataclass
class CondensedHypergraph:
    """Synthetic hypergraph. Row ``i`` of ``incidence`` is the hyperedge
    induced by anchor ``i``; entries are nonnegative membership weights."""

    features: np.ndarray
    incidence: np.ndarray
    labels: np.ndarray
    num_classes: int
    losses: list = field(default_factory=list)

    @property
    def num_nodes(self):
        return self.features.shape[0]

    def validate(self):
        if (self.incidence < 0).any():
            raise ValueError("negative incidence weight")
        empty = np.flatnonzero((self.incidence > 0).sum(axis=1) == 0)
        if empty.size:
            raise EmptyHyperedge(f"condensed hyperedge {empty[0]} is empty")


# -- propagation ---------------------------------------------------------------

def augmented_incidence(h: Hypergraph) -> sp.csr_matrix:
    """Incidence with one singleton hyperedge appended per isolated node."""
    iso = np.flatnonzero(h.degrees().isolated)
    if iso.size == 0:
        return h.incidence
    extra = sp.csr_matrix((np.ones(iso.size), (iso, np.arange(iso.size))),
                          shape=(h.num_nodes, iso.size))
    return sp.hstack([h.incidence, extra], format="csr")


class PropagationOperator:
    """Applies P = Dv^-1/2 H De^-1 H^T Dv^-1/2 without forming P."""

    def __init__(self, incidence):
        inc = sp.csr_matrix(incidence, dtype=np.float64)
        d_v = np.asarray(inc.sum(axis=1)).ravel()
        d_e = np.asarray(inc.sum(axis=0)).ravel()
        if (d_e <= 0).any():
            raise DegenerateDegree(f"hyperedge {int(np.argmin(d_e))} has zero degree")
        if (d_v <= 0).any():
            raise DegenerateDegree(f"node {int(np.argmin(d_v))} has zero degree")
        self.shape = (inc.shape[0], inc.shape[0])
        self.d_v, self.d_e = d_v, d_e
        self._b = sp.diags(d_v ** -0.5) @ inc
        self._b = self._b.tocsr()
        self._bt = self._b.T.tocsr()
        self._inv_de = 1.0 / d_e

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.shape[1]:
            raise ShapeMismatch("propagate", self.shape, x.shape)
        edge = self._bt @ x
        edge = edge * (self._inv_de[:, None] if edge.ndim == 2 else self._inv_de)
        return self._b @ edge

    __matmul__ = __call__

    def matrix(self) -> sp.csr_matrix:
        p = (self._b @ sp.diags(self._inv_de) @ self._bt).tocsr()
        # summation order can differ by an ulp between (i, j) and (j, i)
        p = ((p + p.T) * 0.5).tocsr()
        p.sort_indices()
        return p


def propagation_operator(h: Hypergraph) -> PropagationOperator:
    return PropagationOperator(augmented_incidence(h))


def propagation_matrix(h: Hypergraph) -> sp.csr_matrix:
    return propagation_operator(h).matrix()


# -- splits --------------------------------------------------------------------

def largest_remainder(quotas, total, minimum=0):
    """Integer apportionment of ``total`` seats proportional to ``quotas``.

    Seats left after flooring go to the largest fractional remainders (ties to
    the lower index). ``minimum`` seats are guaranteed per entry; excess is
    reclaimed from entries with the smallest remainders that sit above it.
    """
    quotas = np.asarray(quotas, dtype=np.float64)
    counts = np.floor(quotas + 1e-12).astype(np.int64)
    rem = quotas - counts
    counts = np.maximum(counts, minimum)
    order = sorted(range(len(quotas)), key=lambda i: (-rem[i], i))
    k = 0
    while counts.sum() < total:
        counts[order[k % len(order)]] += 1
        k += 1
    # reclaim from the least deserving entries first
    surplus = counts - quotas
    while counts.sum() > total:
        cand = [i for i in range(len(quotas)) if counts[i] > minimum]
        if not cand:
            break
        i = max(cand, key=lambda i: (surplus[i], i))
        counts[i] -= 1
        surplus[i] -= 1
    return counts


def make_splits(h: Hypergraph, fractions=(0.5, 0.25, 0.25), seed=0) -> Hypergraph:
    """Class-stratified train/val/test masks.

    Global split sizes are ``round(f * N)``; within each split, seats are
    apportioned to classes by largest remainder with at least one training
    node per class.
    """
    f_train, f_val, _ = fractions
    labels = h._labels
    n = h.num_nodes
    counts = np.bincount(labels, minlength=h.num_classes)
    small = np.flatnonzero(counts < 3)
    if small.size:
        raise CannotStratify(f"class {small[0]} has only {counts[small[0]]} node(s); need >= 3")
    n_train = int(np.floor(f_train * n + 0.5))
    n_val = int(np.floor(f_val * n + 0.5))
    per_train = largest_remainder(counts * f_train, n_train, minimum=1)
    per_val = largest_remainder(counts * f_val, n_val, minimum=0)
    per_val = np.minimum(per_val, counts - per_train)
    rng = substream(seed, "split")
    train = np.zeros(n, bool)
    val = np.zeros(n, bool)
    test = np.zeros(n, bool)
    for c in range(h.num_classes):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        a, b = per_train[c], per_train[c] + per_val[c]
        train[idx[:a]] = True
        val[idx[a:b]] = True
        test[idx[b:]] = True
    return h.with_masks(train, val, test)


# -- I/O -----------------------------------------------------------------------

def _masks_from_doc(doc, n):
    m = doc.get("masks")
    if not m:
        return None
    out = []
    for key in ("train", "val", "test"):
        mask = np.zeros(n, bool)
        mask[np.asarray(m.get(key, []), dtype=np.int64)] = True
        out.append(mask)
    return tuple(out)


def _load_json(path: Path) -> Hypergraph:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    for key in ("features", "edges", "labels"):
        if key not in doc:
            raise ParseError(f"{path}: missing key {key!r}")
    feats = doc["features"]
    if feats:
        d = len(feats[0])
        for i, row in enumerate(feats):
            if len(row) != d:
                raise DimensionMismatch(f"{path}: features[{i}] has {len(row)} values, expected {d}")
    for j, e in enumerate(doc["edges"]):
        if len(e) == 0:
            raise EmptyHyperedge(f"{path}: edges[{j}] is empty")
    n = len(feats)
    feats = np.asarray(feats, dtype=np.float64).reshape(n, -1)
    return Hypergraph(doc["edges"], feats, doc["labels"], doc.get("num_classes"),
                      _masks_from_doc(doc, n), doc.get("name", path.stem))


def _load_text(path: Path) -> Hypergraph:
    """Line format::

        # hypercondense-text v1
        header <N> <d> <C>
        n <label> <v_1> ... <v_d>        one per node, dense
        s <label> <i>:<v> <i>:<v> ...    or sparse (0-based column ids)
        e <node> <node> ...              one per hyperedge
        split <train|val|test> <node> ...  optional
    """
    feats = labels = None
    n = d = c = None
    edges = []
    splits = {}
    k = 0
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            kind = tok[0]
            try:
                if kind == "header":
                    n, d, c = (int(t) for t in tok[1:4])
                    feats = np.zeros((n, d))
                    labels = np.zeros(n, np.int64)
                elif kind in ("n", "s"):
                    if feats is None:
                        raise ParseError(f"{path}:{lineno}: node record before header")
                    if k >= n:
                        raise DimensionMismatch(f"{path}:{lineno}: more than {n} node records")
                    labels[k] = int(tok[1])
                    if kind == "n":
                        if len(tok) - 2 != d:
                            raise DimensionMismatch(
                                f"{path}:{lineno}: {len(tok) - 2} feature values, expected {d}")
                        feats[k] = [float(t) for t in tok[2:]]
                    else:
                        for t in tok[2:]:
                            col, val = t.split(":")
                            col = int(col)
                            if not 0 <= col < d:
                                raise DimensionMismatch(f"{path}:{lineno}: column {col} outside [0, {d})")
                            feats[k, col] = float(val)
                    k += 1
                elif kind == "e":
                    if len(tok) == 1:
                        raise EmptyHyperedge(f"{path}:{lineno}: empty hyperedge")
                    edges.append([int(t) for t in tok[1:]])
                elif kind == "split":
                    splits.setdefault(tok[1], []).extend(int(t) for t in tok[2:])
                else:
                    raise ParseError(f"{path}:{lineno}: unknown record type {kind!r}")
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if feats is None:
        raise ParseError(f"{path}: missing header line")
    if k != n:
        raise DimensionMismatch(f"{path}: {k} node records, header says {n}")
    for j, e in enumerate(edges):
        bad = [v for v in e if not 0 <= v < n]
        if bad:
            raise DimensionMismatch(f"{path}: hyperedge {j} references node {bad[0]} outside [0, {n})")
    masks = _masks_from_doc({"masks": splits}, n) if splits else None
    return Hypergraph(edges, feats, labels, c, masks, path.stem)


def load_hypergraph(path, format=None) -> Hypergraph:
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "text"
    if format == "json":
        return _load_json(path)
    if format == "text":
        return _load_text(path)
    raise ValueError(f"unknown format {format!r}")


def save_hypergraph(h: Hypergraph, path, format=None):
    path = Path(path)
    if format is None:
        format = "json" if path.suffix.lower() == ".json" else "text"
    labels = h._labels
    masks = {k: np.flatnonzero(m).tolist() for k, m in
             (("train", h.train_mask), ("val", h.val_mask), ("test", h.test_mask)) if m.any()}
    if format == "json":
        doc = {"name": h.name, "num_classes": h.num_classes,
               "features": h.features.tolist(), "edges": [e.tolist() for e in h.edges],
               "labels": labels.tolist()}
        if masks:
            doc["masks"] = masks
        path.write_text(json.dumps(doc))
        return
    with path.open("w") as fh:
        fh.write(TEXT_MAGIC + "\n")
        fh.write(f"header {h.num_nodes} {h.features.shape[1]} {h.num_classes}\n")
        for i in range(h.num_nodes):
            nz = np.flatnonzero(h.features[i])
            body = " ".join(f"{j}:{float(h.features[i, j])!r}" for j in nz)
            fh.write(f"s {labels[i]} {body}\n".replace("  ", " "))
        for e in h.edges:
            fh.write("e " + " ".join(map(str, e)) + "\n")
        for key, idx in masks.items():
            fh.write(f"split {key} " + " ".join(map(str, idx)) + "\n")


def edges_from_incidence(inc) -> list[np.ndarray]:
    inc = sp.csc_matrix(inc)
    return [inc.indices[inc.indptr[j]:inc.indptr[j + 1]] for j in range(inc.shape[1])]


def induced_subhypergraph(h: Hypergraph, nodes: Sequence[int], labels=None) -> Hypergraph:
    """Restrict ``h`` to ``nodes`` (relabelled 0..k-1), keeping every hyperedge
    that retains at least one selected member. All nodes become training nodes."""
    nodes = np.asarray(nodes, dtype=np.int64)
    remap = -np.ones(h.num_nodes, np.int64)
    remap[nodes] = np.arange(nodes.size)
    sub = h.incidence[nodes]
    keep = np.flatnonzero(np.asarray(sub.sum(axis=0)).ravel() >= 1)
    edges = edges_from_incidence(sub[:, keep])
    if labels is None:
        labels = h.labels_of(nodes)
    k = nodes.size
    return Hypergraph(edges, h.features[nodes], labels, h.num_classes,
                      (np.ones(k, bool), np.zeros(k, bool), np.zeros(k, bool)), h.name + "-sub")
