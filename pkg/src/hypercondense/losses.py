"""Dual-level discrimination objective.

* coarse: cosine alignment of matched class prototypes plus the summed cosine
  of every mismatched (original class i, synthetic class j) pair;
* fine: per synthetic node, an InfoNCE term with one same-class positive and
  ``n_neg`` other-class negatives drawn from the original training nodes,
  using raw inner products of diffused features;
* the two are blended with a quarter-period cosine/sine schedule.
"""
from __future__ import annotations

import logging
import math

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DegeneratePrototype

log = logging.getLogger(__name__)


def one_hot(labels, num_classes) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def prototypes(features, labels, num_classes):
    """Class sums ``Y^T X`` (unnormalized)."""
    return ag.matmul(one_hot(labels, num_classes).T, features)


def _check_prototypes(C, which):
    data = C.data if isinstance(C, Tensor) else np.asarray(C)
    norms = np.linalg.norm(data, axis=1)
    if (norms == 0).any():
        raise DegeneratePrototype(f"{which} prototype of class {int(np.argmin(norms))} has zero norm")


def coarse_loss(C_orig, C_synth) -> Tensor:
    _check_prototypes(C_orig, "original")
    _check_prototypes(C_synth, "synthetic")
    cos = ag.cosine_similarity(C_orig, C_synth)
    c = cos.shape[0]
    # +1 off the diagonal (mismatch penalty), -1 on it (alignment reward)
    sign = np.ones((c, c)) - 2.0 * np.eye(c)
    return ag.add(ag.reduce_sum(ag.elementwise_mul(cos, sign)), float(c))


def alignment_term(C_orig, C_synth) -> float:
    a = np.asarray(C_orig, float)
    b = np.asarray(C_synth, float)
    cos = (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return float((1.0 - cos).sum())


def sample_contrast(train_labels, synth_labels, n_neg, rng) -> np.ndarray:
    """Index matrix (N', 1 + n_neg) into the training pool: column 0 is the
    positive, the rest are negatives (without replacement when possible)."""
    train_labels = np.asarray(train_labels)
    out = np.empty((len(synth_labels), 1 + n_neg), dtype=np.int64)
    pools = {}
    for i, c in enumerate(synth_labels):
        if c not in pools:
            pools[c] = (np.flatnonzero(train_labels == c), np.flatnonzero(train_labels != c))
        pos, neg = pools[c]
        out[i, 0] = pos[rng.integers(pos.size)]
        if neg.size >= n_neg:
            out[i, 1:] = rng.choice(neg, size=n_neg, replace=False)
        else:
            log.warning("class %d: only %d negatives available for %d draws; sampling with replacement",
                        c, neg.size, n_neg)
            out[i, 1:] = rng.choice(neg, size=n_neg, replace=True)
    return out


def contrast_terms(Xs, X_pool, cand) -> Tensor:
    """Per-node loss ``logsumexp(s_pos, s_neg...) - s_pos`` as an (N',) tensor."""
    uniq, inv = np.unique(cand, return_inverse=True)
    inv = inv.reshape(cand.shape)
    sims_all = ag.matmul(Xs, np.ascontiguousarray(np.asarray(X_pool)[uniq].T))
    rows = np.repeat(np.arange(cand.shape[0])[:, None], cand.shape[1], axis=1)
    sims = ag.index(sims_all, (rows, inv))
    return ag.sub(ag.logsumexp(sims, axis=1), ag.index(sims, (slice(None), 0)))


def fine_loss(Xs, X_pool, pool_labels, synth_labels, n_neg, rng) -> Tensor:
    cand = sample_contrast(pool_labels, synth_labels, n_neg, rng)
    return ag.reduce_sum(contrast_terms(Xs, X_pool, cand))


def schedule(t, T) -> tuple[float, float]:
    a = math.pi * t / (2.0 * T)
    return math.cos(a), math.sin(a)


def total_loss(t, T, L_c, L_f):
    w_c, w_f = schedule(t, T)
    return ag.add(ag.scalar_mul(L_c, w_c), ag.scalar_mul(L_f, w_f))
