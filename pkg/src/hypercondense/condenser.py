"""The condensation loop.

Labels are fixed up front by apportioning the training class histogram,
features are initialized from diffused class samples, then features and the
structure generator are updated alternately (``tau1`` feature epochs, then
``tau2`` structure epochs) on the blended discrimination objective.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tape, Tensor
from .config import RunConfig
from .diffusion import DiffusedFeatures, diffuse_features, hkpr_diffuse, truncation_order
from .errors import NonFiniteLoss, TooFewSyntheticNodes
from .hypergraph import CondensedHypergraph, Hypergraph, largest_remainder, propagation_operator
from .losses import coarse_loss, fine_loss, prototypes, schedule
from .optim import Adam
from .seeding import substream
from .structure import StructureGenerator, condensed_propagation, generate_structure

log = logging.getLogger(__name__)


def synthetic_size(num_nodes, ratio) -> int:
    return int(math.floor(ratio * num_nodes + 0.5))


def apportion(class_counts, n_synth) -> np.ndarray:
    class_counts = np.asarray(class_counts, dtype=np.float64)
    if n_synth < len(class_counts):
        raise TooFewSyntheticNodes(
            f"{n_synth} synthetic nodes cannot cover {len(class_counts)} classes")
    quotas = class_counts / class_counts.sum() * n_synth
    return largest_remainder(quotas, n_synth, minimum=1)


def synthesize_labels(h: Hypergraph, ratio=None, n_synth=None) -> np.ndarray:
    """Synthetic label vector, sorted by class, following the training histogram."""
    if n_synth is None:
        n_synth = synthetic_size(h.num_nodes, ratio)
    counts = np.bincount(h.labels_of(h.train_index), minlength=h.num_classes)
    per_class = apportion(counts, n_synth)
    return np.repeat(np.arange(h.num_classes), per_class)


def init_features(pool_features, pool_labels, synth_labels, s, rng) -> np.ndarray:
    """Mean of ``s`` uniformly drawn same-class pool rows per synthetic node
    (without replacement, or with replacement when the class has fewer than s)."""
    pool_features = np.asarray(pool_features)
    out = np.empty((len(synth_labels), pool_features.shape[1]))
    for i, c in enumerate(synth_labels):
        members = np.flatnonzero(pool_labels == c)
        pick = rng.choice(members, size=s, replace=members.size < s)
        out[i] = pool_features[pick].mean(axis=0)
    return out


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    w_coarse: float
    w_fine: float
    coarse: float
    fine: float
    total: float


class Condenser:
    """Holds the state of one condensation run; :meth:`run` executes it."""

    def __init__(self, h: Hypergraph, cfg: RunConfig, diffused: DiffusedFeatures | None = None):
        self.h = h
        self.cfg = cfg
        self.K = cfg.K if cfg.K is not None else truncation_order(cfg.lam)
        if diffused is None:
            diffused = diffuse_features(propagation_operator(h), h.features, cfg.lam, self.K, h.name)
        self.diffused = diffused
        train = h.train_index
        self.pool_labels = h.labels_of(train)
        self.pool = diffused.values[train]
        self.labels = synthesize_labels(h, cfg.ratio)
        self.C_orig = prototypes(self.pool, self.pool_labels, h.num_classes).data

        init_rng = substream(cfg.seed, "init", 0)
        self.X = Tensor(init_features(self.pool, self.pool_labels, self.labels, cfg.s, init_rng),
                        requires_grad=True, name="features")
        self.gen = StructureGenerator(h.features.shape[1], len(self.labels), cfg.mlp_hidden,
                                      cfg.delta_init, cfg.seed)
        betas, eps = cfg.adam_betas, cfg.adam_eps
        self.opt_feat = Adam([self.X], lr=cfg.lr_feat, betas=betas, eps=eps)
        self.opt_struct = Adam(self.gen.parameters(), lr=cfg.lr_struct, betas=betas, eps=eps)
        self.history: list[EpochRecord] = []

    def phase(self, t) -> str:
        return "features" if t % (self.cfg.tau1 + self.cfg.tau2) < self.cfg.tau1 else "structure"

    def objective(self, t, rng=None):
        """Forward pass for epoch ``t``: returns (total, coarse, fine) tensors.
        Must run inside an active tape to be differentiable."""
        cfg = self.cfg
        if rng is None:
            rng = substream(cfg.seed, "sampling", t)
        H = generate_structure(self.X, self.gen)
        P = condensed_propagation(H)
        Xd = hkpr_diffuse(lambda V: ag.matmul(P, V), self.X, cfg.lam, self.K)
        L_c = coarse_loss(self.C_orig, prototypes(Xd, self.labels, self.h.num_classes))
        L_f = fine_loss(Xd, self.pool, self.pool_labels, self.labels, cfg.n_neg, rng)
        w_c, w_f = schedule(t, cfg.epochs)
        return ag.add(ag.scalar_mul(L_c, w_c), ag.scalar_mul(L_f, w_f)), L_c, L_f

    def step(self, t):
        for p in [self.X] + self.gen.parameters():
            p.zero_grad()
        with Tape() as tape:
            loss, L_c, L_f = self.objective(t)
        total = loss.item()
        if not np.isfinite(total):
            last = self.history[-1].total if self.history else None
            raise NonFiniteLoss(t, last)
        tape.backward(loss)
        phase = self.phase(t)
        (self.opt_feat if phase == "features" else self.opt_struct).step()
        w_c, w_f = schedule(t, self.cfg.epochs)
        rec = EpochRecord(t, phase, w_c, w_f, L_c.item(), L_f.item(), total)
        self.history.append(rec)
        return rec

    def structure(self) -> np.ndarray:
        return generate_structure(self.X.data, self.gen).data.copy()

    def run(self, callback=None) -> CondensedHypergraph:
        start = time.perf_counter()
        for t in range(self.cfg.epochs):
            rec = self.step(t)
            if callback is not None:
                callback(t, self)
            log.debug("epoch %d %s total=%.6f", t, rec.phase, rec.total)
        out = CondensedHypergraph(self.X.data.copy(), self.structure(), self.labels.copy(),
                                  self.h.num_classes, list(self.history))
        out.validate()
        self.elapsed = time.perf_counter() - start
        return out


def condense(h: Hypergraph, cfg: RunConfig, diffused=None, callback=None) -> CondensedHypergraph:
    return Condenser(h, cfg, diffused).run(callback)
