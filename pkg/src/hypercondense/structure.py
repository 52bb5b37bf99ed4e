"""Anchor-guided hyperedge generation and the weighted condensed propagation.

Every synthetic node acts as an anchor ``i``; a pairwise MLP scores every
candidate ``j`` (including ``i`` itself) from ``[x_i; x_j]`` and a learnable
per-anchor threshold sparsifies the score row into hyperedge ``i``.
"""
from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .seeding import substream


class StructureGenerator:
    """3-layer MLP ``2d -> hidden -> hidden -> 1`` plus thresholds ``delta``.

    The first layer weight is stored as two halves (anchor part and candidate
    part) so the pair pre-activation ``W1 [x_i; x_j]`` is computed as
    ``x_i W1a + x_j W1b`` without materializing the N'^2 x 2d concatenation.
    """

    def __init__(self, dim, num_anchors, hidden=256, delta_init=0.5, seed=0):
        rng = substream(seed, "init", 1)

        def uniform(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        w1 = uniform(2 * dim, (2 * dim, hidden))
        self.w1a = Tensor(w1[:dim], requires_grad=True, name="w1a")
        self.w1b = Tensor(w1[dim:], requires_grad=True, name="w1b")
        self.b1 = Tensor(uniform(2 * dim, (1, hidden)), requires_grad=True, name="b1")
        self.w2 = Tensor(uniform(hidden, (hidden, hidden)), requires_grad=True, name="w2")
        self.b2 = Tensor(uniform(hidden, (1, hidden)), requires_grad=True, name="b2")
        self.w3 = Tensor(uniform(hidden, (hidden, 1)), requires_grad=True, name="w3")
        self.b3 = Tensor(uniform(hidden, (1, 1)), requires_grad=True, name="b3")
        self.delta = Tensor(np.full((num_anchors, 1), float(delta_init)), requires_grad=True, name="delta")

    def mlp_parameters(self):
        return [self.w1a, self.w1b, self.b1, self.w2, self.b2, self.w3, self.b3]

    def parameters(self):
        return self.mlp_parameters() + [self.delta]

    def state(self) -> dict:
        return {p.name: p.data.copy() for p in self.parameters()}

    def load_state(self, state: dict):
        for p in self.parameters():
            p.data = np.array(state[p.name], dtype=np.float64)

    def pair_logits(self, X) -> Tensor:
        """MLP logits for all ordered pairs, as an (n, n) matrix [anchor, candidate]."""
        n = X.shape[0]
        anchor = ag.matmul(X, self.w1a)
        cand = ag.matmul(X, self.w1b) + self.b1
        ii = np.repeat(np.arange(n), n)
        jj = np.tile(np.arange(n), n)
        z = ag.relu(ag.gather_rows(anchor, ii) + ag.gather_rows(cand, jj))
        z = ag.relu(ag.matmul(z, self.w2) + self.b2)
        out = ag.matmul(z, self.w3) + self.b3
        return ag.reshape(out, (n, n))

    def scores(self, X) -> Tensor:
        return ag.sigmoid(self.pair_logits(X))


def threshold_rows(scores: Tensor, delta: Tensor) -> Tensor:
    """ReLU(score - delta_i) per row, with the nonempty-hyperedge fallback:
    a row that thresholds to all zeros keeps its own diagonal score (floored
    at the smallest normal double if the score underflowed)."""
    pruned = ag.relu(ag.sub(scores, delta))
    empty = (scores.data - delta.data <= 0).all(axis=1)
    if not empty.any():
        return pruned
    keep = np.diag(empty.astype(np.float64))
    out = ag.add(pruned, ag.elementwise_mul(scores, keep))
    # a saturated sigmoid can round the kept diagonal to exactly zero
    underflow = keep * (np.diag(scores.data) <= 0)[:, None]
    if underflow.any():
        out = ag.add(out, underflow * np.finfo(np.float64).tiny)
    return out


def generate_structure(X, gen: StructureGenerator) -> Tensor:
    """Weighted condensed incidence; row i is the hyperedge of anchor i."""
    return threshold_rows(gen.scores(X), gen.delta)


def condensed_propagation(H) -> Tensor:
    """Normalized propagation over a weighted anchor-by-node incidence.

    ``H[i, j]`` is the weight of node ``j`` in hyperedge ``i``; node degrees
    are column sums, hyperedge degrees are row sums, and
    ``P = Dv^-1/2 H^T De^-1 H Dv^-1/2``.
    """
    H = ag.as_tensor(H)
    n = H.shape[1]
    d_v = ag.reduce_sum(H, axis=0)
    d_e = ag.reduce_sum(H, axis=1)
    r = ag.rsqrt(d_v)
    left = ag.elementwise_mul(ag.transpose(H), ag.reshape(r, (n, 1)))
    right = ag.elementwise_mul(H, ag.reshape(ag.reciprocal(d_e), (H.shape[0], 1)))
    right = ag.elementwise_mul(right, ag.reshape(r, (1, n)))
    return ag.matmul(left, right)
