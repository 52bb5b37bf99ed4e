"""Two-step evaluation: train a 2-layer HGNN from scratch on a reduced
hypergraph (condensed or coreset), then measure accuracy on the original
test split. Also hosts the Random / Herding / K-Center coreset baselines.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import autograd as ag
from .autograd import Tape, Tensor
from .condenser import Condenser, apportion, synthetic_size
from .config import EvalConfig, RunConfig
from .diffusion import diffuse_features, truncation_order
from .errors import NonFiniteLoss
from .hypergraph import CondensedHypergraph, Hypergraph, induced_subhypergraph, propagation_matrix
from .optim import Adam
from .seeding import substream
from .structure import condensed_propagation

log = logging.getLogger(__name__)


class GraphView:
    """A propagation matrix with its features, with ``P @ X`` precomputed."""

    def __init__(self, P, X):
        self.P = P
        self.X = np.asarray(X, dtype=np.float64)
        self.PX = np.asarray(P @ self.X)

    @classmethod
    def of(cls, h: Hypergraph) -> "GraphView":
        return cls(propagation_matrix(h), h.features)

    @classmethod
    def of_condensed(cls, c: CondensedHypergraph) -> "GraphView":
        return cls(condensed_propagation(c.incidence).data, c.features)


class HgnnModel:
    """softmax(P relu(P X W1) W2), dropout on the hidden layer at train time."""

    def __init__(self, dim, num_classes, hidden=64, dropout=0.5, seed=0):
        rng = substream(seed, "model", 0)

        def glorot(fan_in, fan_out):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-a, a, size=(fan_in, fan_out))

        self.W1 = Tensor(glorot(dim, hidden), requires_grad=True, name="W1")
        self.W2 = Tensor(glorot(hidden, num_classes), requires_grad=True, name="W2")
        self.dropout = dropout

    def parameters(self):
        return [self.W1, self.W2]

    def state(self):
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, state):
        for p, s in zip(self.parameters(), state):
            p.data = s.copy()

    def logits(self, view: GraphView, rows=None, drop_rng=None) -> Tensor:
        hid = ag.relu(ag.matmul(view.PX, self.W1))
        if drop_rng is not None and self.dropout > 0:
            keep = (drop_rng.random(hid.shape) >= self.dropout) / (1.0 - self.dropout)
            hid = ag.elementwise_mul(hid, keep)
        P = view.P if rows is None else view.P[rows]
        return ag.sparse_matmul(P, ag.matmul(hid, self.W2))

    def predict(self, view: GraphView, rows=None) -> np.ndarray:
        # argmax already breaks ties toward the lowest class index
        return np.argmax(self.logits(view, rows).data, axis=1)


def cross_entropy(logits: Tensor, rows, targets) -> Tensor:
    logp = ag.log_softmax(logits)
    picked = ag.index(logp, (np.asarray(rows), np.asarray(targets)))
    return ag.scalar_mul(ag.reduce_sum(picked), -1.0 / len(targets))


@dataclass
class TrainResult:
    model: HgnnModel
    best_val: float
    epochs_run: int


def train_hgnn(train_view: GraphView, targets, train_rows=None, *, val_view=None, val_rows=None,
               val_labels=None, num_classes=None, cfg: EvalConfig | None = None, seed=0) -> TrainResult:
    """Adam + cross-entropy on ``train_rows`` of ``train_view`` (all rows when
    None). With a validation view, keeps the weights of the best validation
    epoch and stops after ``patience`` epochs without improvement."""
    cfg = cfg or EvalConfig()
    targets = np.asarray(targets)
    if train_rows is None:
        train_rows = np.arange(train_view.X.shape[0])
    if num_classes is None:
        num_classes = int(targets.max()) + 1
    model = HgnnModel(train_view.X.shape[1], num_classes, cfg.hidden, cfg.dropout, seed)
    opt = Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    drop_rng = substream(seed, "dropout")
    best, best_state, since = -1.0, model.state(), 0
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        opt.zero_grad()
        with Tape() as tape:
            loss = cross_entropy(model.logits(train_view, drop_rng=drop_rng), train_rows, targets)
        if not np.isfinite(loss.item()):
            raise NonFiniteLoss(epoch, None)
        tape.backward(loss)
        opt.step()
        if val_view is None:
            continue
        acc = float((model.predict(val_view, val_rows) == val_labels).mean())
        if acc > best:
            best, best_state, since = acc, model.state(), 0
        else:
            since += 1
            if since >= cfg.patience:
                break
    if val_view is not None:
        model.load_state(best_state)
    return TrainResult(model, best, epoch)


def evaluate(model: HgnnModel, h: Hypergraph, view: GraphView | None = None) -> float:
    view = view or GraphView.of(h)
    rows = h.test_index
    return float((model.predict(view, rows) == h.labels_of(rows)).mean())


def accuracy(pred, labels) -> float:
    return float((np.asarray(pred) == np.asarray(labels)).mean())


# -- coresets ------------------------------------------------------------------

def _quotas(h: Hypergraph, ratio):
    train = h.train_index
    labels = h.labels_of(train)
    counts = np.bincount(labels, minlength=h.num_classes)
    return train, labels, apportion(counts, synthetic_size(h.num_nodes, ratio))


def _take_all_if_short(c, pool, q):
    if pool.size <= q:
        if pool.size < q:
            log.warning("class %d: pool of %d below quota %d; taking all", c, pool.size, q)
        return True
    return False


def herding_select(feats, q) -> list[int]:
    """Greedy selection keeping the running mean closest to the class mean."""
    mu = feats.mean(axis=0)
    chosen, total = [], np.zeros_like(mu)
    avail = np.ones(len(feats), bool)
    for k in range(q):
        cand = (total + feats) / (k + 1)
        dist = np.linalg.norm(cand - mu, axis=1)
        dist[~avail] = np.inf
        j = int(np.argmin(dist))
        chosen.append(j)
        avail[j] = False
        total += feats[j]
    return chosen


def kcenter_select(feats, q) -> list[int]:
    """Farthest-point traversal seeded at the point nearest the class mean."""
    mu = feats.mean(axis=0)
    first = int(np.argmin(np.linalg.norm(feats - mu, axis=1)))
    chosen = [first]
    mind = np.linalg.norm(feats - feats[first], axis=1)
    for _ in range(q - 1):
        mind[chosen] = -np.inf
        j = int(np.argmax(mind))
        chosen.append(j)
        mind = np.minimum(mind, np.linalg.norm(feats - feats[j], axis=1))
    return chosen


def coreset_indices(h: Hypergraph, ratio, method, seed=0, diffused=None) -> tuple[np.ndarray, np.ndarray]:
    """Selected original node ids and their labels, class by class."""
    train, labels, quota = _quotas(h, ratio)
    if method in ("herding", "kcenter") and diffused is None:
        diffused = diffuse_features(GraphView.of(h).P, h.features, 2.0).values
    rng = substream(seed, "coreset", 0)
    nodes, ys = [], []
    for c in range(h.num_classes):
        pool = train[labels == c]
        q = int(quota[c])
        if _take_all_if_short(c, pool, q):
            pick = pool
        elif method == "random":
            pick = np.sort(rng.choice(pool, size=q, replace=False))
        elif method == "herding":
            pick = pool[herding_select(diffused[pool], q)]
        elif method == "kcenter":
            pick = pool[kcenter_select(diffused[pool], q)]
        else:
            raise ValueError(f"unknown coreset method {method!r}")
        nodes.append(pick)
        ys.append(np.full(len(pick), c))
    return np.concatenate(nodes), np.concatenate(ys)


def coreset(h: Hypergraph, ratio, method, seed=0, diffused=None) -> Hypergraph:
    nodes, ys = coreset_indices(h, ratio, method, seed, diffused)
    return induced_subhypergraph(h, nodes, labels=ys)


def coreset_random(h, ratio, seed=0):
    return coreset(h, ratio, "random", seed)


def coreset_herding(h, ratio, seed=0, diffused=None):
    return coreset(h, ratio, "herding", seed, diffused)


def coreset_kcenter(h, ratio, seed=0, diffused=None):
    return coreset(h, ratio, "kcenter", seed, diffused)


# -- protocol ------------------------------------------------------------------

@dataclass
class RunRow:
    method: str
    ratio: float
    set_index: int
    repeat: int
    set_seed: int
    eval_seed: int
    accuracy: float


@dataclass
class EvalReport:
    method: str
    ratio: float
    rows: list = field(default_factory=list)
    condense_seconds: float = 0.0
    eval_seconds: float = 0.0

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.rows])

    @property
    def mean(self) -> float:
        return float(self.accuracies.mean())

    @property
    def std(self) -> float:
        return float(self.accuracies.std())


def derived_seed(root, name, *counters) -> int:
    return int(substream(root, name, *counters).integers(2 ** 31 - 1))


class Evaluator:
    """Original-graph context shared by all runs on one hypergraph."""

    def __init__(self, h: Hypergraph, cfg: EvalConfig | None = None):
        self.h = h
        self.cfg = cfg or EvalConfig()
        self.view = GraphView.of(h)
        self.val_rows = h.val_index
        self._val_labels = None

    @property
    def val_labels(self):
        if self._val_labels is None:
            self._val_labels = self.h.labels_of(self.val_rows)
        return self._val_labels

    def fit(self, view: GraphView, targets, rows=None, seed=0) -> TrainResult:
        return train_hgnn(view, targets, rows, val_view=self.view, val_rows=self.val_rows,
                          val_labels=self.val_labels, num_classes=self.h.num_classes,
                          cfg=self.cfg, seed=seed)

    def test_accuracy(self, model) -> float:
        return evaluate(model, self.h, self.view)

    def full_data(self, seed=0) -> float:
        res = self.fit(self.view, self.h.labels_of(self.h.train_index), self.h.train_index, seed)
        return self.test_accuracy(res.model)

    def condensed(self, c: CondensedHypergraph, seed=0) -> float:
        return self.test_accuracy(self.fit(GraphView.of_condensed(c), c.labels, None, seed).model)

    def subgraph(self, sub: Hypergraph, seed=0) -> float:
        view = GraphView.of(sub)
        return self.test_accuracy(self.fit(view, sub.labels_of(sub.train_index), None, seed).model)


def _reduce(method, ratio, results, rows_meta, t_cond, t_eval) -> EvalReport:
    rep = EvalReport(method, ratio, condense_seconds=t_cond, eval_seconds=t_eval)
    for meta, acc in sorted(zip(rows_meta, results)):
        rep.rows.append(RunRow(method, ratio, *meta, acc))
    return rep


def _fan_out(fn, jobs_args, jobs=1):
    if jobs <= 1:
        return [fn(*a) for a in jobs_args]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(lambda a: fn(*a), jobs_args))


def run_condensation_protocol(h: Hypergraph, cfg: RunConfig, evaluator: Evaluator | None = None,
                              jobs=1, sets=None) -> tuple[EvalReport, list[CondensedHypergraph]]:
    """Condense ``sets`` synthetic hypergraphs and evaluate each ``repeats`` times."""
    ecfg = cfg.eval
    evaluator = evaluator or Evaluator(h, ecfg)
    K = cfg.K if cfg.K is not None else truncation_order(cfg.lam)
    diffused = diffuse_features(evaluator.view.P, h.features, cfg.lam, K, h.name)
    t0 = time.perf_counter()
    synth = []
    for s in range(sets or ecfg.sets):
        sub_cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": derived_seed(cfg.seed, "set", s)})
        synth.append(Condenser(h, sub_cfg, diffused).run())
    t_cond = time.perf_counter() - t0
    t1 = time.perf_counter()
    meta, args = [], []
    for s, c in enumerate(synth):
        for r in range(ecfg.repeats):
            es = derived_seed(cfg.seed, "eval", s, r)
            meta.append((s, r, derived_seed(cfg.seed, "set", s), es))
            args.append((c, es))
    results = _fan_out(evaluator.condensed, args, jobs)
    return _reduce("ahgcdd", cfg.ratio, results, meta, t_cond, time.perf_counter() - t1), synth


def run_coreset_protocol(h: Hypergraph, cfg: RunConfig, method, evaluator: Evaluator | None = None,
                         jobs=1) -> EvalReport:
    ecfg = cfg.eval
    evaluator = evaluator or Evaluator(h, ecfg)
    diffused = None
    if method in ("herding", "kcenter"):
        K = cfg.K if cfg.K is not None else truncation_order(cfg.lam)
        diffused = diffuse_features(evaluator.view.P, h.features, cfg.lam, K).values
    t0 = time.perf_counter()
    subs = [coreset(h, cfg.ratio, method, derived_seed(cfg.seed, "set", s), diffused)
            for s in range(ecfg.sets)]
    t_cond = time.perf_counter() - t0
    t1 = time.perf_counter()
    meta, args = [], []
    for s, sub in enumerate(subs):
        for r in range(ecfg.repeats):
            es = derived_seed(cfg.seed, "eval", s, r)
            meta.append((s, r, derived_seed(cfg.seed, "set", s), es))
            args.append((sub, es))
    results = _fan_out(evaluator.subgraph, args, jobs)
    return _reduce(method, cfg.ratio, results, meta, t_cond, time.perf_counter() - t1)


def run_full_data_protocol(h: Hypergraph, cfg: RunConfig, evaluator: Evaluator | None = None,
                           jobs=1) -> EvalReport:
    ecfg = cfg.eval
    evaluator = evaluator or Evaluator(h, ecfg)
    t1 = time.perf_counter()
    meta, args = [], []
    for r in range(ecfg.repeats):
        es = derived_seed(cfg.seed, "eval", 0, r)
        meta.append((0, r, 0, es))
        args.append((es,))
    results = _fan_out(evaluator.full_data, args, jobs)
    return _reduce("whole", 1.0, results, meta, 0.0, time.perf_counter() - t1)
