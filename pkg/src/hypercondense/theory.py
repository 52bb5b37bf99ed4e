"""Numerical checks of the analytical claims behind the method.

Each check samples many instances, evaluates an inequality or identity as
stated (one-sided where it is a bound) and reports the number of violations
and the tightest observed margin. Every check is deterministic per seed.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffusion import PoissonWeights, hkpr_diffuse, poisson_tail, spectral_oracle, tail_bound
from .hypergraph import Hypergraph, propagation_matrix
from .seeding import substream

SPECTRAL_TOL = 1e-8
SPECTRAL_K = 40
MMD_TOL = 1e-10


@dataclass
class CheckResult:
    name: str
    trials: int = 0
    violations: int = 0
    worst_margin: float = math.inf
    offending: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def observe(self, margin, inputs=None):
        """Record one trial; ``margin < 0`` is a violation."""
        self.trials += 1
        margin = float(margin)
        if margin < self.worst_margin:
            self.worst_margin = margin
        if not margin >= 0:
            self.violations += 1
            if len(self.offending) < 5:
                self.offending.append(inputs)

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def random_hypergraph(n, rng, m=None, max_size=5, isolated_ok=True) -> Hypergraph:
    m = m or max(1, n // 2)
    edges = [rng.choice(n, size=int(rng.integers(1, min(max_size, n) + 1)), replace=False) for _ in range(m)]
    if not isolated_ok:
        covered = np.zeros(n, bool)
        for e in edges:
            covered[e] = True
        edges += [[int(v), int((v + 1) % n)] for v in np.flatnonzero(~covered)]
    feats = rng.normal(size=(n, 4))
    return Hypergraph(edges, feats, np.zeros(n, np.int64), 1, name=f"random-{n}")


def path3() -> Hypergraph:
    return Hypergraph([[0, 1], [1, 2]], np.eye(3), [0, 0, 0], 1, name="path3")


def check_spectral(seed=0, sizes=(20, 50, 100), lams=(1.0, 2.0, 3.0, 5.0), per_size=3,
                   K=SPECTRAL_K, tol=SPECTRAL_TOL) -> CheckResult:
    """Truncated diffusion at high order equals the exp(-lam mu) filter."""
    res = CheckResult("spectral")
    rng = substream(seed, "theory-spectral")
    cases = [("identity", Hypergraph([[i] for i in range(6)], rng.normal(size=(6, 3)), [0] * 6, 1)),
             ("path3", path3())]
    for n in sizes:
        for k in range(per_size):
            cases.append((f"random-{n}-{k}", random_hypergraph(n, rng)))
    for label, h in cases:
        P = propagation_matrix(h)
        X = h.features
        for lam in lams:
            approx = hkpr_diffuse(lambda V: P @ V, X, lam, K)
            err = float(np.abs(approx - spectral_oracle(P, X, lam)).max())
            res.observe(tol - err, {"case": label, "lam": lam, "K": K, "error": err})
    return res


def check_tail(lams=(0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 10.0), ts=(0.01, 1.0, 2.0, 3.0, 4.0)) -> CheckResult:
    """Exact Poisson upper tail never exceeds exp(-t^2 / (2 + t / sqrt(lam)))."""
    res = CheckResult("tail")
    for lam in lams:
        for t in ts:
            exact = poisson_tail(lam, lam + t * math.sqrt(lam))
            bound = tail_bound(lam, t)
            res.observe(bound - exact, {"lam": lam, "t": t, "exact": exact, "bound": bound})
        # residual mass of the default truncation is covered by the t = 3 bound
        pw = PoissonWeights.build(lam)
        res.observe(tail_bound(lam, 3.0) - pw.residual_mass,
                    {"lam": lam, "K": pw.K, "residual": pw.residual_mass})
    return res


def check_mmd_identity(seed=0, trials=1000, tol=MMD_TOL) -> CheckResult:
    """1 - cos(a, b) == 0.5 * || a/|a| - b/|b| ||^2."""
    res = CheckResult("mmd")
    rng = substream(seed, "theory-mmd")
    for _ in range(trials):
        d = int(rng.integers(1, 65))
        scale = 10.0 ** rng.uniform(-3, 3)
        a = rng.normal(size=d) * scale
        b = rng.normal(size=d) * 10.0 ** rng.uniform(-3, 3)
        lhs = 1.0 - a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
        rhs = 0.5 * np.sum((a / np.linalg.norm(a) - b / np.linalg.norm(b)) ** 2)
        res.observe(tol - abs(lhs - rhs), {"a": a.tolist(), "b": b.tolist()})
    return res


def class_margins(U, Up) -> np.ndarray:
    """m_i = u_i . u'_i - max_{j != i} u_i . u'_j for unit rows."""
    S = U @ Up.T
    off = S.copy()
    np.fill_diagonal(off, -np.inf)
    return np.diag(S) - off.max(axis=1)


def _unit(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def check_margin(seed=0, trials=1000, classes=(3, 7), noise=(0.0, 0.1, 0.5, 2.0)) -> CheckResult:
    """Average margin >= average diagonal similarity - eps / C, with eps the
    total positive cross-class similarity."""
    res = CheckResult("margin")
    rng = substream(seed, "theory-margin")
    for k in range(trials):
        C = classes[k % len(classes)]
        sigma = noise[(k // len(classes)) % len(noise)]
        d = int(rng.integers(2, 17))
        U = _unit(rng.normal(size=(C, d)))
        Up = _unit(U + sigma * rng.normal(size=(C, d))) if sigma > 0 else U.copy()
        if k % 10 == 9:
            Up = np.repeat(Up[:1], C, axis=0)  # collapsed synthetic prototypes
        S = U @ Up.T
        eps = float(np.clip(S - np.diag(np.diag(S)), 0, None).sum())
        lhs = class_margins(U, Up).mean()
        rhs = np.diag(S).mean() - eps / C
        res.observe(lhs - rhs + 1e-12, {"U": U.tolist(), "Up": Up.tolist()})
    return res


def _similarities(rng, dist, trials, n_neg):
    if dist == "gaussian":
        return rng.normal(size=trials), rng.normal(size=(trials, n_neg))
    if dist == "separated":
        return rng.normal(2.0, 1.0, trials), rng.normal(size=(trials, n_neg))
    if dist == "heavy":
        return rng.standard_t(3, trials), rng.standard_t(3, (trials, n_neg))
    if dist == "discrete":
        return rng.integers(0, 3, trials).astype(float), rng.integers(0, 3, (trials, n_neg)).astype(float)
    raise ValueError(dist)


def misranking_stats(s_pos, s_neg):
    """Per-trial mis-ranking indicator and e^loss - 1 = sum exp(s_q - s_p)."""
    event = (s_neg >= s_pos[:, None]).any(axis=1)
    excess = np.exp(s_neg - s_pos[:, None]).sum(axis=1)
    return event, excess


def check_misranking(seed=0, trials=100_000, n_negs=(1, 5, 10),
                     dists=("gaussian", "separated", "heavy", "discrete")) -> CheckResult:
    """Empirical mis-ranking frequency <= mean(e^loss - 1) + 3 MC standard errors."""
    res = CheckResult("misrank")
    for n_neg in n_negs:
        for dist in dists:
            rng = substream(seed, "theory-misrank", n_neg, len(dist))
            s_pos, s_neg = _similarities(rng, dist, trials, n_neg)
            event, excess = misranking_stats(s_pos, s_neg)
            slack = 3.0 * excess.std(ddof=1) / math.sqrt(trials)
            res.observe(excess.mean() + slack - event.mean(),
                        {"n_neg": n_neg, "dist": dist, "trials": trials})
    return res


CHECKS = {
    "spectral": check_spectral,
    "tail": lambda seed=0: check_tail(),
    "mmd": check_mmd_identity,
    "margin": check_margin,
    "misrank": check_misranking,
}


def run_checks(names=None, seed=0, jobs=1) -> list[CheckResult]:
    names = list(CHECKS) if names in (None, "all", ["all"]) else list(names)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check {unknown[0]!r}")
    if jobs <= 1:
        return [CHECKS[n](seed=seed) for n in names]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(lambda n: CHECKS[n](seed=seed), names))


def format_table(results) -> str:
    lines = [f"{'check':<10}{'trials':>9}{'violations':>12}{'worst margin':>16}  status"]
    for r in results:
        lines.append(f"{r.name:<10}{r.trials:>9}{r.violations:>12}{r.worst_margin:>16.3e}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
