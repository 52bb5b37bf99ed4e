"""End-to-end acceptance criteria, each at its stated tolerance.

Every test records a one-line verdict that is printed in the terminal summary
under "acceptance criteria". Criterion 1 runs the full 5 x 5 protocol on the
Cora-shaped synthetic stand-in and takes a few minutes on one core.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest

from hypercondense import artifacts as art
from hypercondense.cli import main
from hypercondense.condenser import Condenser
from hypercondense.config import RunConfig
from hypercondense.datasets import cora_like, planted
from hypercondense.diffusion import PoissonWeights, hkpr_diffuse, spectral_oracle, truncation_order
from hypercondense.evaluation import coreset
from hypercondense.hypergraph import propagation_matrix, save_hypergraph
from hypercondense.seeding import substream
from hypercondense.theory import random_hypergraph

from conftest import record_criterion
from test_condenser import objective_fd_error

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "cora_r1.json"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def cora_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cora") / "cora.txt"
    save_hypergraph(cora_like(seed=0), p)
    return p


def summary(report_dir):
    return {r["method"]: float(r["accuracy"]) for r in art.read_report(report_dir / "report.csv")
            if r["kind"] == "summary"}


def test_criterion_1_cora_end_to_end(cora_file, tmp_path):
    t0 = time.perf_counter()
    assert run("condense", "--data", cora_file, "--config", CONFIG, "--sets", 5, "--out", tmp_path / "c") == 0
    assert run("evaluate", "--data", cora_file, "--condensed", tmp_path / "c", "--sets", 5, "--repeats", 5,
               "--out", tmp_path / "e") == 0
    elapsed = time.perf_counter() - t0
    assert run("baseline", "--data", cora_file, "--config", CONFIG, "--method", "random",
               "--out", tmp_path / "r") == 0
    assert run("baseline", "--data", cora_file, "--config", CONFIG, "--method", "whole",
               "--out", tmp_path / "w") == 0
    ours = summary(tmp_path / "e")["ahgcdd"]
    rand = summary(tmp_path / "r")["random"]
    whole = summary(tmp_path / "w")["whole"]
    gap, ratio = ours - rand, ours / whole
    ok = gap >= 0.15 and ratio >= 0.90 and elapsed <= 600
    record_criterion(1, ok, f"ahgcdd {100 * ours:.2f} random {100 * rand:.2f} whole {100 * whole:.2f} "
                            f"gap {100 * gap:.2f} pts (>= 15) ratio {ratio:.3f} (>= 0.90) "
                            f"condense+evaluate {elapsed:.0f}s (<= 600)")
    assert gap >= 0.15
    assert ratio >= 0.90
    assert elapsed <= 600


def test_criterion_2_theory_suite(tmp_path):
    t0 = time.perf_counter()
    code = run("verify", "--check", "all", "--seed", 0, "--json", tmp_path / "v.json")
    elapsed = time.perf_counter() - t0
    doc = json.loads((tmp_path / "v.json").read_text())
    viol = {c["name"]: c["violations"] for c in doc["checks"]}
    ok = code == 0 and sum(viol.values()) == 0 and elapsed <= 120
    record_criterion(2, ok, f"violations {viol} in {elapsed:.1f}s (<= 120)")
    assert code == 0 and sum(viol.values()) == 0
    assert elapsed <= 120


def test_criterion_3_gradient_correctness():
    errors = [objective_fd_error(seed) for seed in range(20)]
    worst = max(errors)
    record_criterion(3, worst <= 1e-4, f"20 instances, max relative error {worst:.2e} (<= 1e-4)")
    assert worst <= 1e-4


def test_criterion_4_truncation_fidelity():
    rng = substream(0, "acceptance-truncation")
    graphs = [random_hypergraph(n, rng) for n in (20, 50, 100) for _ in range(2)]
    worst_ratio, decreasing = 0.0, True
    for h in graphs:
        P = propagation_matrix(h)
        X = h.features
        xmax = np.abs(X).max()
        for lam in (1.0, 2.0, 3.0, 5.0):
            K = truncation_order(lam)
            exact = spectral_oracle(P, X, lam)
            err = np.abs(hkpr_diffuse(lambda V: P @ V, X, lam, K) - exact).max()
            err3 = np.abs(hkpr_diffuse(lambda V: P @ V, X, lam, K + 3) - exact).max()
            bound = 2 * PoissonWeights.build(lam, K).residual_mass * xmax
            worst_ratio = max(worst_ratio, err / bound)
            decreasing &= err3 < err
    ok = worst_ratio <= 1.0 and decreasing
    record_criterion(4, ok, f"worst error/bound {worst_ratio:.3f} (<= 1), strictly decreasing at K+3: {decreasing}")
    assert worst_ratio <= 1.0 and decreasing


def test_criterion_5_protocol_audit():
    h = cora_like(seed=0)
    h.audit.reset()
    cfg = RunConfig.from_dict({**RunConfig.load(CONFIG).to_dict(), "epochs": 20})
    Condenser(h, cfg).run()
    cond_reads = h.audit.test_reads
    for method in ("random", "herding", "kcenter"):
        coreset(h, 0.01, method, seed=0)
    total = h.audit.test_reads
    record_criterion(5, total == 0, f"test-label reads: condensation {cond_reads}, coresets {total - cond_reads}")
    assert total == 0


def test_criterion_6_determinism(cora_file, tmp_path):
    cfg = tmp_path / "short.json"
    doc = RunConfig.load(CONFIG).to_dict()
    doc["epochs"] = 30
    art.write_json(cfg, doc)
    digests = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run("condense", "--data", cora_file, "--config", cfg, "--sets", 2, "--out", out / "c") == 0
        assert run("evaluate", "--data", cora_file, "--condensed", out / "c", "--sets", 2, "--repeats", 2,
                   "--out", out / "e") == 0
        assert run("report", out / "e", "--out", out / "r") == 0
        files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
        digests.append({str(p.relative_to(out)): art.sha256_file(p) for p in files})
    same = digests[0] == digests[1]
    record_criterion(6, same, f"{len(digests[0])} artifact/report files hash-identical across reruns: {same}")
    assert same


def test_criterion_7_alternation():
    h = planted(n=60, num_classes=3, d=5, num_edges=25, seed=11)
    cfg = RunConfig(ratio=0.1, epochs=45, s=3, n_neg=3, mlp_hidden=32, tau1=5, tau2=15, seed=2)
    c = Condenser(h, cfg)
    snaps = [(c.X.data.copy(), c.gen.state())]
    c.run(lambda t, cc: snaps.append((cc.X.data.copy(), cc.gen.state())))
    bad = []
    for t in range(cfg.epochs):
        (x0, s0), (x1, s1) = snaps[t], snaps[t + 1]
        x_moved = not np.array_equal(x0, x1)
        s_moved = any(not np.array_equal(s0[k], s1[k]) for k in s0)
        want_x = t % 20 < 5
        if x_moved != want_x or s_moved == want_x:
            bad.append(t)
    cycles = cfg.epochs / 20
    record_criterion(7, not bad, f"{cfg.epochs} epochs ({cycles:.2f} cycles), epochs off-pattern: {bad}")
    assert not bad
