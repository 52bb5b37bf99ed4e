import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypercondense import autograd as ag
from hypercondense.autograd import Tape, Tensor
from hypercondense.condenser import Condenser, apportion, condense, init_features, synthesize_labels, synthetic_size
from hypercondense.config import RunConfig
from hypercondense.datasets import planted
from hypercondense.errors import ConfigError, DegeneratePrototype, NonFiniteLoss, TooFewSyntheticNodes
from hypercondense.losses import (
    alignment_term,
    coarse_loss,
    contrast_terms,
    fine_loss,
    prototypes,
    sample_contrast,
    schedule,
    total_loss,
)
from hypercondense.seeding import substream
from hypercondense.structure import StructureGenerator, condensed_propagation, generate_structure, threshold_rows

from conftest import central_difference, relative_error


# -- labels and initialization --------------------------------------------------

def test_apportion_hand_example():
    np.testing.assert_array_equal(apportion([50, 30, 20], 5), [3, 1, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=2, max_size=10))
def test_apportion_one_per_class_at_minimum(counts):
    np.testing.assert_array_equal(apportion(counts, len(counts)), np.ones(len(counts)))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=2, max_size=10), st.integers(0, 40))
def test_apportion_totals_and_minimum(counts, extra):
    n = len(counts) + extra
    got = apportion(counts, n)
    assert got.sum() == n and got.min() >= 1


def test_too_few_synthetic_nodes():
    with pytest.raises(TooFewSyntheticNodes):
        apportion([5, 5, 5], 2)


def test_cora_stand_in_one_percent(cora):
    assert synthetic_size(cora.num_nodes, 0.01) == 27
    y = synthesize_labels(cora, 0.01)
    assert y.size == 27 and set(y.tolist()) == set(range(7))
    assert np.all(np.diff(y) >= 0)


def test_synthesize_labels_reads_only_training_labels(cora):
    cora.audit.reset()
    synthesize_labels(cora, 0.01)
    assert cora.audit.test_reads == 0 and cora.audit.val_reads == 0


def test_init_single_sample_is_a_pool_row():
    rng = substream(0, "t")
    pool = rng.normal(size=(10, 3))
    labels = np.array([0] * 5 + [1] * 5)
    X = init_features(pool, labels, np.array([0, 1, 1]), 1, substream(1, "i"))
    for i, c in enumerate([0, 1, 1]):
        assert any(np.array_equal(X[i], pool[j]) for j in np.flatnonzero(labels == c))


def test_init_constant_class():
    pool = np.vstack([np.tile([1.0, 2.0], (4, 1)), np.zeros((3, 2))])
    labels = np.array([0] * 4 + [1] * 3)
    X = init_features(pool, labels, np.array([0, 0]), 10, substream(2, "i"))
    np.testing.assert_array_equal(X, [[1.0, 2.0], [1.0, 2.0]])


def test_init_two_of_two_without_replacement():
    pool = np.array([[1.0, 0.0], [3.0, 4.0], [9.0, 9.0]])
    labels = np.array([0, 0, 1])
    for seed in range(10):
        X = init_features(pool, labels, np.array([0]), 2, substream(seed, "i"))
        np.testing.assert_allclose(X[0], [2.0, 2.0])


# -- structure ------------------------------------------------------------------

def test_threshold_example_row():
    out = threshold_rows(Tensor(np.array([[0.9, 0.4, 0.7]])), Tensor(np.array([[0.5]])))
    np.testing.assert_allclose(out.data, [[0.4, 0.0, 0.2]], atol=1e-15)


def test_fallback_keeps_diagonal_score_with_gradient():
    scores = Tensor(np.array([[0.3, 0.9], [0.2, 0.6]]), requires_grad=True)
    delta = Tensor(np.array([[1.0], [0.5]]), requires_grad=True)
    with Tape() as tape:
        H = threshold_rows(scores, delta)
        loss = ag.reduce_sum(H)
    np.testing.assert_allclose(H.data, [[0.3, 0.0], [0.0, 0.1]], atol=1e-15)
    tape.backward(loss)
    np.testing.assert_array_equal(scores.grad, [[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(delta.grad, [[0.0], [-1.0]])


def test_zero_logits_give_half_diagonal():
    gen = StructureGenerator(3, 4, hidden=8, seed=0)
    for p in gen.mlp_parameters():
        p.data[...] = 0.0
    H = generate_structure(substream(0, "x").normal(size=(4, 3)), gen).data
    np.testing.assert_array_equal(H, 0.5 * np.eye(4))


def test_saturated_fallback_stays_nonempty():
    scores = Tensor(np.array([[0.0, 0.0], [0.0, 0.0]]))
    H = threshold_rows(scores, Tensor(np.full((2, 1), 0.5)))
    assert ((H.data > 0).sum(axis=1) >= 1).all()


def test_split_first_layer_matches_explicit_concat():
    rng = substream(5, "mlp")
    X = rng.normal(size=(5, 4))
    gen = StructureGenerator(4, 5, hidden=16, seed=3)
    pairs = np.array([np.concatenate([X[i], X[j]]) for i in range(5) for j in range(5)])
    w1 = np.vstack([gen.w1a.data, gen.w1b.data])
    z = np.maximum(pairs @ w1 + gen.b1.data, 0)
    z = np.maximum(z @ gen.w2.data + gen.b2.data, 0)
    ref = (z @ gen.w3.data + gen.b3.data).reshape(5, 5)
    np.testing.assert_allclose(gen.pair_logits(X).data, ref, atol=1e-13)


def test_generator_shapes():
    gen = StructureGenerator(6, 7)
    assert gen.w1a.shape == (6, 256) and gen.w2.shape == (256, 256) and gen.w3.shape == (256, 1)
    np.testing.assert_array_equal(gen.delta.data, np.full((7, 1), 0.5))


def test_condensed_propagation_examples():
    np.testing.assert_allclose(condensed_propagation(np.eye(3)).data, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(condensed_propagation(np.ones((2, 2))).data, np.full((2, 2), 0.5), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(0, 9999))
def test_condensed_propagation_symmetric(n, seed):
    rng = substream(seed, "hp")
    H = rng.random((n, n)) * (rng.random((n, n)) < 0.6)
    H[np.arange(n), np.arange(n)] += 0.1
    P = condensed_propagation(H).data
    assert np.abs(P - P.T).max() <= 1e-12
    # dense reference with columns as nodes and rows as hyperedges
    dv, de = H.sum(0), H.sum(1)
    ref = np.diag(dv ** -0.5) @ H.T @ np.diag(1 / de) @ H @ np.diag(dv ** -0.5)
    np.testing.assert_allclose(P, ref, rtol=1e-9, atol=1e-12)


# -- losses ---------------------------------------------------------------------

def test_coarse_loss_examples():
    eye = np.eye(3) * 2.0
    assert coarse_loss(eye, eye).item() == pytest.approx(0.0, abs=1e-15)
    C = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert coarse_loss(C, C[::-1]).item() == pytest.approx(4.0, abs=1e-15)


def test_coarse_loss_degenerate():
    with pytest.raises(DegeneratePrototype):
        coarse_loss(np.array([[1.0, 0.0], [0.0, 0.0]]), np.eye(2))


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.integers(1, 16), st.integers(0, 99999))
def test_alignment_is_half_squared_distance(C, d, seed):
    rng = substream(seed, "mmd")
    a, b = rng.normal(size=(C, d)), rng.normal(size=(C, d))
    ua = a / np.linalg.norm(a, axis=1, keepdims=True)
    ub = b / np.linalg.norm(b, axis=1, keepdims=True)
    assert alignment_term(a, b) == pytest.approx(0.5 * ((ua - ub) ** 2).sum(), abs=1e-10)
    # the full coarse loss is alignment plus the cross cosine sum
    cross = (ua @ ub.T).sum() - (ua * ub).sum()
    assert coarse_loss(a, b).item() == pytest.approx(alignment_term(a, b) + cross, abs=1e-10)


def test_fine_loss_equal_scores():
    Xs = np.zeros((1, 2))
    pool = np.zeros((6, 2))
    cand = np.array([[0, 1, 2, 3, 4, 5]])
    assert contrast_terms(Xs, pool, cand).data[0] == pytest.approx(math.log(6), abs=1e-15)
    cand = np.array([[0, 1]])
    assert contrast_terms(Xs, pool, cand).data[0] == pytest.approx(math.log(2), abs=1e-15)


def test_fine_loss_dominant_positive():
    Xs = np.array([[1.0, 0.0]])
    pool = np.array([[1000.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    assert contrast_terms(Xs, pool, np.array([[0, 1, 2]])).data[0] < 1e-300 + 1e-12


def test_sampling_respects_classes():
    labels = np.array([0, 0, 0, 1, 1, 1, 2, 2])
    cand = sample_contrast(labels, np.array([0, 1, 2]), 4, substream(0, "s"))
    for i, c in enumerate([0, 1, 2]):
        assert labels[cand[i, 0]] == c
        assert (labels[cand[i, 1:]] != c).all()
        assert len(set(cand[i, 1:])) == 4


def test_sampling_with_replacement_warns(caplog):
    labels = np.array([0, 0, 1])
    cand = sample_contrast(labels, np.array([0]), 3, substream(0, "s"))
    assert (cand[0, 1:] == 2).all()
    assert "with replacement" in caplog.text


def test_fine_loss_sums_over_nodes():
    rng = substream(3, "fl")
    Xs, pool = rng.normal(size=(3, 2)), rng.normal(size=(8, 2))
    labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    y = np.array([0, 1, 1])
    total = fine_loss(Xs, pool, labels, y, 3, substream(9, "s")).item()
    cand = sample_contrast(labels, y, 3, substream(9, "s"))
    s = Xs[:, None, :] @ pool[cand].transpose(0, 2, 1)
    s = s[:, 0, :]
    ref = (np.log(np.exp(s).sum(1)) - s[:, 0]).sum()
    assert total == pytest.approx(ref, abs=1e-12)


def test_schedule_endpoints():
    assert schedule(0, 100) == (1.0, 0.0)
    wc, wf = schedule(50, 100)
    assert wc == pytest.approx(math.sqrt(2) / 2) and wf == pytest.approx(math.sqrt(2) / 2)
    assert schedule(9999, 10000)[1] > 1 - 1e-7
    assert total_loss(0, 10, Tensor(np.array(3.0)), Tensor(np.array(7.0))).item() == 3.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 1000), st.data())
def test_schedule_weights_on_unit_circle(T, data):
    t = data.draw(st.integers(0, T - 1))
    wc, wf = schedule(t, T)
    assert wc ** 2 + wf ** 2 == pytest.approx(1.0, abs=1e-12) and wc > 0 and wf >= 0


# -- the loop -------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny():
    return planted(n=60, num_classes=3, d=5, num_edges=25, seed=11)


def tiny_cfg(**kw):
    base = dict(ratio=0.1, lam=2.0, epochs=40, s=3, n_neg=3, mlp_hidden=32, seed=4)
    base.update(kw)
    return RunConfig(**base)


def test_alternation_snapshots(tiny):
    snaps = []

    def keep(t, c):
        snaps.append((c.X.data.copy(), {k: v.copy() for k, v in c.gen.state().items()}))

    c = Condenser(tiny, tiny_cfg(epochs=40))
    x0, s0 = c.X.data.copy(), c.gen.state()
    c.run(keep)
    prev_x, prev_s = x0, s0
    for t, (x, s) in enumerate(snaps):
        x_moved = not np.array_equal(x, prev_x)
        s_moved = any(not np.array_equal(s[k], prev_s[k]) for k in s)
        if t % 20 < 5:
            assert x_moved and not s_moved, t
        else:
            assert s_moved and not x_moved, t
        prev_x, prev_s = x, s
    assert [r.phase for r in c.history[:21]] == ["features"] * 5 + ["structure"] * 15 + ["features"]


def test_first_epoch_loss_is_coarse_only(tiny):
    c = Condenser(tiny, tiny_cfg(epochs=3))
    rec = c.step(0)
    assert rec.total == rec.coarse and rec.w_fine == 0.0


def test_condense_is_deterministic(tiny):
    a = condense(tiny, tiny_cfg(epochs=25))
    b = condense(tiny, tiny_cfg(epochs=25))
    assert a.features.tobytes() == b.features.tobytes()
    assert a.incidence.tobytes() == b.incidence.tobytes()
    assert [r.total for r in a.losses] == [r.total for r in b.losses]
    c = condense(tiny, tiny_cfg(epochs=25, seed=5))
    assert c.features.tobytes() != a.features.tobytes()


def test_condensed_rows_nonempty_and_labels(tiny):
    out = condense(tiny, tiny_cfg(epochs=30, lr_struct=0.01))
    assert ((out.incidence > 0).sum(axis=1) >= 1).all()
    assert (out.incidence >= 0).all()
    assert out.num_nodes == 6 and out.labels.tolist() == [0, 0, 1, 1, 2, 2]


def test_nonfinite_loss_aborts(tiny):
    c = Condenser(tiny, tiny_cfg(epochs=5))
    c.step(0)
    c.X.data[0, 0] = np.nan
    with pytest.raises(NonFiniteLoss) as exc:
        c.step(1)
    assert exc.value.epoch == 1 and exc.value.last_finite == c.history[0].total


def test_unimplemented_schedule_rejected():
    with pytest.raises(ConfigError, match="schedule"):
        RunConfig(schedule="linear")


def test_condensation_reads_no_test_labels(tiny):
    tiny.audit.reset()
    condense(tiny, tiny_cfg(epochs=5))
    assert tiny.audit.test_reads == 0 and tiny.audit.val_reads == 0


def fd_instance(seed, attempt):
    rng = substream(seed, "fd-objective", attempt)
    d = int(rng.integers(2, 7))
    C = int(rng.integers(2, 4))
    h = planted(n=40, num_classes=C, d=d, num_edges=20, seed=1000 + 10 * seed + attempt)
    n_synth = int(rng.integers(C, 9))
    cfg = RunConfig(ratio=n_synth / 40, lam=float(rng.choice([1.0, 2.0, 3.0])), epochs=30, s=2,
                    n_neg=int(rng.integers(1, 6)), seed=seed)
    c = Condenser(h, cfg)
    c.X.data = c.X.data + 0.1 * rng.normal(size=c.X.shape)
    # thresholds away from the scores so no entry sits on a ReLU kink
    scores = c.gen.scores(c.X.data).data
    q = rng.uniform(0.3, 0.8, size=scores.shape[0])
    delta = np.array([[np.quantile(row, qi)] for row, qi in zip(scores, q)])
    while (np.abs(scores - delta) < 1e-4).any():
        delta += 3e-4
    c.gen.delta.data = delta
    return c, int(rng.integers(1, cfg.epochs)), rng


# Gradients below this cannot be resolved by central differences at step 1e-6
# (roundoff is about eps * |loss| / step); such instances have hyperedges whose
# weights cancel out of the normalized propagation and are redrawn.
FD_RESOLVABLE = 1e-7


def objective_fd_error(seed):
    """Largest per-parameter relative error between taped and central-difference
    gradients of the full blended objective on a small random instance."""
    for attempt in range(20):
        c, t, rng = fd_instance(seed, attempt)
        params = [c.X] + c.gen.parameters()
        for p in params:
            p.zero_grad()
        with Tape() as tape:
            loss = c.objective(t)[0]
        tape.backward(loss)
        if min(np.abs(p.grad).max() for p in params) >= FD_RESOLVABLE:
            break
    else:
        raise AssertionError("no instance with resolvable gradients")

    def f():
        return c.objective(t)[0].item()

    numeric = central_difference(f, [p.data for p in params], step=1e-6, entries=40, rng=rng)
    return max(relative_error(p.grad.reshape(-1)[pos], est) for p, (pos, est) in zip(params, numeric))


@pytest.mark.parametrize("seed", range(20))
def test_objective_gradient_matches_finite_differences(seed):
    assert objective_fd_error(seed) <= 1e-4
