import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hypercondense.diffusion import (
    PoissonWeights,
    diffuse_features,
    hkpr_diffuse,
    laplacian_spectrum,
    poisson_tail,
    spectral_oracle,
    tail_bound,
    truncation_order,
    verify_tail_bound,
)
from hypercondense.errors import InvalidLambda, OracleTooLarge, ShapeMismatch
from hypercondense.hypergraph import propagation_matrix, propagation_operator
from hypercondense.seeding import substream
from hypercondense.theory import path3, random_hypergraph


@pytest.mark.parametrize("lam,K", [(1, 4), (3, 9), (5, 12), (2, 7), (0.5, 3)])
def test_truncation_order(lam, K):
    assert truncation_order(lam) == K


@pytest.mark.parametrize("lam", [0, -1.0])
def test_invalid_lambda(lam):
    with pytest.raises(InvalidLambda):
        truncation_order(lam)


def test_poisson_weights_against_pmf():
    pw = PoissonWeights.build(3.0)
    np.testing.assert_allclose(pw.weights, stats.poisson.pmf(np.arange(10), 3.0), rtol=1e-13)
    assert (pw.weights > 0).all() and pw.mass <= 1.0
    assert pw.residual_mass == pytest.approx(1 - pw.mass, abs=1e-14)


def test_identity_operator_scales_by_cdf():
    X = substream(0, "x").normal(size=(5, 3))
    out = hkpr_diffuse(lambda V: V, X, 1.0, 4)
    mass = math.exp(-1) * (1 + 1 + 1 / 2 + 1 / 6 + 1 / 24)
    assert mass == pytest.approx(0.99634, abs=5e-6)
    np.testing.assert_allclose(out, mass * X, rtol=1e-14)


def test_path3_matches_dense_matrix_powers():
    h = path3()
    P = propagation_matrix(h).toarray()
    X = np.eye(3)
    brute = sum(math.exp(-1) / math.factorial(k) * np.linalg.matrix_power(P, k) for k in range(5)) @ X
    got = diffuse_features(propagation_operator(h), X, 1.0).values
    np.testing.assert_allclose(got, brute, atol=1e-15)


def test_shape_mismatch():
    h = path3()
    with pytest.raises(ShapeMismatch):
        diffuse_features(propagation_operator(h), np.ones((4, 2)), 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(3, 40), st.floats(0.2, 6.0), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 9999))
def test_linearity(n, lam, a, b, seed):
    rng = substream(seed, "lin")
    op = propagation_operator(random_hypergraph(n, rng))
    X, Z = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    lhs = hkpr_diffuse(op, a * X + b * Z, lam)
    rhs = a * hkpr_diffuse(op, X, lam) + b * hkpr_diffuse(op, Z, lam)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 60), st.floats(0.2, 6.0), st.integers(0, 9999))
def test_low_pass(n, lam, seed):
    rng = substream(seed, "lp")
    h = random_hypergraph(n, rng)
    P = propagation_matrix(h)
    x = rng.normal(size=(n, 1))
    x /= np.linalg.norm(x)
    assert np.linalg.norm(spectral_oracle(P, x, lam)) <= 1 + 1e-12
    pw = PoissonWeights.build(lam)
    assert np.linalg.norm(hkpr_diffuse(lambda V: P @ V, x, lam)) <= 1 + pw.residual_mass + 1e-12


def test_oracle_identity_is_exact():
    X = substream(1, "x").normal(size=(6, 2))
    np.testing.assert_array_equal(spectral_oracle(np.eye(6), X, 2.5), X)


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 80), st.integers(0, 9999))
def test_laplacian_eigenvalues_in_range(n, seed):
    mu, _ = laplacian_spectrum(propagation_matrix(random_hypergraph(n, substream(seed, "ev"))))
    assert mu.min() >= -1e-9 and mu.max() <= 2 + 1e-9


def test_oracle_size_cap():
    import scipy.sparse as sp
    with pytest.raises(OracleTooLarge):
        spectral_oracle(sp.identity(501), np.ones((501, 1)), 1.0)


@pytest.mark.parametrize("lam", [1.0, 2.0, 3.0, 5.0])
def test_truncation_error_shrinks_with_order(lam):
    rng = substream(2, "trunc")
    h = random_hypergraph(20, rng)
    P = propagation_matrix(h)
    X = h.features
    exact = spectral_oracle(P, X, lam)
    K = truncation_order(lam)
    err = [np.abs(hkpr_diffuse(lambda V: P @ V, X, lam, k) - exact).max() for k in (K, K + 3)]
    assert err[1] < err[0]


def test_truncation_error_within_residual_on_50_nodes():
    rng = substream(3, "trunc50")
    h = random_hypergraph(50, rng)
    P = propagation_matrix(h)
    X = h.features
    pw = PoissonWeights.build(2.0)
    err = np.abs(hkpr_diffuse(lambda V: P @ V, X, 2.0) - spectral_oracle(P, X, 2.0)).max()
    assert err <= 2 * pw.residual_mass * np.abs(X).max()


def test_high_order_matches_oracle():
    rng = substream(4, "k40")
    for n in (20, 50, 100):
        h = random_hypergraph(n, rng)
        P = propagation_matrix(h)
        for lam in (1.0, 2.0, 3.0, 5.0):
            err = np.abs(hkpr_diffuse(lambda V: P @ V, h.features, lam, 40)
                         - spectral_oracle(P, h.features, lam)).max()
            assert err <= 1e-8


def test_tail_examples():
    exact, bound = verify_tail_bound(4.0, 3.0)
    assert bound == pytest.approx(0.0764, abs=5e-5)
    assert exact == pytest.approx(stats.poisson.sf(9, 4.0), rel=1e-12)
    assert exact == pytest.approx(0.00813, abs=5e-6)
    exact, bound = verify_tail_bound(1.0, 3.0)
    assert bound == pytest.approx(0.1653, abs=5e-5) and exact <= bound


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 3.0, 5.0, 10.0])
@pytest.mark.parametrize("t", [1.0, 2.0, 3.0, 4.0])
def test_tail_bound_grid(lam, t):
    exact = poisson_tail(lam, lam + t * math.sqrt(lam))
    # pmf-summation oracle agrees with the survival function
    k0 = math.ceil(lam + t * math.sqrt(lam))
    assert exact == pytest.approx(stats.poisson.sf(k0 - 1, lam), rel=1e-10)
    assert exact <= tail_bound(lam, t)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 50), st.floats(0.01, 10), st.floats(0.01, 10))
def test_tail_bound_monotone_in_t(lam, t1, t2):
    lo, hi = sorted((t1, t2))
    assert tail_bound(lam, hi) <= tail_bound(lam, lo)


@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0, 3.0, 5.0, 10.0])
def test_residual_mass_under_bound(lam):
    assert PoissonWeights.build(lam).residual_mass <= tail_bound(lam, 3.0)
