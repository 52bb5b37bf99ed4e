"""Truncated heat-kernel PageRank diffusion and its certification tools.

The diffusion ``sum_k e^-lam lam^k / k! P^k X`` is evaluated with one
propagation per order; the truncation order defaults to
``ceil(lam + 3 sqrt(lam))``. The exact filter ``U exp(-lam M) U^T X`` over the
eigenpairs of ``I - P`` serves as the untruncated reference on small inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats

from .errors import InvalidLambda, OracleTooLarge, ShapeMismatch

ORACLE_MAX_NODES = 500


def truncation_order(lam: float, t: float = 3.0) -> int:
    if not lam > 0:
        raise InvalidLambda(f"lambda must be positive, got {lam}")
    return math.ceil(lam + t * math.sqrt(lam))


@dataclass(frozen=True)
class PoissonWeights:
    lam: float
    K: int
    weights: np.ndarray

    @classmethod
    def build(cls, lam: float, K: int | None = None) -> "PoissonWeights":
        if not lam > 0:
            raise InvalidLambda(f"lambda must be positive, got {lam}")
        if K is None:
            K = truncation_order(lam)
        # recurrence w_k = w_{k-1} * lam / k avoids factorial overflow
        w = np.empty(K + 1)
        w[0] = math.exp(-lam)
        for k in range(1, K + 1):
            w[k] = w[k - 1] * lam / k
        return cls(float(lam), int(K), w)

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def residual_mass(self) -> float:
        # survival function is accurate where 1 - cdf would cancel
        return float(stats.poisson.sf(self.K, self.lam))


@dataclass(frozen=True)
class DiffusedFeatures:
    values: np.ndarray
    lam: float
    K: int
    source: str = ""


def hkpr_diffuse(P_apply: Callable, X, lam: float, K: int | None = None):
    """Sum of Poisson-weighted propagation powers applied to ``X``.

    ``P_apply`` maps a block ``V`` to ``P @ V``; it may act on numpy arrays or
    on autograd tensors (in which case the result is a tensor on the active
    tape). Orders are accumulated in ascending ``k``; weights are not
    renormalized.
    """
    pw = PoissonWeights.build(lam, K)
    V = X
    out = V * float(pw.weights[0])
    for k in range(1, pw.K + 1):
        V = P_apply(V)
        if V.shape != X.shape:
            raise ShapeMismatch("hkpr_diffuse", X.shape, V.shape)
        out = out + V * float(pw.weights[k])
    return out


def diffuse_features(op, X, lam: float, K: int | None = None, source="") -> DiffusedFeatures:
    if K is None:
        K = truncation_order(lam)
    if getattr(op, "shape", (X.shape[0],) * 2)[1] != X.shape[0]:
        raise ShapeMismatch("hkpr_diffuse", op.shape, X.shape)
    apply = op if callable(op) else (lambda V: op @ V)
    return DiffusedFeatures(np.asarray(hkpr_diffuse(apply, np.asarray(X, float), lam, K)), lam, K, source)


def laplacian_spectrum(P):
    P = P.toarray() if hasattr(P, "toarray") else np.asarray(P)
    n = P.shape[0]
    if n > ORACLE_MAX_NODES:
        raise OracleTooLarge(f"{n} nodes exceeds the dense oracle cap of {ORACLE_MAX_NODES}")
    L = np.eye(n) - 0.5 * (P + P.T)
    return np.linalg.eigh(L)


def spectral_oracle(P, X, lam: float) -> np.ndarray:
    """U exp(-lam mu) U^T X from the eigendecomposition of I - P."""
    mu, U = laplacian_spectrum(P)
    X = np.asarray(X, float)
    return U @ (np.exp(-lam * mu)[:, None] * (U.T @ X))


def tail_bound(lam: float, t: float) -> float:
    if not lam > 0 or not t > 0:
        raise ValueError("tail_bound needs lam > 0 and t > 0")
    return math.exp(-t * t / (2.0 + t / math.sqrt(lam)))


def poisson_tail(lam: float, threshold: float) -> float:
    """Exact Pr[N >= threshold] for N ~ Poisson(lam), by summing the pmf."""
    k0 = max(0, math.ceil(threshold - 1e-12))
    # pmf summation from k0 upward until terms vanish
    log_pmf = -lam + k0 * math.log(lam) - math.lgamma(k0 + 1)
    term = math.exp(log_pmf)
    total = 0.0
    k = k0
    while True:
        total += term
        k += 1
        term *= lam / k
        if k > lam and term < 1e-18 * max(total, 1e-300):
            break
    return total


def verify_tail_bound(lam: float, t: float) -> tuple[float, float]:
    exact = poisson_tail(lam, lam + t * math.sqrt(lam))
    bound = tail_bound(lam, t)
    assert exact <= bound, f"Poisson tail {exact} exceeds bound {bound} at lam={lam}, t={t}"
    return exact, bound
