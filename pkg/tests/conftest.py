import numpy as np
import pytest

from hypercondense.datasets import cora_like, planted
from hypercondense.hypergraph import Hypergraph


def central_difference(f, arrays, step=1e-5, entries=None, rng=None):
    """Numerical gradient of scalar ``f()`` wrt each array in ``arrays`` (mutated
    in place and restored). ``entries`` limits each array to that many random
    flat positions; returns a list of (positions, estimates)."""
    out = []
    for a in arrays:
        flat = a.reshape(-1)
        pos = np.arange(flat.size)
        if entries is not None and flat.size > entries:
            pos = np.sort(rng.choice(flat.size, size=entries, replace=False))
        est = np.empty(pos.size)
        for k, i in enumerate(pos):
            orig = flat[i]
            flat[i] = orig + step
            hi = f()
            flat[i] = orig - step
            lo = f()
            flat[i] = orig
            est[k] = (hi - lo) / (2 * step)
        out.append((pos, est))
    return out


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, float)
    numeric = np.asarray(numeric, float)
    scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


@pytest.fixture
def path3():
    return Hypergraph([[0, 1], [1, 2]], np.eye(3), [0, 1, 0], 2, name="path3")


@pytest.fixture(scope="session")
def small_planted():
    return planted(n=60, num_classes=3, d=8, num_edges=30, seed=3)


@pytest.fixture(scope="session")
def cora():
    return cora_like(seed=0)


ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")
