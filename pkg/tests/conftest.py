import numpy as np
import pytest

from spdgnn import autodiff as ad


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_sym(rng, n, scale=1.0, batch=()):
    a = rng.uniform(-scale, scale, size=(*batch, n, n))
    return (a + np.swapaxes(a, -1, -2)) / 2


def random_spd(rng, n, batch=(), min_eig=0.2, max_eig=5.0, gap=None):
    """Random SPD matrix with spectrum in [min_eig, max_eig]; ``gap`` enforces eigengaps."""
    q, _ = np.linalg.qr(rng.normal(size=(*batch, n, n)))
    if gap is None:
        lam = rng.uniform(min_eig, max_eig, size=(*batch, n))
    else:
        lam = min_eig + gap * np.arange(n) + rng.uniform(0, gap / 2, size=(*batch, n))
    return (q * lam[..., None, :]) @ np.swapaxes(q, -1, -2)


def numeric_grad(f, x0, eps=1e-5):
    """Central differences of scalar ``f`` at ``x0`` (a plain array)."""
    g = np.zeros_like(x0)
    for idx in np.ndindex(x0.shape):
        xp = x0.copy()
        xm = x0.copy()
        xp[idx] += eps
        xm[idx] -= eps
        g[idx] = (float(ad.value_of(f(xp))) - float(ad.value_of(f(xm)))) / (2 * eps)
    return g


def tape_grad(f, x0):
    tape = ad.Tape()
    x = tape.param(x0)
    return ad.backward(tape, f(x))[x]


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b))))


def check_grad(f, x0, eps=1e-5):
    return rel_err(tape_grad(f, x0), numeric_grad(f, x0, eps))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
