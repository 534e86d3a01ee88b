import numpy as np
import pytest

from specdict.manifold import project_feasible, project_tangent
from specdict.spectral_core import SpectralDecomposition

# lines collected by the acceptance suite, echoed at the end of the run
ACCEPTANCE_LINES = []


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def random_sd(rng, p, r, spread=1.0) -> SpectralDecomposition:
    """Feasible point with distinct eigenvalues and a non-canonical gauge."""
    lam = spread * crandn(rng, r)
    return project_feasible((lam, crandn(rng, p, r), crandn(rng, p, r)))


def random_tangent(rng, base):
    p, r = base.p, base.r
    return project_tangent(base, (crandn(rng, r), crandn(rng, p, r), crandn(rng, p, r)))


def perturb(sd, v, h):
    """Ambient (non-retracted) move ``sd + h v``."""
    return (sd.eigvals + h * v.d_eigvals, sd.left + h * v.xi, sd.right + h * v.zeta)


def real_inner(a, b) -> float:
    return float(np.sum(np.conj(a) * b).real)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
