"""Synthetic operator populations with known structure."""

from __future__ import annotations

import numpy as np

from .manifold import project_feasible
from .spectral_core import SpectralDecomposition, assemble_operator, spectral_decompose


def random_decomposition(p: int, r: int, rng: np.random.Generator, spread: float = 1.0) -> SpectralDecomposition:
    """Canonical decomposition of a random rank-``r`` complex operator."""
    a = rng.normal(size=(p, r)) + 1j * rng.normal(size=(p, r))
    b = rng.normal(size=(p, r)) + 1j * rng.normal(size=(p, r))
    return spectral_decompose(spread * a @ b.conj().T, r)


def one_parameter_family(n: int = 64, p: int = 8, r: int = 2, seed: int = 0):
    """``n`` decompositions along a smooth curve ``theta -> G(theta)``, ``theta`` in [0, 1].

    Eigenvalues move linearly, right eigenvectors rotate inside a fixed
    plane of ``C^{p x r}`` and the left factor follows by bi-orthogonal
    projection.  Returns ``(thetas, decompositions)``.
    """
    rng = np.random.default_rng(seed)
    thetas = np.linspace(0.0, 1.0, n)
    r0 = rng.normal(size=(p, r)) + 1j * rng.normal(size=(p, r))
    r1 = rng.normal(size=(p, r)) + 1j * rng.normal(size=(p, r))
    l0 = rng.normal(size=(p, r)) + 1j * rng.normal(size=(p, r))
    lam0 = np.linspace(0.9, 0.3, r).astype(complex)
    lam1 = np.linspace(0.6, 0.5, r) * np.exp(1j * np.linspace(0.2, -0.4, r))
    out = []
    for t in thetas:
        ang = t * np.pi / 3
        right = np.cos(ang) * r0 + np.sin(ang) * r1
        lam = (1 - t) * lam0 + t * lam1
        sd = project_feasible((lam, l0, right))
        out.append(spectral_decompose(assemble_operator(sd), r))
    return thetas, out
