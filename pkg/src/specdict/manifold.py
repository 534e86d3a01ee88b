"""Riemannian geometry of bi-orthogonal spectral decompositions.

Tangent vectors at ``(Lambda, L, R)`` are triples ``(dLambda, xi, zeta)``
with ``xi^* R + L^* zeta = 0``.  The metric is the product of the Euclidean
metric on eigenvalues and the gauge-invariant "stable" metric

    g((xi, zeta), (xi', zeta')) = Re tr(xi^* xi' (L^*L)^-1) + Re tr(zeta^* zeta' (R^*R)^-1)

Euclidean gradients follow one convention throughout the package: for a real
function ``f`` of a complex matrix ``X`` the gradient is
``df/dRe(X) + i df/dIm(X)``, so that ``Df[V] = Re <grad, V>``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import IllConditionedBase, InfeasibleAggregate, InvalidShape, StepTooLarge
from .spectral_core import SpectralDecomposition

SAFE_STEP_MARGIN = 0.9


@dataclass(frozen=True)
class MetricConfig:
    kind: str = "stable"
    regularizer: float = 0.0

    def __post_init__(self):
        if self.kind not in ("stable", "natural"):
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if not 0.0 <= self.regularizer <= 1e-6:
            raise ValueError("regularizer must lie in [0, 1e-6]")


@dataclass(frozen=True, eq=False)
class TangentVector:
    d_eigvals: np.ndarray
    xi: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d_eigvals", np.asarray(self.d_eigvals, dtype=np.complex128))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=np.complex128))
        object.__setattr__(self, "zeta", np.asarray(self.zeta, dtype=np.complex128))
        if self.xi.shape != self.zeta.shape or self.xi.shape[1] != self.d_eigvals.shape[0]:
            raise InvalidShape("inconsistent tangent vector shapes")

    def scaled(self, c: float) -> "TangentVector":
        return TangentVector(c * self.d_eigvals, c * self.xi, c * self.zeta)

    def __add__(self, other: "TangentVector") -> "TangentVector":
        return TangentVector(
            self.d_eigvals + other.d_eigvals, self.xi + other.xi, self.zeta + other.zeta
        )

    def norm_inf(self) -> float:
        return float(
            max(np.abs(self.d_eigvals).max(initial=0.0), np.abs(self.xi).max(), np.abs(self.zeta).max())
        )


def tangency_error(base: SpectralDecomposition, v: TangentVector) -> float:
    return float(np.linalg.norm(v.xi.conj().T @ base.right + base.left.conj().T @ v.zeta))


def _gram_solver(mat: np.ndarray, cfg: MetricConfig):
    gram = mat.conj().T @ mat
    if cfg.regularizer:
        gram = gram + cfg.regularizer * np.eye(gram.shape[0])
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise IllConditionedBase("Gram matrix is not positive definite") from exc
    return gram, factor


def _check_kind(cfg: MetricConfig):
    if cfg.kind != "stable":
        raise NotImplementedError("only the stable metric is implemented")


def project_tangent(
    base: SpectralDecomposition,
    ambient: tuple | TangentVector,
    cfg: MetricConfig = MetricConfig(),
) -> TangentVector:
    """Orthogonal projection (for the stable metric) onto the tangent space at ``base``.

    With ``A = xi'^* R + L^* zeta'`` the projection is
    ``xi = xi' - R (R^*R)^-1 A^* / 2`` and ``zeta = zeta' - L (L^*L)^-1 A / 2``.
    """
    _check_kind(cfg)
    if isinstance(ambient, TangentVector):
        d_lam, xi_a, zeta_a = ambient.d_eigvals, ambient.xi, ambient.zeta
    else:
        d_lam, xi_a, zeta_a = ambient
    L, R = base.left, base.right
    _, fac_l = _gram_solver(L, cfg)
    _, fac_r = _gram_solver(R, cfg)
    a = np.asarray(xi_a).conj().T @ R + L.conj().T @ np.asarray(zeta_a)
    xi = xi_a - 0.5 * R @ scipy.linalg.cho_solve(fac_r, a.conj().T)
    zeta = zeta_a - 0.5 * L @ scipy.linalg.cho_solve(fac_l, a)
    return TangentVector(np.array(d_lam, dtype=np.complex128, copy=True), xi, zeta)


def metric_inner(
    base: SpectralDecomposition,
    u: TangentVector,
    v: TangentVector,
    cfg: MetricConfig = MetricConfig(),
) -> float:
    _check_kind(cfg)
    _, fac_l = _gram_solver(base.left, cfg)
    _, fac_r = _gram_solver(base.right, cfg)
    eig_part = np.vdot(u.d_eigvals, v.d_eigvals).real
    # tr(xi^* xi' G^-1) = tr(G^-1 xi^* xi')
    left_part = np.trace(scipy.linalg.cho_solve(fac_l, u.xi.conj().T @ v.xi)).real
    right_part = np.trace(scipy.linalg.cho_solve(fac_r, u.zeta.conj().T @ v.zeta)).real
    return float(eig_part + left_part + right_part)


def riemannian_gradient(
    base: SpectralDecomposition,
    euclid_grad: tuple,
    cfg: MetricConfig = MetricConfig(),
) -> TangentVector:
    """Riemannian gradient from the Euclidean one ``(g_Lambda, g_L, g_R)``."""
    g_lam, g_l, g_r = euclid_grad
    gram_l, _ = _gram_solver(base.left, cfg)
    gram_r, _ = _gram_solver(base.right, cfg)
    return project_tangent(base, (g_lam, np.asarray(g_l) @ gram_l, np.asarray(g_r) @ gram_r), cfg)


def safe_step(base: SpectralDecomposition, v: TangentVector) -> float:
    """Largest step (with a 0.9 margin) keeping ``R + t zeta`` full rank."""
    zeta_norm = np.linalg.norm(v.zeta, 2)
    if zeta_norm == 0.0:
        return float("inf")
    sigma_min = np.linalg.svd(base.right, compute_uv=False)[-1]
    return float(SAFE_STEP_MARGIN * sigma_min / zeta_norm)


def retract(base: SpectralDecomposition, v: TangentVector, step: float) -> SpectralDecomposition:
    """Move along ``v`` by ``step`` and restore bi-orthogonality.

    The right factor moves freely; the left factor is corrected inside the
    range of the new right factor.
    """
    if step == 0.0:
        return base
    r_new = base.right + step * v.zeta
    l_tmp = base.left + step * v.xi
    gram = r_new.conj().T @ r_new
    try:
        factor = scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise StepTooLarge("retracted right factor is rank deficient") from exc
    if np.linalg.cond(gram) > 1e24:
        raise StepTooLarge("retracted right factor is rank deficient")
    corr = r_new.conj().T @ l_tmp - np.eye(base.r)
    l_new = l_tmp - r_new @ scipy.linalg.cho_solve(factor, corr)
    return SpectralDecomposition(base.eigvals + step * v.d_eigvals, l_new, r_new)


def project_feasible(raw) -> SpectralDecomposition:
    """Closest bi-orthogonal left factor for fixed eigenvalues and right factor.

    ``L~ = L + R (R^*R)^-1 (I - L^*R)^*`` minimizes ``||L~ - L||_F`` subject to
    ``L~^* R = I``.
    """
    if isinstance(raw, SpectralDecomposition):
        eigvals, L, R = raw.eigvals, raw.left, raw.right
    else:
        eigvals, L, R = raw
    L = np.asarray(L, dtype=np.complex128)
    R = np.asarray(R, dtype=np.complex128)
    r = R.shape[1]
    s = np.linalg.svd(R, compute_uv=False)
    if s[-1] <= 1e-10:
        raise InfeasibleAggregate(f"right factor is rank deficient (sigma_min={s[-1]:.2e})")
    resid = np.eye(r) - L.conj().T @ R
    gram = R.conj().T @ R
    l_new = L + R @ np.linalg.solve(gram, resid.conj().T)
    return SpectralDecomposition(eigvals, l_new, R)


def project_feasible_vjp(L_raw: np.ndarray, R: np.ndarray, L_out: np.ndarray, g_l: np.ndarray):
    """Pull a gradient w.r.t. the projected left factor back to ``(L_raw, R)``.

    Returns ``(g_L_raw, g_R)`` in the package gradient convention; ``g_R`` is
    only the contribution flowing through the projection.
    """
    gram = R.conj().T @ R
    gram_inv = np.linalg.inv(gram)
    proj = R @ gram_inv @ R.conj().T
    resid = np.eye(R.shape[1]) - L_raw.conj().T @ R
    g_l_perp = g_l - proj @ g_l
    g_l_raw = g_l_perp
    # dL = (I - P) dR W E^* - R W dR^* L  with W = (R^*R)^-1, E = I - L_raw^* R
    g_r = g_l_perp @ (resid @ gram_inv) - L_out @ (g_l.conj().T @ R @ gram_inv)
    return g_l_raw, g_r
