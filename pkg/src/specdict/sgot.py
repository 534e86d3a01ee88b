"""Optimal-transport divergence between operators' spectral measures.

Each operator becomes a uniform measure over its eigen-triplets
``(lambda_i, l_i, r_i)``.  The ground cost between two triplets is

    eta * |lambda - lambda'|**q + (1 - eta) * d(P, P')**q

where ``d`` is a distance between the rank-one spectral projectors
``P = r l^*`` computed from the spectral angle

    delta = |<r, r'>| |<l', l>| / (|r| |r'| |l| |l'|).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.optimize

from .errors import InvalidMeasure, InvalidShape
from .spectral_core import SpectralDecomposition, canonical_order

PROJECTOR_METRICS = ("geodesic", "chordal", "procrustes", "log_martin")


@dataclass(frozen=True)
class SgotConfig:
    eta: float = 0.25
    q: int = 2
    projector_metric: str = "log_martin"
    delta_clamp: float = 1e-12

    def __post_init__(self):
        # eta = 1 (eigenvalue-only cost) is accepted for diagnostics
        if not (0.0 < self.eta < 1.0 or self.eta == 1.0):
            raise ValueError("eta must lie in (0, 1]")
        if int(self.q) != self.q or self.q < 1:
            raise ValueError("q must be a positive integer")
        if self.projector_metric not in PROJECTOR_METRICS:
            raise ValueError(f"unknown projector metric {self.projector_metric!r}")

    def to_dict(self) -> dict:
        return {
            "eta": self.eta,
            "q": self.q,
            "projector_metric": self.projector_metric,
            "delta_clamp": self.delta_clamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SgotConfig":
        return cls(float(d["eta"]), int(d["q"]), str(d["projector_metric"]), float(d["delta_clamp"]))


@dataclass(frozen=True, eq=False)
class SpectralMeasure:
    """Weighted atoms; row ``i`` of ``lefts``/``rights`` holds ``l_i``/``r_i``."""

    eigvals: np.ndarray
    lefts: np.ndarray
    rights: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or len(w) != len(self.eigvals):
            raise InvalidMeasure("one weight per atom is required")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidMeasure("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.eigvals)

    def atom(self, i: int):
        return self.eigvals[i], self.lefts[i], self.rights[i]


@dataclass(frozen=True, eq=False)
class TransportPlan:
    matrix: np.ndarray

    @property
    def row_marginal(self):
        return self.matrix.sum(axis=1)

    @property
    def col_marginal(self):
        return self.matrix.sum(axis=0)


def to_measure(sd: SpectralDecomposition) -> SpectralMeasure:
    """Uniform spectral measure, atoms in canonical eigenvalue order."""
    perm = canonical_order(sd.eigvals)
    r = sd.r
    return SpectralMeasure(
        sd.eigvals[perm], sd.left[:, perm].T.copy(), sd.right[:, perm].T.copy(), np.full(r, 1.0 / r)
    )


def _cosines(a: np.ndarray, b: np.ndarray):
    """``|a_i^* b_j| / (|a_i| |b_j|)`` for row-stacked vectors."""
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    return np.abs(a.conj() @ b.T) / (na[:, None] * nb[None, :])


def spectral_angles(mu: SpectralMeasure, nu: SpectralMeasure) -> np.ndarray:
    delta = _cosines(mu.rights, nu.rights) * _cosines(mu.lefts, nu.lefts)
    return np.minimum(delta, 1.0)


def projector_metric_value(delta, metric: str, clamp: float = 1e-12):
    """Distance between rank-one projectors as a function of the spectral angle.

    The clamp only guards the singular metrics (arccos, log).
    """
    raw = np.clip(np.asarray(delta, dtype=float), 0.0, 1.0)
    if metric == "chordal":
        return 1.0 - raw**2
    if metric == "procrustes":
        return 2.0 * (1.0 - raw)
    d = np.maximum(raw, clamp)
    if metric == "geodesic":
        return np.arccos(d) ** 2
    if metric == "log_martin":
        return -np.log(d**2)
    raise ValueError(f"unknown projector metric {metric!r}")


def _projector_metric_deriv(delta, metric: str):
    d = np.asarray(delta, dtype=float)
    if metric == "geodesic":
        one_minus = np.maximum(1.0 - d * d, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -2.0 * np.arccos(d) / np.sqrt(one_minus)
        # limit as delta -> 1
        return np.where(one_minus < 1e-14, -2.0, out)
    if metric == "chordal":
        return -2.0 * d
    if metric == "procrustes":
        return np.full_like(d, -2.0)
    if metric == "log_martin":
        return -2.0 / d
    raise ValueError(f"unknown projector metric {metric!r}")


def projector_distance(a, b, metric: str = "log_martin", clamp: float = 1e-12) -> float:
    """Distance between the projectors of two atoms ``(lambda, left, right)``."""
    _, la, ra = a
    _, lb, rb = b
    cr = abs(np.vdot(ra, rb)) / (np.linalg.norm(ra) * np.linalg.norm(rb))
    cl = abs(np.vdot(lb, la)) / (np.linalg.norm(la) * np.linalg.norm(lb))
    return float(projector_metric_value(min(cr * cl, 1.0), metric, clamp))


def ground_cost(a, b, cfg: SgotConfig) -> float:
    lam_a, lam_b = a[0], b[0]
    d_e = projector_distance(a, b, cfg.projector_metric, cfg.delta_clamp)
    return float(cfg.eta * abs(lam_a - lam_b) ** cfg.q + (1.0 - cfg.eta) * d_e**cfg.q)


def cost_matrix(mu: SpectralMeasure, nu: SpectralMeasure, cfg: SgotConfig) -> np.ndarray:
    """All pairwise ground costs, shape ``(len(mu), len(nu))``."""
    if mu.lefts.shape[1] != nu.lefts.shape[1]:
        raise InvalidShape("measures live in different ambient dimensions")
    eig = np.abs(mu.eigvals[:, None] - nu.eigvals[None, :]) ** cfg.q
    if cfg.eta == 1.0:
        return eig
    d_e = projector_metric_value(spectral_angles(mu, nu), cfg.projector_metric, cfg.delta_clamp)
    return cfg.eta * eig + (1.0 - cfg.eta) * d_e**cfg.q


def solve_transport_costs(cost: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Exact optimal transport for a given cost matrix and marginals."""
    n, m = cost.shape
    if abs(a.sum() - b.sum()) > 1e-12:
        raise InvalidMeasure("marginals carry different total mass")
    if n == m and np.all(a == a[0]) and np.all(b == b[0]) and abs(a[0] - b[0]) < 1e-15:
        rows, cols = scipy.optimize.linear_sum_assignment(cost)
        plan = np.zeros((n, m))
        plan[rows, cols] = a[0]
        return plan
    # general weights: transportation LP, solved exactly by HiGHS simplex
    a_eq = np.zeros((n + m, n * m))
    for i in range(n):
        a_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        a_eq[n + j, j::m] = 1.0
    b_eq = np.concatenate([a, b])
    res = scipy.optimize.linprog(
        cost.ravel(), A_eq=a_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None),
        method="highs-ds", options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise InvalidMeasure(f"transport LP failed: {res.message}")
    return np.maximum(res.x.reshape(n, m), 0.0)


def solve_transport(mu: SpectralMeasure, nu: SpectralMeasure, cfg: SgotConfig):
    """Optimal coupling and its cost."""
    cost = cost_matrix(mu, nu, cfg)
    plan = solve_transport_costs(cost, mu.weights, nu.weights)
    return TransportPlan(plan), float(np.sum(plan * cost))


def sgot_divergence(g1: SpectralDecomposition, g2: SpectralDecomposition, cfg: SgotConfig) -> float:
    if g1.p != g2.p:
        raise InvalidShape(f"ambient dimensions differ: {g1.p} vs {g2.p}")
    _, cost = solve_transport(to_measure(g1), to_measure(g2), cfg)
    return cost


def brute_force_cost(mu: SpectralMeasure, nu: SpectralMeasure, cfg: SgotConfig) -> float:
    """Minimum over all permutations (uniform, equal-size measures only)."""
    cost = cost_matrix(mu, nu, cfg)
    n = cost.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, cost[np.arange(n), perm].sum() / n)
    return float(best)


def _cosine_grad(a: np.ndarray, b: np.ndarray):
    """Gradient of ``|a^* b| / (|a| |b|)`` w.r.t. ``a`` (package convention)."""
    s = np.vdot(a, b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    abs_s = abs(s)
    c = abs_s / (na * nb)
    if abs_s == 0.0:
        return np.zeros_like(a), c
    return b * (s.conjugate() / abs_s) / (na * nb) - c * a / na**2, c


def grad_sgot_fixed_plan(
    recon: SpectralDecomposition,
    target: SpectralMeasure,
    plan: TransportPlan,
    cfg: SgotConfig,
):
    """Gradient of ``sum_ij pi_ij C_ij`` w.r.t. ``recon``'s ``(Lambda, L, R)``.

    The plan rows are indexed by ``recon``'s atoms in canonical order (as
    produced by :func:`to_measure`); the returned gradients are in the
    storage order of ``recon``.
    """
    perm = canonical_order(recon.eigvals)
    g_lam = np.zeros(recon.r, dtype=np.complex128)
    g_l = np.zeros_like(recon.left)
    g_r = np.zeros_like(recon.right)
    q = cfg.q
    pi = plan.matrix
    for row, i in enumerate(perm):
        lam = recon.eigvals[i]
        l_i, r_i = recon.left[:, i], recon.right[:, i]
        for j in np.nonzero(pi[row] > 0)[0]:
            w = pi[row, j]
            diff = lam - target.eigvals[j]
            mag = abs(diff)
            if mag > 0:
                g_lam[i] += w * cfg.eta * q * mag ** (q - 2) * diff
            if cfg.eta == 1.0:
                continue
            gr, c_r = _cosine_grad(r_i, target.rights[j])
            gl, c_l = _cosine_grad(l_i, target.lefts[j])
            delta = c_r * c_l
            if delta < cfg.delta_clamp:
                continue
            delta = min(delta, 1.0)
            d_e = float(projector_metric_value(delta, cfg.projector_metric, cfg.delta_clamp))
            dd = float(_projector_metric_deriv(delta, cfg.projector_metric))
            outer = w * (1.0 - cfg.eta) * q * d_e ** (q - 1) * dd
            g_r[:, i] += outer * c_l * gr
            g_l[:, i] += outer * c_r * gl
    return g_lam, g_l, g_r


def pairwise_distances(sds, cfg: SgotConfig) -> np.ndarray:
    """Symmetric matrix of divergences between all pairs."""
    n = len(sds)
    measures = [to_measure(sd) for sd in sds]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            _, c = solve_transport(measures[i], measures[j], cfg)
            out[i, j] = out[j, i] = c
    return out
