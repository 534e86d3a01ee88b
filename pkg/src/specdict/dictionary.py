"""Dictionary learning over spectral decompositions.

Atoms are spectral decompositions sharing ``(p, r)``.  A code ``alpha`` on
the simplex is decoded by averaging eigenvalues, left and right factors and
then restoring bi-orthogonality on the left factor.  Codes are fitted with
Adam on softmax logits; atoms are updated with one Riemannian gradient step
per batch, holding codes and transport plans fixed.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.optimize

from .errors import CoefficientFitFailed, InfeasibleAggregate, InvalidInput, StepTooLarge
from .manifold import (
    MetricConfig,
    project_feasible,
    project_feasible_vjp,
    retract,
    riemannian_gradient,
    safe_step,
)
from .sgot import (
    SgotConfig,
    SpectralMeasure,
    grad_sgot_fixed_plan,
    pairwise_distances,
    solve_transport,
    to_measure,
)
from .spectral_core import SpectralDecomposition, rescale

log = logging.getLogger(__name__)

MAX_BACKTRACK = 20
MAX_DICT_HALVINGS = 10


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    batch_size: int = 32
    coeff_lr: float = 0.5
    coeff_iters: int = 100
    dict_lr: float = 1e-2
    seed: int = 0
    est_iters: int = 100
    est_lr: float = 0.5

    def __post_init__(self):
        for name in ("epochs", "batch_size", "coeff_iters", "est_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("coeff_lr", "dict_lr", "est_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass(frozen=True, eq=False)
class Coefficients:
    logits: np.ndarray
    loss: float = float("nan")
    initial_loss: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "logits", np.asarray(self.logits, dtype=float))

    @property
    def alpha(self) -> np.ndarray:
        return softmax(self.logits)

    @classmethod
    def from_alpha(cls, alpha, **kw) -> "Coefficients":
        alpha = np.asarray(alpha, dtype=float)
        with np.errstate(divide="ignore"):
            logits = np.log(alpha)
        # vertices: push the other logits far away instead of -inf
        logits = np.where(np.isfinite(logits), logits, -745.0)
        return cls(logits, **kw)


@dataclass(eq=False)
class Dictionary:
    atoms: list
    sgot: SgotConfig = field(default_factory=SgotConfig)
    train: TrainConfig | None = None
    loss_curve: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    init_loss: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.atoms) < 2:
            raise InvalidInput("a dictionary needs at least two atoms")
        shapes = {(a.p, a.r) for a in self.atoms}
        if len(shapes) != 1:
            raise InvalidInput(f"atoms have mixed shapes {sorted(shapes)}")

    @property
    def d(self) -> int:
        return len(self.atoms)

    @property
    def p(self) -> int:
        return self.atoms[0].p

    @property
    def r(self) -> int:
        return self.atoms[0].r

    def to_dict(self) -> dict:
        return {
            "sgot": self.sgot.to_dict(),
            "train": None if self.train is None else self.train.to_dict(),
            "atoms": [a.to_dict() for a in self.atoms],
            "loss_curve": [float(x) for x in self.loss_curve],
            "epoch_losses": [float(x) for x in self.epoch_losses],
            "init_loss": None if self.init_loss is None else float(self.init_loss),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "Dictionary":
        return cls(
            atoms=[SpectralDecomposition.from_dict(a) for a in d["atoms"]],
            sgot=SgotConfig.from_dict(d["sgot"]),
            train=None if d.get("train") is None else TrainConfig.from_dict(d["train"]),
            loss_curve=list(d.get("loss_curve", [])),
            epoch_losses=list(d.get("epoch_losses", [])),
            init_loss=d.get("init_loss"),
            metadata=dict(d.get("metadata", {})),
        )

    @classmethod
    def from_json(cls, text: str) -> "Dictionary":
        return cls.from_dict(json.loads(text))


def _atoms(dictionary) -> Sequence[SpectralDecomposition]:
    return dictionary.atoms if isinstance(dictionary, Dictionary) else dictionary


def _alpha(alpha) -> np.ndarray:
    return alpha.alpha if isinstance(alpha, Coefficients) else np.asarray(alpha, dtype=float)


# --------------------------------------------------------------------------
# decoder


def aggregate(alpha: np.ndarray, atoms: Sequence[SpectralDecomposition]):
    """Convex combination of eigenvalues, left and right factors."""
    lam = sum(a * atom.eigvals for a, atom in zip(alpha, atoms))
    left = sum(a * atom.left for a, atom in zip(alpha, atoms))
    right = sum(a * atom.right for a, atom in zip(alpha, atoms))
    return lam, left, right


def decode(alpha, dictionary) -> SpectralDecomposition:
    """Decode a simplex code into a feasible spectral decomposition."""
    return project_feasible(aggregate(_alpha(alpha), _atoms(dictionary)))


class _StackedAtoms:
    """Atoms as stacked arrays, for vectorized aggregation."""

    def __init__(self, atoms):
        self.atoms = list(atoms)
        self.lams = np.array([a.eigvals for a in self.atoms])
        self.lefts = np.stack([a.left for a in self.atoms])
        self.rights = np.stack([a.right for a in self.atoms])

    def __len__(self):
        return len(self.atoms)


def _stacked(atoms) -> _StackedAtoms:
    return atoms if isinstance(atoms, _StackedAtoms) else _StackedAtoms(_atoms(atoms))


class _DecodeState:
    """Decoded point plus the intermediates needed for derivatives.

    Everything is kept low rank: the projector onto ``range(R)`` is applied
    as ``R (W (R^* X))`` with ``W = (R^*R)^-1``.
    """

    def __init__(self, alpha, atoms, aggregated=None):
        st = _stacked(atoms)
        self.stack = st
        self.alpha = alpha
        if aggregated is None:
            lam = alpha @ st.lams
            l_raw = np.tensordot(alpha, st.lefts, axes=1)
            right = np.tensordot(alpha, st.rights, axes=1)
        else:
            lam, l_raw, right = aggregated
        if np.linalg.svd(right, compute_uv=False)[-1] <= 1e-10:
            raise InfeasibleAggregate("aggregated right factor is rank deficient")
        r = right.shape[1]
        self.gram_inv = np.linalg.inv(right.conj().T @ right)
        # K = W E^*, with E = I - L_raw^* R
        self.k = self.gram_inv @ (np.eye(r) - l_raw.conj().T @ right).conj().T
        self.lam, self.l_raw, self.right = lam, l_raw, right
        self.left = l_raw + right @ self.k
        self._sd = None

    @property
    def sd(self) -> SpectralDecomposition:
        if self._sd is None:
            self._sd = SpectralDecomposition(self.lam, self.left, self.right)
        return self._sd

    def directional(self):
        """Derivatives of the decoded ``(Lambda, L, R)`` along every ``alpha_j`` (stacked)."""
        st = self.stack
        R, W = self.right, self.gram_inv
        a = st.lefts + st.rights @ self.k
        d_l = a - R @ (W @ (R.conj().T @ a)) - R @ (W @ (np.swapaxes(st.rights.conj(), 1, 2) @ self.left))
        return st.lams, d_l, st.rights

    def alpha_grad(self, cost_grad) -> np.ndarray:
        g_lam, g_l, g_r = cost_grad
        d_lam, d_l, d_r = self.directional()
        out = (d_lam @ np.conj(g_lam)).real
        out += np.einsum("jpr,pr->j", d_l, np.conj(g_l)).real
        out += np.einsum("jpr,pr->j", d_r, np.conj(g_r)).real
        return out


def _softmax_pullback(alpha: np.ndarray, g_alpha: np.ndarray) -> np.ndarray:
    return alpha * (g_alpha - np.dot(alpha, g_alpha))


def decode_grad_chain(alpha, dictionary, cost_grad) -> np.ndarray:
    """Gradient w.r.t. the softmax logits of a loss whose gradient at ``decode(alpha)`` is ``cost_grad``."""
    a = _alpha(alpha)
    state = _DecodeState(a, _atoms(dictionary))
    return _softmax_pullback(a, state.alpha_grad(cost_grad))


def decode_vjp_atoms(alpha, dictionary, cost_grad):
    """Per-atom Euclidean gradients ``[(g_Lambda_j, g_L_j, g_R_j)]`` with ``alpha`` fixed."""
    a = _alpha(alpha)
    atoms = _atoms(dictionary)
    lam, l_raw, right = aggregate(a, atoms)
    sd = project_feasible((lam, l_raw, right))
    g_lam, g_l, g_r = cost_grad
    g_l_raw, g_r_proj = project_feasible_vjp(l_raw, right, sd.left, g_l)
    g_r_total = g_r + g_r_proj
    return [(aj * g_lam, aj * g_l_raw, aj * g_r_total) for aj in a]


# --------------------------------------------------------------------------
# optimizers


class Adam:
    """Plain Adam (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def direction(self, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(grad)
            self.v = np.zeros_like(grad)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return -self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _minimize_logits(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    lr: float,
    iters: int,
    gtol: float = 0.0,
):
    """Adam on logits, keeping the best iterate.

    ``fun`` raises :class:`InfeasibleAggregate` where the decoder breaks down;
    the step is then halved (up to 20 times).
    """
    x = np.array(x0, dtype=float)
    try:
        f, g = fun(x)
    except InfeasibleAggregate as exc:
        raise CoefficientFitFailed("decoder infeasible at initialization") from exc
    f0 = f
    best_x, best_f = x.copy(), f
    opt = Adam(lr)
    for _ in range(iters):
        if not np.all(np.isfinite(g)) or np.linalg.norm(g) <= gtol:
            break
        step = opt.direction(g)
        for _halving in range(MAX_BACKTRACK + 1):
            try:
                f_new, g_new = fun(x + step)
                break
            except InfeasibleAggregate:
                step = 0.5 * step
        else:
            raise CoefficientFitFailed("decoder stayed infeasible after 20 step halvings")
        x = x + step
        f, g = f_new, g_new
        if f < best_f - 1e-13 * (1.0 + abs(best_f)):
            best_x, best_f = x.copy(), f
    return best_x, best_f, f0


def sgot_loss_and_grad(logits, atoms, target: SpectralMeasure, cfg: SgotConfig):
    """Divergence between ``decode(softmax(logits))`` and a target, and its logit gradient."""
    alpha = softmax(logits)
    state = _DecodeState(alpha, atoms)
    plan, cost = solve_transport(to_measure(state.sd), target, cfg)
    grad = grad_sgot_fixed_plan(state.sd, target, plan, cfg)
    return cost, _softmax_pullback(alpha, state.alpha_grad(grad))


def fit_coefficients(
    targets: Sequence[SpectralDecomposition],
    dictionary,
    cfg: TrainConfig = TrainConfig(),
    sgot: SgotConfig | None = None,
) -> list[Coefficients]:
    """Fit one simplex code per target by minimizing the divergence to the decoded operator.

    Logits start at ``-d_S(target, atom_j)``.
    """
    atoms = _atoms(dictionary)
    if sgot is None:
        sgot = dictionary.sgot if isinstance(dictionary, Dictionary) else SgotConfig()
    atom_measures = [to_measure(a) for a in atoms]
    stack = _StackedAtoms(atoms)
    out = []
    for target in targets:
        if (target.p, target.r) != (atoms[0].p, atoms[0].r):
            raise InvalidInput("target shape differs from the dictionary")
        mu = to_measure(target)
        init = -np.array([solve_transport(mu, am, sgot)[1] for am in atom_measures])
        x, f, f0 = _minimize_logits(
            lambda z: sgot_loss_and_grad(z, stack, mu, sgot), init, cfg.coeff_lr, cfg.coeff_iters
        )
        out.append(Coefficients(x, loss=f, initial_loss=f0))
    return out


# --------------------------------------------------------------------------
# dictionary learning


def kmedoids(dist: np.ndarray, k: int, max_iter: int = 100) -> np.ndarray:
    """Deterministic k-medoids: greedy BUILD then alternating assignment/update."""
    n = dist.shape[0]
    if k > n:
        raise InvalidInput(f"cannot pick {k} medoids from {n} points")
    medoids = [int(np.argmin(dist.sum(axis=1)))]
    while len(medoids) < k:
        nearest = dist[:, medoids].min(axis=1)
        gains = [
            -np.inf if c in medoids else np.maximum(nearest - dist[:, c], 0.0).sum() for c in range(n)
        ]
        medoids.append(int(np.argmax(gains)))
    medoids = np.array(medoids)
    for _ in range(max_iter):
        labels = np.argmin(dist[:, medoids], axis=1)
        new = medoids.copy()
        for c in range(k):
            members = np.nonzero(labels == c)[0]
            if len(members) == 0:
                continue
            within = dist[np.ix_(members, members)].sum(axis=1)
            new[c] = members[int(np.argmin(within))]
        if np.array_equal(new, medoids):
            break
        medoids = new
    return medoids


def align_gauge(sd: SpectralDecomposition, reference: SpectralDecomposition) -> SpectralDecomposition:
    """Rotate each eigenvector pair's phase so ``r_i`` points along the reference's ``r_i``.

    The operator is unchanged; only the representative in the gauge orbit moves.
    """
    overlap = np.sum(reference.right.conj() * sd.right, axis=0)
    z = np.where(np.abs(overlap) > 0, overlap / np.maximum(np.abs(overlap), 1e-300), 1.0)
    return rescale(sd, z)


def initialize_dictionary(
    operators: Sequence[SpectralDecomposition], d: int, sgot: SgotConfig, dist: np.ndarray | None = None
):
    """K-medoids atoms under the divergence, gauge-aligned to the first atom."""
    if dist is None:
        dist = pairwise_distances(operators, sgot)
    medoids = kmedoids(dist, d)
    atoms = [operators[int(m)] for m in medoids]
    atoms = [atoms[0]] + [align_gauge(a, atoms[0]) for a in atoms[1:]]
    init_loss = float(dist[:, medoids].min(axis=1).mean())
    return atoms, medoids, init_loss


def batch_loss_and_atom_grads(atoms, targets, coeffs, sgot: SgotConfig):
    """Mean divergence over a batch and its Euclidean gradient for every atom (codes fixed)."""
    d = len(atoms)
    grads = [
        [np.zeros(atoms[0].r, complex), np.zeros_like(atoms[0].left), np.zeros_like(atoms[0].right)]
        for _ in range(d)
    ]
    total = 0.0
    b = len(targets)
    for target, coef in zip(targets, coeffs):
        alpha = coef.alpha
        recon = decode(alpha, atoms)
        mu = to_measure(target)
        plan, cost = solve_transport(to_measure(recon), mu, sgot)
        total += cost
        g = grad_sgot_fixed_plan(recon, mu, plan, sgot)
        for j, (gl, gL, gR) in enumerate(decode_vjp_atoms(alpha, atoms, g)):
            grads[j][0] += gl / b
            grads[j][1] += gL / b
            grads[j][2] += gR / b
    return total / b, [tuple(g) for g in grads]


def _update_atom(atom, egrad, lr, metric):
    rgrad = riemannian_gradient(atom, egrad, metric)
    v = rgrad.scaled(-1.0)
    step = min(lr, safe_step(atom, v))
    for _ in range(MAX_DICT_HALVINGS + 1):
        try:
            new = retract(atom, v, step)
            if new.biorth_error() <= 1e-8:
                return new
        except StepTooLarge:
            pass
        step *= 0.5
    log.warning("skipping atom update after %d halvings", MAX_DICT_HALVINGS)
    return atom


def train_dictionary(
    operators: Sequence[SpectralDecomposition],
    d: int,
    cfg: TrainConfig = TrainConfig(),
    sgot: SgotConfig = SgotConfig(),
    metric: MetricConfig = MetricConfig(),
    dist: np.ndarray | None = None,
) -> Dictionary:
    """Stochastic block-coordinate dictionary learning.

    Each batch: fit codes with the dictionary fixed, then take one Riemannian
    gradient step per atom with codes and transport plans fixed.
    """
    operators = list(operators)
    if len(operators) < d:
        raise InvalidInput(f"need at least {d} operators, got {len(operators)}")
    if len({(o.p, o.r) for o in operators}) != 1:
        raise InvalidInput("operators have mixed shapes")
    atoms, medoids, init_loss = initialize_dictionary(operators, d, sgot, dist)
    rng = np.random.default_rng(cfg.seed)
    n = len(operators)
    loss_curve, epoch_losses = [], []
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses, batch_sizes = [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = [operators[i] for i in idx]
            coeffs = fit_coefficients(batch, atoms, cfg, sgot)
            loss, grads = batch_loss_and_atom_grads(atoms, batch, coeffs, sgot)
            loss_curve.append(loss)
            batch_losses.append(loss)
            batch_sizes.append(len(idx))
            atoms = [_update_atom(a, g, cfg.dict_lr, metric) for a, g in zip(atoms, grads)]
        epoch_losses.append(float(np.average(batch_losses, weights=batch_sizes)))
        log.info("epoch %d mean loss %.6g", _epoch, epoch_losses[-1])
    return Dictionary(
        atoms=atoms,
        sgot=sgot,
        train=cfg,
        loss_curve=loss_curve,
        epoch_losses=epoch_losses,
        init_loss=init_loss,
        metadata={"medoids": [int(m) for m in medoids], "n_operators": n},
    )


def reconstruction_losses(operators, dictionary, cfg: TrainConfig = TrainConfig()):
    """Fitted codes and divergences of every operator to its reconstruction."""
    coeffs = fit_coefficients(operators, dictionary, cfg)
    return coeffs, np.array([c.loss for c in coeffs])


# --------------------------------------------------------------------------
# short-trajectory estimation


class TransitionStats:
    """Second moments of a feature series: ``C = X^T X / N``, ``C_xy = X^T Y / N``, ``tr(Y^T Y) / N``."""

    def __init__(self, samples: np.ndarray):
        z = np.asarray(samples, dtype=float)
        if z.ndim != 2 or z.shape[0] < 2:
            raise InvalidInput("need at least two feature rows")
        x, y = z[:-1], z[1:]
        n = x.shape[0]
        self.n = n
        self.cxx = x.T @ x / n
        self.cxy = x.T @ y / n
        self.yy = float(np.sum(y * y) / n)


def one_step_loss(sd: SpectralDecomposition, stats: TransitionStats, with_grad: bool = False):
    """Mean of ``|z_{t+1} - G^* z_t|^2`` for ``G = R diag(Lambda) L^*``.

    Works with the low-rank factors only; the gradient is w.r.t. ``(Lambda, L, R)``.
    """
    lam, L, R = sd.eigvals, sd.left, sd.right
    c, cxy = stats.cxx, stats.cxy
    cr = c @ R
    rcr = R.conj().T @ cr
    ll = L.conj().T @ L
    cross = np.trace((lam[:, None] * L.conj().T) @ (cxy.T @ R)).real
    quad = np.trace((lam.conj()[:, None] * rcr) @ (lam[:, None] * ll)).real
    loss = stats.yy - 2.0 * cross + quad
    if not with_grad:
        return float(loss)
    cxy_l = cxy @ L
    cxyt_r = cxy.T @ R
    # gradient of the loss w.r.t. G is 2 (C G - C_xy)
    g_r = 2.0 * (cr @ ((lam[:, None] * ll) * lam.conj()[None, :]) - cxy_l * lam.conj()[None, :])
    g_l = 2.0 * (L @ (lam.conj()[:, None] * rcr) - cxyt_r) * lam[None, :]
    g_lam = 2.0 * (np.sum((rcr @ (lam[:, None] * ll)).T * np.eye(len(lam)), axis=0)
                   - np.einsum("ki,ki->i", R.conj(), cxy_l))
    return float(loss), (g_lam, g_l, g_r)


class _ShortProblem:
    """One-step loss of decoded operators on a fixed window, as a function of logits.

    The right factor and the raw left factor are linear in the code, so the
    ``p x p`` products with the window's moments are formed once per atom.
    """

    def __init__(self, atoms, stats: TransitionStats):
        st = _stacked(atoms)
        self.stack = st
        self.yy = stats.yy
        d, p, r = st.lefts.shape
        blocks = [
            st.lefts, st.rights,
            stats.cxx @ st.rights, stats.cxy @ st.lefts, stats.cxy @ st.rights, stats.cxy.T @ st.rights,
        ]
        self.shape = (p, r)
        self.packed = np.concatenate([st.lams] + [b.reshape(d, p * r) for b in blocks], axis=1)

    def __call__(self, logits):
        alpha = softmax(logits)
        p, r = self.shape
        agg = alpha @ self.packed
        lam = agg[:r]
        l_raw, R, cr, cxy_l, cxy_r, cxyt_r = (
            agg[r + k * p * r: r + (k + 1) * p * r].reshape(p, r) for k in range(6)
        )
        state = _DecodeState(alpha, self.stack, (lam, l_raw, R))
        L, K = state.left, state.k
        cxy_l = cxy_l + cxy_r @ K
        rcr = R.conj().T @ cr
        ll = L.conj().T @ L
        lam_c = lam.conj()
        cross = np.trace((lam[:, None] * L.conj().T) @ cxyt_r).real
        dll = lam[:, None] * ll
        quad = np.trace((lam_c[:, None] * rcr) @ dll).real
        loss = self.yy - 2.0 * cross + quad
        g_r = 2.0 * (cr @ (dll * lam_c[None, :]) - cxy_l * lam_c[None, :])
        g_l = 2.0 * (L @ (lam_c[:, None] * rcr) - cxyt_r) * lam[None, :]
        g_lam = 2.0 * (np.diagonal(rcr @ dll) - np.einsum("ki,ki->i", R.conj(), cxy_l))
        g_alpha = state.alpha_grad((g_lam, g_l, g_r))
        return float(loss), _softmax_pullback(alpha, g_alpha)


def short_loss_and_grad(logits, atoms, stats: TransitionStats):
    """One-step loss at ``decode(softmax(logits))`` and its logit gradient."""
    return _ShortProblem(atoms, stats)(logits)


def _minimize_lbfgs(fun, x0: np.ndarray, iters: int, gtol: float, fallback_lr: float):
    """L-BFGS on logits; falls back to step-halving Adam if the decoder breaks down."""
    f0, _ = fun(x0)
    try:
        res = scipy.optimize.minimize(
            fun, x0, jac=True, method="L-BFGS-B",
            # scipy tests the max norm; this bound implies a 2-norm below gtol
            options={"maxiter": iters, "gtol": gtol / np.sqrt(len(x0)), "ftol": 0.0},
        )
    except InfeasibleAggregate:
        log.info("decoder infeasible inside the line search; retrying with Adam")
        return _minimize_logits(fun, x0, fallback_lr, iters, gtol=gtol)
    if not res.fun <= f0:
        return np.array(x0, dtype=float), f0, f0
    return np.asarray(res.x, dtype=float), float(res.fun), f0


def estimate_short_trajectory(features, dictionary, cfg: TrainConfig = TrainConfig(), gtol: float = 1e-6):
    """Fit a simplex code to a (short) feature series by one-step prediction error.

    Starts at uniform weights and runs L-BFGS on the logits until the
    gradient norm falls below ``gtol`` or after ``cfg.est_iters`` iterations.
    Returns the code and its decoded operator.
    """
    samples = getattr(features, "samples", features)
    atoms = _atoms(dictionary)
    if np.asarray(samples).shape[1] != atoms[0].p:
        raise InvalidInput("feature dimension does not match the dictionary")
    problem = _ShortProblem(atoms, TransitionStats(samples))
    x0 = np.zeros(len(atoms))
    x, f, f0 = _minimize_lbfgs(problem, x0, cfg.est_iters, gtol, cfg.est_lr)
    coef = Coefficients(x, loss=f, initial_loss=f0)
    return coef, decode(coef, atoms)


def rolling_coefficients(features, dictionary, window: int, stride: int = 1, cfg: TrainConfig = TrainConfig()):
    """Codes estimated on sliding windows of ``window`` feature rows.

    Returns a list of ``(start_row, Coefficients)``.
    """
    if window < 2 or stride < 1:
        raise InvalidInput("window must be >= 2 and stride >= 1")
    samples = np.asarray(getattr(features, "samples", features))
    out = []
    for start in range(0, samples.shape[0] - window + 1, stride):
        coef, _ = estimate_short_trajectory(samples[start:start + window], dictionary, cfg)
        out.append((start, coef))
    return out


def simplex_lstsq(q: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact minimizer of ``a^T Q a - 2 b^T a`` over the probability simplex.

    Enumerates supports (fine for the handful of atoms used here).
    """
    d = len(b)
    best, best_val = None, np.inf
    for size in range(1, d + 1):
        for support in itertools.combinations(range(d), size):
            s = list(support)
            k = len(s)
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = 2.0 * q[np.ix_(s, s)]
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            rhs = np.concatenate([2.0 * b[s], [1.0]])
            sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            a_s = sol[:k]
            if np.any(a_s < -1e-12):
                continue
            a = np.zeros(d)
            a[s] = np.maximum(a_s, 0.0)
            a /= a.sum()
            val = a @ q @ a - 2.0 * b @ a
            if best is None or val < best_val - 1e-15 * max(1.0, abs(best_val)):
                best, best_val = a, val
    return best

