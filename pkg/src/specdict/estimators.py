"""From trajectories to operators: random Fourier features, reduced-rank
regression, and the two comparison baselines.

Operators act on feature vectors by their adjoint, ``z_{t+1} ~ G^* z_t``, so
for real features a fitted matrix ``G`` predicts row vectors as ``z_{t+1}^T ~ z_t^T G``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.spatial.distance

from .dictionary import Coefficients, Dictionary, decode, kmedoids, simplex_lstsq, TransitionStats
from .errors import InsufficientData, InvalidInput, InvalidShape, TrajectoryTooShort
from .spectral_core import OperatorMatrix, SpectralDecomposition, spectral_decompose

FEATURE_NORM_BOUND = math.sqrt(2.0)


@dataclass(frozen=True, eq=False)
class RffMap:
    """Random Fourier features for the Gaussian kernel ``exp(-|x - y|^2 / (2 gamma^2))``.

    Frequencies and phases are regenerated from ``seed``, so the JSON form
    only stores the parameters.
    """

    input_dim: int
    num_features: int
    bandwidth: float
    seed: int = 0
    frequencies: np.ndarray = field(init=False, repr=False)
    phases: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.input_dim < 1 or self.num_features < 1:
            raise InvalidInput("input_dim and num_features must be positive")
        if not self.bandwidth > 0:
            raise InvalidInput("bandwidth must be positive")
        rng = np.random.default_rng(self.seed)
        omega = rng.normal(0.0, 1.0 / self.bandwidth, size=(self.num_features, self.input_dim))
        b = rng.uniform(0.0, 2.0 * np.pi, size=self.num_features)
        omega.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "frequencies", omega)
        object.__setattr__(self, "phases", b)

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "num_features": self.num_features,
            "bandwidth": float(self.bandwidth),
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RffMap":
        return cls(int(d["input_dim"]), int(d["num_features"]), float(d["bandwidth"]), int(d["seed"]))

    @classmethod
    def from_json(cls, text: str) -> "RffMap":
        return cls.from_dict(json.loads(text))


def _embed_rows(rff: RffMap, x: np.ndarray) -> np.ndarray:
    return math.sqrt(2.0 / rff.num_features) * np.cos(x @ rff.frequencies.T + rff.phases)


def rff_embed(rff: RffMap, window) -> np.ndarray:
    """Feature vector of one input window; its norm never exceeds ``sqrt(2)``."""
    x = np.asarray(window, dtype=float)
    if x.shape != (rff.input_dim,):
        raise InvalidShape(f"expected a window of length {rff.input_dim}, got shape {x.shape}")
    return _embed_rows(rff, x[None, :])[0]


@dataclass(frozen=True, eq=False)
class FeatureSeries:
    samples: np.ndarray
    dt: float = 0.01

    def __post_init__(self):
        z = np.asarray(self.samples, dtype=float)
        if z.ndim != 2:
            raise InvalidShape(f"samples must be a T x p matrix, got shape {z.shape}")
        if z.size and np.linalg.norm(z, axis=1).max() > FEATURE_NORM_BOUND + 1e-9:
            raise InvalidInput("feature rows exceed the sqrt(2) bound")
        object.__setattr__(self, "samples", z)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def p(self) -> int:
        return self.samples.shape[1]

    def head(self, n: int) -> "FeatureSeries":
        return FeatureSeries(self.samples[:n], self.dt)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"z_{k + 1}" for k in range(self.p)])
        for t, row in enumerate(self.samples):
            w.writerow([t] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, dt: float = 0.01) -> "FeatureSeries":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(data.reshape(len(rows) - 1, len(rows[0]) - 1), dt)


def featurize_trajectory(traj, rff: RffMap, window: int | None = None, dt: float = 0.01) -> FeatureSeries:
    """Embed every length-``window`` run of consecutive samples; row ``t`` covers ``[t, t + window)``."""
    x = np.asarray(getattr(traj, "x", traj), dtype=float).reshape(-1)
    window = rff.input_dim if window is None else window
    if window != rff.input_dim:
        raise InvalidShape(f"window {window} does not match the feature map input {rff.input_dim}")
    if x.shape[0] < window:
        raise TrajectoryTooShort(f"need at least {window} samples, got {x.shape[0]}")
    windows = np.lib.stride_tricks.sliding_window_view(x, window)
    return FeatureSeries(_embed_rows(rff, windows), dt)


def median_bandwidth(trajectories, window: int, n_sub: int = 1000, seed: int = 0) -> float:
    """Median pairwise distance between up to ``n_sub`` randomly chosen windows."""
    pool = []
    for traj in trajectories:
        x = np.asarray(getattr(traj, "x", traj), dtype=float).reshape(-1)
        if x.shape[0] >= window:
            pool.append(np.lib.stride_tricks.sliding_window_view(x, window))
    if not pool:
        raise TrajectoryTooShort(f"no trajectory has {window} samples")
    allw = np.concatenate(pool)
    rng = np.random.default_rng(seed)
    idx = rng.choice(allw.shape[0], size=min(n_sub, allw.shape[0]), replace=False)
    idx.sort()
    med = float(np.median(scipy.spatial.distance.pdist(allw[idx])))
    if not med > 0:
        raise InvalidInput("degenerate trajectories: median window distance is zero")
    return med


# --------------------------------------------------------------------------
# reduced-rank regression


@dataclass(frozen=True)
class RrrConfig:
    rank: int = 3
    tikhonov: float = 1e-6
    window: int = 50

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if not self.tikhonov > 0:
            raise ValueError("tikhonov must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _inv_sqrt_psd(c: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(c)
    return (vecs / np.sqrt(vals)) @ vecs.T


def rrr_fit(x: np.ndarray, y: np.ndarray, rank: int, tikhonov: float) -> np.ndarray:
    """Rank-constrained ridge regression ``y ~ x G`` on paired rows.

    ``G = (C + gamma I)^{-1/2} [(C + gamma I)^{-1/2} C_xy]_r`` with
    ``[.]_r`` the best rank-``r`` approximation.
    """
    n, p = x.shape
    c = x.T @ x / n + tikhonov * np.eye(p)
    cxy = x.T @ y / n
    w = _inv_sqrt_psd(c)
    u, s, vt = np.linalg.svd(w @ cxy)
    k = min(rank, len(s))
    return w @ ((u[:, :k] * s[:k]) @ vt[:k])


def rrr_estimate(features, cfg: RrrConfig = RrrConfig()) -> OperatorMatrix:
    """Transfer operator estimate from consecutive feature rows."""
    z = np.asarray(getattr(features, "samples", features), dtype=float)
    if z.ndim != 2 or z.shape[0] < 2:
        raise InsufficientData("need at least two feature rows")
    return OperatorMatrix(rrr_fit(z[:-1], z[1:], cfg.rank, cfg.tikhonov), cfg.rank)


def estimate_operator(features, cfg: RrrConfig = RrrConfig()) -> SpectralDecomposition:
    """RRR followed by the canonical rank-``r`` spectral decomposition."""
    return spectral_decompose(rrr_estimate(features, cfg), cfg.rank)


# --------------------------------------------------------------------------
# baselines


@dataclass(eq=False)
class LinearDictionary:
    atoms: np.ndarray          # d x p x p
    codes: np.ndarray          # n x d
    errors: list               # mean squared Frobenius error per iteration


def _fit_codes(vecs: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    gram = (atoms.conj() @ atoms.T).real
    return np.array([simplex_lstsq(gram, (atoms.conj() @ v).real) for v in vecs])


def _recon_error(vecs, codes, atoms) -> float:
    return float(np.mean(np.sum(np.abs(vecs - codes @ atoms) ** 2, axis=1)))


def linear_dl_baseline(operators, d: int, seed: int = 0, iters: int = 50, tol: float = 1e-12) -> LinearDictionary:
    """Dictionary learning on vectorized operator matrices with simplex codes.

    Alternates exact simplex-constrained code fits and least-squares atom
    updates, starting from Frobenius k-medoids.  Both steps are exact
    minimizations, so the error sequence is non-increasing.  ``seed`` is
    accepted for interface symmetry; the procedure itself is deterministic.
    """
    mats = [np.asarray(getattr(o, "matrix", o)) for o in operators]
    n = len(mats)
    if n < d:
        raise InvalidInput(f"need at least {d} operators, got {n}")
    p = mats[0].shape[0]
    vecs = np.array([m.reshape(-1) for m in mats])
    if not np.iscomplexobj(vecs) or np.all(vecs.imag == 0):
        vecs = vecs.real
    dist = scipy.spatial.distance.cdist(
        np.concatenate([vecs.real, vecs.imag], axis=1), np.concatenate([vecs.real, vecs.imag], axis=1)
    )
    atoms = vecs[kmedoids(dist, d)].copy()
    codes = _fit_codes(vecs, atoms)
    errors = [_recon_error(vecs, codes, atoms)]
    for _ in range(iters):
        atoms = np.linalg.lstsq(codes, vecs, rcond=None)[0]
        codes = _fit_codes(vecs, atoms)
        errors.append(_recon_error(vecs, codes, atoms))
        if errors[-2] - errors[-1] <= tol * max(errors[-2], 1e-300):
            break
    return LinearDictionary(atoms.reshape(d, p, p), codes, errors)


def linear_dl_estimate(features, ldict: LinearDictionary, rank: int):
    """Simplex code minimizing the one-step prediction error of ``sum_j a_j D_j``."""
    z = np.asarray(getattr(features, "samples", features), dtype=float)
    stats = TransitionStats(z)
    atoms = ldict.atoms
    catoms = np.einsum("ik,jkl->jil", stats.cxx, atoms)
    q = np.einsum("ikl,jkl->ij", atoms.conj(), catoms).real
    b = np.einsum("kl,jkl->j", stats.cxy, atoms.conj()).real
    alpha = simplex_lstsq(q, b)
    g = np.tensordot(alpha, atoms, axes=1)
    return alpha, spectral_decompose(g, rank)


def mean_reconstruction_baseline(dictionary: Dictionary, train_coeffs) -> SpectralDecomposition:
    """Decode of the average training code: one fixed predictor for every input."""
    if len(train_coeffs) == 0:
        raise InvalidInput("need at least one training code")
    mean = np.mean([c.alpha if isinstance(c, Coefficients) else np.asarray(c) for c in train_coeffs], axis=0)
    return decode(mean / mean.sum(), dictionary)
