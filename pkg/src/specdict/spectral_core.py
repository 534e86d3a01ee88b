"""Spectral decompositions of low-rank operators.

A rank-``r`` non-defective operator on ``C^p`` is stored as eigenvalues
``Lambda`` and bi-orthogonal left/right eigenvector matrices ``L, R`` with
``L^* R = I``, so that ``G = R diag(Lambda) L^*``.
"""

from __future__ import annotations

import functools
import json
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConvergenceError, DegenerateSpectrum, InvalidShape, RankDeficient

BIORTH_TOL = 1e-8
SEPARATION_TOL = 1e-12
GAP_TOL = 1e-10


def _as_cmatrix(a, name):
    arr = np.array(a, dtype=np.complex128)
    if arr.ndim != 2:
        raise InvalidShape(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidShape(f"{name} has non-finite entries")
    return arr


def _min_gap(lam: np.ndarray) -> float:
    gaps = np.abs(lam[:, None] - lam[None, :])
    np.fill_diagonal(gaps, np.inf)
    return float(gaps.min())


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Eigen-triplets ``(Lambda, L, R)`` of a rank-``r`` operator.

    Construction only checks shapes and finiteness; :meth:`validate` checks
    the full invariants (bi-orthogonality, simple spectrum, column scaling).
    """

    eigvals: np.ndarray
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        eigvals = np.array(self.eigvals, dtype=np.complex128).reshape(-1)
        left = _as_cmatrix(self.left, "left")
        right = _as_cmatrix(self.right, "right")
        if left.shape != right.shape or left.shape[1] != eigvals.shape[0]:
            raise InvalidShape(
                f"inconsistent shapes: eigvals {eigvals.shape}, left {left.shape}, right {right.shape}"
            )
        if not np.all(np.isfinite(eigvals)):
            raise InvalidShape("eigvals has non-finite entries")
        for arr in (eigvals, left, right):
            arr.setflags(write=False)
        object.__setattr__(self, "eigvals", eigvals)
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def p(self) -> int:
        return self.left.shape[0]

    @property
    def r(self) -> int:
        return self.left.shape[1]

    def biorth_error(self) -> float:
        return float(np.linalg.norm(self.left.conj().T @ self.right - np.eye(self.r)))

    def validate(self, tol: float = BIORTH_TOL) -> None:
        """Raise if any invariant of the type is violated."""
        err = self.biorth_error()
        if err > tol:
            raise InvalidShape(f"bi-orthogonality violated: ||L*R - I|| = {err:.3e}")
        lam = self.eigvals
        if self.r > 1:
            if _min_gap(lam) <= SEPARATION_TOL:
                raise DegenerateSpectrum("eigenvalues are not pairwise distinct")
        for mat in (self.left, self.right):
            norms = np.linalg.norm(mat, axis=0)
            if np.any(norms < 1e-12) or np.any(norms > 1e12):
                raise InvalidShape("degenerate eigenvector scaling")

    def replace(self, eigvals=None, left=None, right=None) -> "SpectralDecomposition":
        return SpectralDecomposition(
            self.eigvals if eigvals is None else eigvals,
            self.left if left is None else left,
            self.right if right is None else right,
        )

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "r": self.r,
            "eigvals": _cvec_to_list(self.eigvals),
            "left": _cmat_to_list(self.left),
            "right": _cmat_to_list(self.right),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SpectralDecomposition":
        p, r = int(data["p"]), int(data["r"])
        eigvals = _list_to_cvec(data["eigvals"])
        left = _list_to_cmat(data["left"], p, r)
        right = _list_to_cmat(data["right"], p, r)
        return cls(eigvals, left, right)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "SpectralDecomposition":
        return cls.from_dict(json.loads(text))


def _cvec_to_list(v):
    return [[float(z.real), float(z.imag)] for z in v]


def _cmat_to_list(m):
    return [_cvec_to_list(row) for row in m]


def _list_to_cvec(items):
    return np.array([complex(re, im) for re, im in items], dtype=np.complex128)


def _list_to_cmat(rows, p, r):
    m = np.array([[complex(re, im) for re, im in row] for row in rows], dtype=np.complex128)
    if m.size == 0:
        m = m.reshape(p, r)
    if m.shape != (p, r):
        raise InvalidShape(f"expected a {p}x{r} matrix, got {m.shape}")
    return m


@dataclass(frozen=True, eq=False)
class OperatorMatrix:
    """A dense ``p x p`` operator together with the rank it is meant to have."""

    matrix: np.ndarray
    rank_hint: int

    def __post_init__(self):
        m = _as_cmatrix(self.matrix, "matrix")
        if m.shape[0] != m.shape[1]:
            raise InvalidShape(f"operator must be square, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    def numerical_rank_ok(self, tol: float = 1e-8) -> bool:
        s = np.linalg.svd(self.matrix, compute_uv=False)
        if s.size <= self.rank_hint or s[0] == 0.0:
            return True
        return bool(s[self.rank_hint] <= tol * s[0])


def assemble_operator(sd: SpectralDecomposition) -> OperatorMatrix:
    """``R diag(Lambda) L^*`` as a dense matrix."""
    matrix = (sd.right * sd.eigvals[None, :]) @ sd.left.conj().T
    return OperatorMatrix(matrix, sd.r)


def eig_small(core: np.ndarray):
    """Eigenvalues and unit-norm right eigenvectors of a small dense matrix.

    Runs the in-repo QR algorithm (compiled when available).
    """
    eigvals, vecs, status = _backend.schur_eig(np.ascontiguousarray(core, dtype=np.complex128))
    if status != 0:
        raise ConvergenceError("QR iteration did not converge")
    return eigvals, vecs


def spectral_decompose(op: OperatorMatrix | np.ndarray, r: int) -> SpectralDecomposition:
    """Leading rank-``r`` spectral decomposition of an operator.

    Factor ``op ~ A B^*`` with a truncated SVD, diagonalize the ``r x r``
    core ``B^* A`` and lift its eigenvectors back to ``C^p``.  The result is
    gauge-normalized and canonically sorted.
    """
    matrix = op.matrix if isinstance(op, OperatorMatrix) else _as_cmatrix(op, "op")
    p = matrix.shape[0]
    if matrix.shape != (p, p):
        raise InvalidShape(f"operator must be square, got {matrix.shape}")
    if not 1 <= r <= p:
        raise InvalidShape(f"rank {r} out of range for p={p}")
    u, s, vh = np.linalg.svd(matrix)
    if s[0] == 0.0:
        raise RankDeficient("zero operator has no spectral decomposition")
    if s[r - 1] <= 1e-14 * s[0]:
        raise RankDeficient(f"operator has numerical rank below {r}")
    a = u[:, :r] * s[:r]
    b = vh[:r].conj().T
    core = b.conj().T @ a
    eigvals, w = eig_small(core)
    if np.any(np.abs(eigvals) <= 1e-14 * s[0]):
        raise DegenerateSpectrum("zero eigenvalue inside the rank-r part (defective operator)")
    if r > 1:
        gap = _min_gap(eigvals)
        if gap < GAP_TOL * max(1.0, np.abs(eigvals).max()):
            raise DegenerateSpectrum(f"eigenvalue gap {gap:.2e} below {GAP_TOL}")
    try:
        y = np.linalg.inv(w).conj().T  # left eigenvectors of the core, y_i^* w_j = delta_ij
    except np.linalg.LinAlgError as exc:
        raise DegenerateSpectrum("core eigenvectors are linearly dependent") from exc
    if np.linalg.cond(w) > 1e10:
        raise DegenerateSpectrum("core is numerically defective")
    right = a @ w
    # l_i^* r_i = lambda_i y_i^* w_i = lambda_i, so divide by conj(lambda_i)
    left = (b @ y) / eigvals.conj()[None, :]
    sd = SpectralDecomposition(eigvals, left, right)
    return canonical_sort(normalize_gauge(sd))


def _order_cmp(a: complex, b: complex, tol: float) -> int:
    if abs(abs(a) - abs(b)) > tol:
        return -1 if abs(a) > abs(b) else 1
    if abs(a.real - b.real) > tol:
        return -1 if a.real > b.real else 1
    if a.imag != b.imag:
        return -1 if a.imag < b.imag else 1
    return 0


def canonical_order(eigvals: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Permutation sorting by descending modulus, descending real part, ascending imaginary part."""
    scale = max(1.0, float(np.abs(eigvals).max())) if len(eigvals) else 1.0
    items = [complex(z) for z in eigvals]
    key = functools.cmp_to_key(lambda i, j: _order_cmp(items[i], items[j], tol * scale))
    return np.array(sorted(range(len(items)), key=key), dtype=int)


def canonical_sort(sd: SpectralDecomposition) -> SpectralDecomposition:
    perm = canonical_order(sd.eigvals)
    if np.array_equal(perm, np.arange(sd.r)):
        return sd
    return SpectralDecomposition(sd.eigvals[perm], sd.left[:, perm], sd.right[:, perm])


def rescale(sd: SpectralDecomposition, z: np.ndarray) -> SpectralDecomposition:
    """Gauge action: ``l_i <- conj(z_i) l_i``, ``r_i <- r_i / z_i``."""
    z = np.asarray(z, dtype=np.complex128)
    return SpectralDecomposition(sd.eigvals, sd.left * z.conj()[None, :], sd.right / z[None, :])


def normalize_gauge(sd: SpectralDecomposition) -> SpectralDecomposition:
    """Unit-norm right eigenvectors whose first non-negligible entry is real positive."""
    norms = np.linalg.norm(sd.right, axis=0)
    z = np.empty(sd.r, dtype=np.complex128)
    for i in range(sd.r):
        col = sd.right[:, i]
        idx = int(np.argmax(np.abs(col) > 1e-8 * norms[i]))
        phase = col[idx] / abs(col[idx])
        z[i] = norms[i] * phase
    return rescale(sd, z)
