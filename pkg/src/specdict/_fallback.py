"""Pure-Python versions of the hot kernels.

Selected automatically when the compiled ``_kernels`` extension is missing
(or when ``SPECDICT_PURE_PYTHON=1``).  Both implementations follow the same
arithmetic so results agree to rounding.
"""

import cmath
import math

import numpy as np

EPS = 2.220446049250313e-16


def _hessenberg(h, q):
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k].copy()
        xnorm = np.sqrt(np.sum(np.abs(x) ** 2))
        if xnorm == 0.0:
            continue
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v = x
        v[0] += phase * xnorm
        v /= np.sqrt(np.sum(np.abs(v) ** 2))
        h[k + 1:, :] -= 2.0 * np.outer(v, v.conj() @ h[k + 1:, :])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v.conj())
        q[:, k + 1:] -= 2.0 * np.outer(q[:, k + 1:] @ v, v.conj())
        h[k + 2:, k] = 0.0


def _wilkinson(a, b, c, d):
    half = 0.5 * (a - d)
    disc = cmath.sqrt(half * half + b * c)
    mu1 = 0.5 * (a + d) + disc
    mu2 = 0.5 * (a + d) - disc
    return mu1 if abs(mu1 - d) <= abs(mu2 - d) else mu2


def schur_eig(a, max_iter_per_eig=60):
    """Eigen-decompose a small dense complex matrix.

    Householder reduction to Hessenberg form, single-shift QR with Wilkinson
    shifts and deflation, then back-substitution on the triangular Schur
    factor.

    Returns
    -------
    eigvals : ndarray, shape (n,)
    vectors : ndarray, shape (n, n)
        Unit-norm right eigenvectors as columns.
    status : int
        0 on success, -1 when the iteration cap was reached.
    """
    h = np.array(a, dtype=np.complex128, copy=True)
    n = h.shape[0]
    q = np.eye(n, dtype=np.complex128)
    if n == 0:
        return np.zeros(0, complex), q, 0
    _hessenberg(h, q)
    anorm = np.abs(h).sum()
    if anorm == 0.0:
        anorm = 1.0  # zero matrix: any positive scale works
    hi = n - 1
    it = 0
    while hi > 0:
        lo = hi
        while lo > 0:
            s = abs(h[lo - 1, lo - 1]) + abs(h[lo, lo])
            if s == 0.0:
                s = anorm
            if abs(h[lo, lo - 1]) <= EPS * s:
                h[lo, lo - 1] = 0.0
                break
            lo -= 1
        if lo == hi:
            hi -= 1
            it = 0
            continue
        it += 1
        if it > max_iter_per_eig:
            return np.diag(h).copy(), q, -1
        if it % 11 == 0:
            mu = h[hi, hi] + 0.75 * abs(h[hi, hi - 1])
        else:
            mu = _wilkinson(h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi])
        for k in range(lo, hi + 1):
            h[k, k] -= mu
        rots = []
        for k in range(lo, hi):
            x = h[k, k]
            y = h[k + 1, k]
            rr = math.hypot(abs(x), abs(y))
            if rr == 0.0:
                c, s = 1.0 + 0j, 0j
            else:
                c, s = x / rr, y / rr
            rots.append((c, s))
            row_k = h[k, k:].copy()
            row_k1 = h[k + 1, k:].copy()
            h[k, k:] = c.conjugate() * row_k + s.conjugate() * row_k1
            h[k + 1, k:] = -s * row_k + c * row_k1
        for k in range(lo, hi):
            c, s = rots[k - lo]
            top = min(k + 2, hi) + 1
            col_k = h[:top, k].copy()
            col_k1 = h[:top, k + 1].copy()
            h[:top, k] = c * col_k + s * col_k1
            h[:top, k + 1] = -s.conjugate() * col_k + c.conjugate() * col_k1
            qk = q[:, k].copy()
            qk1 = q[:, k + 1].copy()
            q[:, k] = c * qk + s * qk1
            q[:, k + 1] = -s.conjugate() * qk + c.conjugate() * qk1
        for k in range(lo, hi + 1):
            h[k, k] += mu

    eigvals = np.diag(h).copy()
    small = EPS * anorm
    x = np.zeros((n, n), dtype=np.complex128)
    for k in range(n):
        x[k, k] = 1.0
        for j in range(k - 1, -1, -1):
            acc = 0j
            for m in range(j + 1, k + 1):
                acc += h[j, m] * x[m, k]
            den = h[j, j] - h[k, k]
            if abs(den) < small:
                den = small
            x[j, k] = -acc / den
    vecs = q @ x
    vecs /= np.sqrt(np.sum(np.abs(vecs) ** 2, axis=0))
    return eigvals, vecs, 0


def em_integrate(x0, increments, w, dt, max_abs=1e3, max_halvings=20):
    """Euler-Maruyama for dX = -U_w'(X) dt + dW on the two-well potential.

    ``increments`` already holds the scaled noise ``sqrt(2 sigma dt) * xi``.
    A step that would leave ``[-max_abs, max_abs]`` is redone as ``2**k``
    substeps sharing the same total increment.

    Returns
    -------
    x : ndarray, shape (len(increments) + 1,)
    n_events : int
        Number of rejected (halved) steps.
    failed_at : int
        Index of the step that diverged, or -1.
    """
    n = len(increments) + 1
    out = np.empty(n)
    w4 = w * w * w * w
    w2 = w * w
    x = float(x0)
    out[0] = x
    events = 0
    for k in range(n - 1):
        inc = float(increments[k])
        xn = x - 4.0 * x * (x * x - w2) / w4 * dt + inc
        if math.isfinite(xn) and abs(xn) <= max_abs:
            x = xn
            out[k + 1] = x
            continue
        events += 1
        ok = False
        for level in range(1, max_halvings + 1):
            m = 1 << level
            h = dt / m
            sub = inc / m
            y = x
            ok = True
            for _ in range(m):
                y = y - 4.0 * y * (y * y - w2) / w4 * h + sub
                if not (math.isfinite(y) and abs(y) <= max_abs):
                    ok = False
                    break
            if ok:
                x = y
                break
        if not ok:
            return out[: k + 1], events, k
        out[k + 1] = x
    return out, events, -1
