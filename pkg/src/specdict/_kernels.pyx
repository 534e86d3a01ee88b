# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels (see ``_fallback.py`` for the reference)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot, isfinite

cnp.import_array()

cdef double EPS = 2.220446049250313e-16


cdef inline double cabs2(double complex z) nogil:
    return z.real * z.real + z.imag * z.imag


cdef inline double cabs(double complex z) nogil:
    return hypot(z.real, z.imag)


cdef inline double complex conj(double complex z) nogil:
    return z.real - 1j * z.imag


cdef inline double complex csqrt(double complex z) nogil:
    cdef double r = cabs(z)
    cdef double re, im
    if r == 0.0:
        return 0.0
    re = sqrt(0.5 * (r + z.real))
    im = sqrt(0.5 * (r - z.real))
    if z.imag < 0.0:
        im = -im
    return re + 1j * im


cdef void _hessenberg(double complex[:, ::1] h, double complex[:, ::1] q,
                      double complex[::1] v) nogil:
    cdef Py_ssize_t n = h.shape[0]
    cdef Py_ssize_t k, i, j
    cdef double xnorm, vnorm
    cdef double complex phase, acc
    for k in range(n - 2):
        xnorm = 0.0
        for i in range(k + 1, n):
            xnorm += cabs2(h[i, k])
        xnorm = sqrt(xnorm)
        if xnorm == 0.0:
            continue
        for i in range(k + 1, n):
            v[i] = h[i, k]
        if cabs(v[k + 1]) != 0.0:
            phase = v[k + 1] / cabs(v[k + 1])
        else:
            phase = 1.0
        v[k + 1] = v[k + 1] + phase * xnorm
        vnorm = 0.0
        for i in range(k + 1, n):
            vnorm += cabs2(v[i])
        vnorm = sqrt(vnorm)
        for i in range(k + 1, n):
            v[i] = v[i] / vnorm
        # left: rows k+1.. of h
        for j in range(n):
            acc = 0.0
            for i in range(k + 1, n):
                acc = acc + conj(v[i]) * h[i, j]
            for i in range(k + 1, n):
                h[i, j] = h[i, j] - 2.0 * v[i] * acc
        # right: columns k+1.. of h and q
        for i in range(n):
            acc = 0.0
            for j in range(k + 1, n):
                acc = acc + h[i, j] * v[j]
            for j in range(k + 1, n):
                h[i, j] = h[i, j] - 2.0 * acc * conj(v[j])
            acc = 0.0
            for j in range(k + 1, n):
                acc = acc + q[i, j] * v[j]
            for j in range(k + 1, n):
                q[i, j] = q[i, j] - 2.0 * acc * conj(v[j])
        for i in range(k + 2, n):
            h[i, k] = 0.0


cdef double complex _wilkinson(double complex a, double complex b,
                               double complex c, double complex d) nogil:
    cdef double complex half = 0.5 * (a - d)
    cdef double complex disc = csqrt(half * half + b * c)
    cdef double complex mu1 = 0.5 * (a + d) + disc
    cdef double complex mu2 = 0.5 * (a + d) - disc
    if cabs(mu1 - d) <= cabs(mu2 - d):
        return mu1
    return mu2


def schur_eig(a, int max_iter_per_eig=60):
    """Compiled twin of :func:`specdict._fallback.schur_eig`."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] harr = np.array(a, dtype=np.complex128, order="C", copy=True)
    cdef Py_ssize_t n = harr.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] qarr = np.eye(n, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=2] xarr = np.zeros((n, n), dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] varr = np.zeros(n, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] cs = np.zeros(max(n, 1), dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] ss = np.zeros(max(n, 1), dtype=np.complex128)
    cdef double complex[:, ::1] h = harr
    cdef double complex[:, ::1] q = qarr
    cdef double complex[:, ::1] x = xarr
    cdef double complex[::1] v = varr
    cdef double complex[::1] cv = cs
    cdef double complex[::1] sv = ss
    cdef Py_ssize_t hi, lo, k, j, m, top, i
    cdef int it = 0
    cdef int status = 0
    cdef double anorm = 0.0, s, rr, small
    cdef double complex mu, xx, yy, c, sn, t0, t1, acc, den
    if n == 0:
        return np.zeros(0, np.complex128), qarr, 0
    with nogil:
        _hessenberg(h, q, v)
        for i in range(n):
            for j in range(n):
                anorm += cabs(h[i, j])
        if anorm == 0.0:
            anorm = 1.0  # zero matrix: any positive scale works
        hi = n - 1
        while hi > 0:
            lo = hi
            while lo > 0:
                s = cabs(h[lo - 1, lo - 1]) + cabs(h[lo, lo])
                if s == 0.0:
                    s = anorm
                if cabs(h[lo, lo - 1]) <= EPS * s:
                    h[lo, lo - 1] = 0.0
                    break
                lo -= 1
            if lo == hi:
                hi -= 1
                it = 0
                continue
            it += 1
            if it > max_iter_per_eig:
                status = -1
                break
            if it % 11 == 0:
                mu = h[hi, hi] + 0.75 * cabs(h[hi, hi - 1])
            else:
                mu = _wilkinson(h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi])
            for k in range(lo, hi + 1):
                h[k, k] = h[k, k] - mu
            for k in range(lo, hi):
                xx = h[k, k]
                yy = h[k + 1, k]
                rr = hypot(cabs(xx), cabs(yy))
                if rr == 0.0:
                    c = 1.0
                    sn = 0.0
                else:
                    c = xx / rr
                    sn = yy / rr
                cv[k] = c
                sv[k] = sn
                for j in range(k, n):
                    t0 = h[k, j]
                    t1 = h[k + 1, j]
                    h[k, j] = conj(c) * t0 + conj(sn) * t1
                    h[k + 1, j] = -sn * t0 + c * t1
            for k in range(lo, hi):
                c = cv[k]
                sn = sv[k]
                top = k + 2 if k + 2 < hi else hi
                for i in range(top + 1):
                    t0 = h[i, k]
                    t1 = h[i, k + 1]
                    h[i, k] = c * t0 + sn * t1
                    h[i, k + 1] = -conj(sn) * t0 + conj(c) * t1
                for i in range(n):
                    t0 = q[i, k]
                    t1 = q[i, k + 1]
                    q[i, k] = c * t0 + sn * t1
                    q[i, k + 1] = -conj(sn) * t0 + conj(c) * t1
            for k in range(lo, hi + 1):
                h[k, k] = h[k, k] + mu

    eigvals = np.diag(harr).copy()
    if status != 0:
        return eigvals, qarr, status
    small = EPS * anorm
    with nogil:
        for k in range(n):
            x[k, k] = 1.0
            for j in range(k - 1, -1, -1):
                acc = 0.0
                for m in range(j + 1, k + 1):
                    acc = acc + h[j, m] * x[m, k]
                den = h[j, j] - h[k, k]
                if cabs(den) < small:
                    den = small
                x[j, k] = -acc / den
    vecs = qarr @ xarr
    vecs /= np.sqrt(np.sum(np.abs(vecs) ** 2, axis=0))
    return eigvals, vecs, 0


def em_integrate(double x0, increments, double w, double dt,
                 double max_abs=1e3, int max_halvings=20):
    """Compiled twin of :func:`specdict._fallback.em_integrate`."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] incarr = np.ascontiguousarray(increments, dtype=np.float64)
    cdef Py_ssize_t n = incarr.shape[0] + 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] outarr = np.empty(n, dtype=np.float64)
    cdef double[::1] inc = incarr
    cdef double[::1] out = outarr
    cdef double w4 = w * w * w * w
    cdef double w2 = w * w
    cdef double x = x0, xn, y, hstep, sub, incv
    cdef Py_ssize_t k, sstep
    cdef long m
    cdef int level, events = 0
    cdef bint ok
    cdef Py_ssize_t failed = -1
    out[0] = x
    with nogil:
        for k in range(n - 1):
            incv = inc[k]
            xn = x - 4.0 * x * (x * x - w2) / w4 * dt + incv
            if isfinite(xn) and fabs(xn) <= max_abs:
                x = xn
                out[k + 1] = x
                continue
            events += 1
            ok = False
            for level in range(1, max_halvings + 1):
                m = (<long>1) << level
                hstep = dt / m
                sub = incv / m
                y = x
                ok = True
                for sstep in range(m):
                    y = y - 4.0 * y * (y * y - w2) / w4 * hstep + sub
                    if not (isfinite(y) and fabs(y) <= max_abs):
                        ok = False
                        break
                if ok:
                    x = y
                    break
            if not ok:
                failed = k
                break
            out[k + 1] = x
    if failed >= 0:
        return outarr[: failed + 1], events, failed
    return outarr, events, -1
