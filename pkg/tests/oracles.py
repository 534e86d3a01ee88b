"""Independent reference computations used by the unit and acceptance tests."""

import numpy as np

from specdict.manifold import metric_inner, riemannian_gradient

from conftest import crandn, perturb, random_sd, random_tangent


def kkt_left_projection(L, R):
    """argmin ||X - L||_F s.t. X^* R = I, by solving the full KKT system.

    Unknowns are vec(X) (column-major) and the multipliers of R^* X = I.
    """
    p, r = L.shape
    n = p * r
    a = np.kron(np.eye(r), R.conj().T)        # R^* X in column-major vec form
    kkt = np.zeros((n + r * r, n + r * r), dtype=complex)
    kkt[:n, :n] = np.eye(n)
    kkt[:n, n:] = a.conj().T
    kkt[n:, :n] = a
    rhs = np.concatenate([L.reshape(-1, order="F"), np.eye(r).reshape(-1, order="F")])
    sol = np.linalg.solve(kkt, rhs)
    return sol[:n].reshape(p, r, order="F")


def make_functionals(rng, p, r, count=20):
    """Smooth real functionals of ``(Lambda, L, R)`` with hand-derived gradients.

    Gradients follow the package convention ``d/dRe + i d/dIm``.
    """
    out = []
    for k in range(count):
        a_l, a_r = crandn(rng, p, r), crandn(rng, p, r)
        b = crandn(rng, r, r)
        c = crandn(rng, r)
        kind = k % 5
        if kind == 0:
            def f(lam, L, R, a_l=a_l, a_r=a_r):
                return np.vdot(a_l, L).real + np.vdot(a_r, R).real

            def g(lam, L, R, a_l=a_l, a_r=a_r):
                return np.zeros_like(lam), a_l, a_r
        elif kind == 1:
            def f(lam, L, R, b=b):
                return np.linalg.norm(R @ b) ** 2 + np.linalg.norm(L @ b) ** 2

            def g(lam, L, R, b=b):
                bb = b @ b.conj().T
                return np.zeros_like(lam), 2 * L @ bb, 2 * R @ bb
        elif kind == 2:
            def f(lam, L, R, c=c):
                return (c @ lam**2).real + np.sum(np.abs(lam) ** 4)

            def g(lam, L, R, c=c):
                return np.conj(2 * c * lam) + 4 * np.abs(lam) ** 2 * lam, np.zeros_like(L), np.zeros_like(R)
        elif kind == 3:
            def f(lam, L, R):
                return np.log1p(np.linalg.norm(L) ** 2) + np.sum(np.abs(R) ** 4)

            def g(lam, L, R):
                return np.zeros_like(lam), 2 * L / (1 + np.linalg.norm(L) ** 2), 4 * np.abs(R) ** 2 * R
        else:
            # coupling through the assembled operator: ||R diag(lam) L^* - M||^2
            m = crandn(rng, p, p)

            def f(lam, L, R, m=m):
                return np.linalg.norm((R * lam) @ L.conj().T - m) ** 2

            def g(lam, L, R, m=m):
                e = (R * lam) @ L.conj().T - m
                g_r = 2 * e @ L * lam.conj()
                g_l = 2 * e.conj().T @ R * lam
                g_lam = 2 * np.einsum("ki,kl,li->i", R.conj(), e, L)
                return g_lam, g_l, g_r
        out.append((f, g))
    return out


def riemannian_fd_errors(rng, p, r, count=20, h=1e-6):
    """Relative mismatch of ``g(grad f, v)`` vs central differences for ``count`` functionals."""
    base = random_sd(rng, p, r)
    errs = []
    for f, g in make_functionals(rng, p, r, count):
        grad = riemannian_gradient(base, g(base.eigvals, base.left, base.right))
        v = random_tangent(rng, base)
        fd = (f(*perturb(base, v, h)) - f(*perturb(base, v, -h))) / (2 * h)
        an = metric_inner(base, grad, v)
        errs.append(abs(an - fd) / max(abs(fd), 1e-8))
    return errs


def euclid_fd_errors(fun, grads, args, rng, h=1e-6):
    """Central differences of ``fun`` along random directions vs ``Re<grad, dir>``."""
    dirs = [crandn(rng, *np.shape(a)) if np.iscomplexobj(a) else rng.normal(size=np.shape(a)) for a in args]
    plus = [a + h * d for a, d in zip(args, dirs)]
    minus = [a - h * d for a, d in zip(args, dirs)]
    fd = (fun(*plus) - fun(*minus)) / (2 * h)
    an = sum(float(np.sum(np.conj(g) * d).real) for g, d in zip(grads, dirs))
    return abs(an - fd) / max(abs(fd), 1e-8)
