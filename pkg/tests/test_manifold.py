import numpy as np
import pytest

from specdict.errors import IllConditionedBase, InfeasibleAggregate, StepTooLarge
from specdict.manifold import (
    MetricConfig,
    TangentVector,
    metric_inner,
    project_feasible,
    project_feasible_vjp,
    project_tangent,
    retract,
    riemannian_gradient,
    safe_step,
    tangency_error,
)
from specdict.spectral_core import SpectralDecomposition, assemble_operator, rescale

from conftest import crandn, random_sd, random_tangent
from oracles import kkt_left_projection, riemannian_fd_errors


def test_projection_fixes_tangent_vectors(rng):
    base = random_sd(rng, 6, 3)
    v = random_tangent(rng, base)
    w = project_tangent(base, v)
    for a, b in [(v.d_eigvals, w.d_eigvals), (v.xi, w.xi), (v.zeta, w.zeta)]:
        assert np.max(np.abs(a - b)) < 1e-12


def test_projection_constraint(rng):
    base = random_sd(rng, 6, 3)
    a = crandn(rng, 3, 3)
    v = project_tangent(base, (np.zeros(3), np.zeros((6, 3)), base.left @ a))
    assert tangency_error(base, v) < 1e-10


def test_projection_idempotent(rng):
    base = random_sd(rng, 8, 4)
    v = project_tangent(base, (crandn(rng, 4), crandn(rng, 8, 4), crandn(rng, 8, 4)))
    w = project_tangent(base, v)
    assert max(np.abs(v.xi - w.xi).max(), np.abs(v.zeta - w.zeta).max()) < 1e-10


def test_projection_is_metric_orthogonal(rng):
    base = random_sd(rng, 7, 3)
    amb = TangentVector(crandn(rng, 3), crandn(rng, 7, 3), crandn(rng, 7, 3))
    v = project_tangent(base, amb)
    # stable metric: the residual must be orthogonal to every tangent vector
    resid = TangentVector(amb.d_eigvals - v.d_eigvals, amb.xi - v.xi, amb.zeta - v.zeta)
    for _ in range(5):
        u = random_tangent(rng, base)
        assert abs(metric_inner(base, resid, u)) < 1e-10 * (1 + metric_inner(base, u, u))


def test_projection_ill_conditioned():
    L = np.zeros((3, 2), complex)
    R = np.eye(3)[:, :2].astype(complex)
    base = SpectralDecomposition([1.0, 0.5], L, R)
    with pytest.raises(IllConditionedBase):
        project_tangent(base, (np.zeros(2), L, R))


def test_gradient_simple_cases(rng):
    base = random_sd(rng, 5, 2)
    zero = riemannian_gradient(base, (np.zeros(2), np.zeros((5, 2)), np.zeros((5, 2))))
    assert zero.norm_inf() == 0
    lam_only = riemannian_gradient(base, (np.ones(2), np.zeros((5, 2)), np.zeros((5, 2))))
    assert np.array_equal(lam_only.d_eigvals, np.ones(2))
    assert np.abs(lam_only.xi).max() == 0 and np.abs(lam_only.zeta).max() == 0


def test_gradient_of_right_norm(rng):
    # f = ||R||^2, Euclidean gradient 2R in the package convention
    base = random_sd(rng, 6, 3)
    grad = riemannian_gradient(base, (np.zeros(3), np.zeros((6, 3)), 2 * base.right))
    h = 1e-6
    for _ in range(5):
        v = random_tangent(rng, base)
        fd = (np.linalg.norm(base.right + h * v.zeta) ** 2 - np.linalg.norm(base.right - h * v.zeta) ** 2) / (2 * h)
        assert abs(metric_inner(base, grad, v) - fd) <= 1e-5 * max(1, abs(fd))


def test_gradient_fd_many_functionals(rng):
    errs = riemannian_fd_errors(rng, 6, 3, count=20)
    assert max(errs) < 1e-4


def test_retract_zero_and_first_order(rng):
    base = random_sd(rng, 6, 3)
    v = random_tangent(rng, base)
    assert retract(base, v, 0.0) is base
    h = 1e-7
    a, b = retract(base, v, h), retract(base, v, -h)
    for got, want in [
        ((a.eigvals - b.eigvals) / (2 * h), v.d_eigvals),
        ((a.left - b.left) / (2 * h), v.xi),
        ((a.right - b.right) / (2 * h), v.zeta),
    ]:
        assert np.linalg.norm(got - want) <= 1e-4 * max(1.0, np.linalg.norm(want))


def test_retract_feasible_at_half_safe_step(rng):
    for _ in range(10):
        base = random_sd(rng, 5, 2)
        v = random_tangent(rng, base)
        out = retract(base, v, 0.5 * safe_step(base, v))
        assert out.biorth_error() < 1e-10


def test_retract_too_large():
    R = np.array([[1.0], [0.0]], complex)
    base = SpectralDecomposition([1.0], R, R)
    v = TangentVector([0.0], np.zeros((2, 1)), -R)
    with pytest.raises(StepTooLarge):
        retract(base, v, 1.0)


def test_safe_step_values(rng):
    R = np.array([[1.0], [0.0]], complex)
    base = SpectralDecomposition([1.0], R, R)
    zeta = np.array([[0.0], [1.0]], complex)
    v = TangentVector([0.0], np.zeros((2, 1)), zeta)
    assert safe_step(base, v) == pytest.approx(0.9)
    assert safe_step(base, v.scaled(10.0)) == pytest.approx(0.09)
    assert safe_step(base, v.scaled(0.0)) == np.inf


def test_project_feasible_hand_example():
    out = project_feasible(([1.0], np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]])))
    assert np.allclose(out.left, [[1.0], [1.0]])
    assert abs(out.left.conj().T @ out.right - 1) < 1e-15


def test_project_feasible_fixes_feasible(rng):
    sd = random_sd(rng, 6, 3)
    out = project_feasible(sd)
    assert np.max(np.abs(out.left - sd.left)) < 1e-12
    assert out.right is sd.right or np.array_equal(out.right, sd.right)


def test_project_feasible_matches_kkt(rng):
    for _ in range(20):
        p = int(rng.integers(2, 11))
        r = int(rng.integers(1, min(4, p) + 1))
        L, R = crandn(rng, p, r), crandn(rng, p, r)
        out = project_feasible((crandn(rng, r), L, R))
        assert np.max(np.abs(out.left - kkt_left_projection(L, R))) < 1e-8
        assert out.biorth_error() < 1e-10


def test_project_feasible_rank_deficient():
    R = np.ones((4, 2), complex)
    with pytest.raises(InfeasibleAggregate):
        project_feasible((np.ones(2), R, R))


def test_project_feasible_vjp_fd(rng):
    p, r = 6, 3
    L, R = crandn(rng, p, r), crandn(rng, p, r)
    out = project_feasible((np.ones(r), L, R)).left
    g = crandn(rng, p, r)
    g_l, g_r = project_feasible_vjp(L, R, out, g)
    dl, dr = crandn(rng, p, r), crandn(rng, p, r)
    h = 1e-6

    def f(a, b):
        return np.sum(np.conj(g) * project_feasible((np.ones(r), a, b)).left).real

    fd = (f(L + h * dl, R + h * dr) - f(L - h * dl, R - h * dr)) / (2 * h)
    an = np.sum(np.conj(g_l) * dl).real + np.sum(np.conj(g_r) * dr).real
    assert abs(an - fd) < 1e-6 * max(1, abs(fd))


def test_metric_basic_properties(rng):
    base = random_sd(rng, 6, 3)
    u, v = random_tangent(rng, base), random_tangent(rng, base)
    zero = v.scaled(0.0)
    assert metric_inner(base, zero, zero) == 0
    assert metric_inner(base, v, v) > 0
    assert metric_inner(base, u, v) == pytest.approx(metric_inner(base, v, u), rel=1e-12)


def test_metric_euclidean_when_orthonormal():
    e = np.array([[1.0], [0.0], [0.0]], complex)
    base = SpectralDecomposition([0.5], e, e)
    u = TangentVector([1 + 1j], [[0.0], [1.0], [2.0]], [[0.0], [3.0], [1j]])
    v = TangentVector([2.0], [[0.0], [1j], [1.0]], [[0.0], [1.0], [1.0]])
    direct = np.vdot(u.d_eigvals, v.d_eigvals).real + np.vdot(u.xi, v.xi).real + np.vdot(u.zeta, v.zeta).real
    assert metric_inner(base, u, v) == pytest.approx(direct, abs=1e-14)


def test_metric_gauge_invariant(rng):
    base = random_sd(rng, 6, 3)
    u, v = random_tangent(rng, base), random_tangent(rng, base)
    for _ in range(10):
        z = crandn(rng, 3)
        moved = rescale(base, z)
        # tangent vectors transform like the base point
        tu = TangentVector(u.d_eigvals, u.xi * z.conj(), u.zeta / z)
        tv = TangentVector(v.d_eigvals, v.xi * z.conj(), v.zeta / z)
        assert tangency_error(moved, tu) < 1e-8
        assert metric_inner(moved, tu, tv) == pytest.approx(metric_inner(base, u, v), rel=1e-10, abs=1e-10)


def test_project_feasible_gauge_paths(rng):
    raw = (crandn(rng, 3), crandn(rng, 7, 3), crandn(rng, 7, 3))
    ref = assemble_operator(project_feasible(raw)).matrix
    for _ in range(10):
        z = crandn(rng, 3)
        moved = (raw[0], raw[1] * z.conj(), raw[2] / z)
        diff = assemble_operator(project_feasible(moved)).matrix - ref
        assert np.linalg.norm(diff) < 1e-10 * max(1, np.linalg.norm(ref))


def test_metric_config_validation():
    with pytest.raises(ValueError):
        MetricConfig(regularizer=1e-3)
    with pytest.raises(NotImplementedError):
        project_tangent(
            SpectralDecomposition([1.0], np.ones((1, 1)), np.ones((1, 1))),
            (np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1))),
            MetricConfig(kind="natural"),
        )
