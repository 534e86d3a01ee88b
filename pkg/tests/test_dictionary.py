import numpy as np
import pytest

from specdict.dictionary import (
    Adam,
    Coefficients,
    Dictionary,
    TrainConfig,
    TransitionStats,
    batch_loss_and_atom_grads,
    decode,
    decode_grad_chain,
    decode_vjp_atoms,
    estimate_short_trajectory,
    fit_coefficients,
    initialize_dictionary,
    kmedoids,
    one_step_loss,
    rolling_coefficients,
    sgot_loss_and_grad,
    short_loss_and_grad,
    simplex_lstsq,
    softmax,
    train_dictionary,
)
from specdict.errors import InvalidInput
from specdict.manifold import project_feasible
from specdict.sgot import SgotConfig, grad_sgot_fixed_plan, pairwise_distances, sgot_divergence, solve_transport, to_measure
from specdict.spectral_core import SpectralDecomposition, assemble_operator, rescale

from conftest import crandn, random_sd
from oracles import kkt_left_projection


def well_separated_dict(rng, d=3, p=6, r=2):
    atoms = []
    for j in range(d):
        lam = np.array([0.9 - 0.25 * j, 0.2 + 0.1j * (j + 1)])[:r]
        atoms.append(project_feasible((lam, crandn(rng, p, r), crandn(rng, p, r))))
    return Dictionary(atoms)


def fd_logits(fun, x, h=1e-6):
    out = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (fun(x + e) - fun(x - e)) / (2 * h)
    return out


def test_softmax_and_coefficients():
    c = Coefficients(np.array([0.0, np.log(3.0)]))
    assert np.allclose(c.alpha, [0.25, 0.75])
    assert abs(c.alpha.sum() - 1) < 1e-12
    v = Coefficients.from_alpha([0.0, 1.0, 0.0])
    assert v.alpha[1] == 1.0
    assert np.allclose(softmax(np.array([1000.0, 1000.0])), 0.5)


def test_decode_vertices(rng):
    dic = well_separated_dict(rng)
    for j, atom in enumerate(dic.atoms):
        out = decode(np.eye(3)[j], dic)
        assert np.max(np.abs(out.left - atom.left)) < 1e-10
        assert np.array_equal(out.right, atom.right)
        assert np.array_equal(out.eigvals, atom.eigvals)


def test_decode_identical_atoms(rng):
    sd = random_sd(rng, 5, 2)
    dic = Dictionary([sd, sd])
    for a in (0.1, 0.5, 0.9):
        out = decode([a, 1 - a], dic)
        assert np.max(np.abs(out.left - sd.left)) < 1e-12


def test_decode_matches_kkt(rng):
    dic = Dictionary([random_sd(rng, 6, 2) for _ in range(3)])
    alpha = np.array([0.5, 0.3, 0.2])
    out = decode(alpha, dic)
    assert out.biorth_error() < 1e-10
    l_raw = sum(a * at.left for a, at in zip(alpha, dic.atoms))
    r_agg = sum(a * at.right for a, at in zip(alpha, dic.atoms))
    assert np.max(np.abs(out.left - kkt_left_projection(l_raw, r_agg))) < 1e-8
    assert np.allclose(out.eigvals, sum(a * at.eigvals for a, at in zip(alpha, dic.atoms)))
    assert np.allclose(out.right, r_agg)
    out.validate()


def test_decode_grad_chain_fd(rng):
    dic = Dictionary([random_sd(rng, 5, 3) for _ in range(3)])
    target = to_measure(random_sd(rng, 5, 3))
    cfg = SgotConfig()
    x = rng.normal(size=3)

    def loss_fixed(z, plan):
        sd = decode(softmax(z), dic)
        return float(np.sum(plan.matrix * __import__("specdict.sgot", fromlist=["x"]).cost_matrix(to_measure(sd), target, cfg)))

    sd = decode(softmax(x), dic)
    plan, _ = solve_transport(to_measure(sd), target, cfg)
    g = decode_grad_chain(softmax(x), dic, grad_sgot_fixed_plan(sd, target, plan, cfg))
    fd = fd_logits(lambda z: loss_fixed(z, plan), x)
    assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)
    # the packaged loss/grad agrees with the chain
    f2, g2 = sgot_loss_and_grad(x, dic.atoms, target, cfg)
    assert np.allclose(g2, g, atol=1e-10)


def test_decode_grad_chain_eigenvalue_only(rng):
    dic = Dictionary([random_sd(rng, 5, 2) for _ in range(3)])
    alpha = np.array([0.2, 0.5, 0.3])
    g_lam = crandn(rng, 2)
    g = decode_grad_chain(alpha, dic, (g_lam, np.zeros((5, 2)), np.zeros((5, 2))))
    direct = np.array([np.vdot(g_lam, a.eigvals).real for a in dic.atoms])
    assert np.allclose(g, alpha * (direct - alpha @ direct), atol=1e-12)


def test_decode_grad_chain_flat(rng):
    sd = random_sd(rng, 5, 2)
    dic = Dictionary([sd, sd])
    target = to_measure(random_sd(rng, 5, 2))
    _, g = sgot_loss_and_grad(np.array([0.3, -0.2]), dic.atoms, target, SgotConfig())
    assert np.max(np.abs(g)) < 1e-12


def test_decode_vjp_atoms_fd(rng):
    atoms = [random_sd(rng, 5, 2) for _ in range(3)]
    alpha = np.array([0.3, 0.3, 0.4])
    target = to_measure(random_sd(rng, 5, 2))
    cfg = SgotConfig()
    sd = decode(alpha, atoms)
    plan, _ = solve_transport(to_measure(sd), target, cfg)
    from specdict.sgot import cost_matrix

    def f(ats):
        out = decode(alpha, ats)
        return float(np.sum(plan.matrix * cost_matrix(to_measure(out), target, cfg)))

    grads = decode_vjp_atoms(alpha, atoms, grad_sgot_fixed_plan(sd, target, plan, cfg))
    h = 1e-6
    for j in range(3):
        d = (crandn(rng, 2), crandn(rng, 5, 2), crandn(rng, 5, 2))

        def moved(s):
            new = list(atoms)
            a = atoms[j]
            new[j] = SpectralDecomposition(a.eigvals + s * d[0], a.left + s * d[1], a.right + s * d[2])
            return new

        fd = (f(moved(h)) - f(moved(-h))) / (2 * h)
        an = sum(np.sum(np.conj(g) * x).real for g, x in zip(grads[j], d))
        assert abs(an - fd) <= 1e-4 * max(abs(fd), 1e-8)


def test_adam_minimizes_quadratic():
    opt = Adam(0.1)
    x = np.array([3.0, -2.0])
    for _ in range(500):
        x = x + opt.direction(2 * x)
    assert np.linalg.norm(x) < 1e-2


def test_fit_vertex_recovery(rng):
    dic = well_separated_dict(rng)
    coeffs = fit_coefficients(dic.atoms, dic)
    for j, c in enumerate(coeffs):
        assert c.alpha[j] >= 0.99
        assert c.loss <= 1e-6
        assert c.loss <= c.initial_loss


def test_fit_flat_objective(rng):
    sd = random_sd(rng, 5, 2)
    dic = Dictionary([sd, sd])
    c = fit_coefficients([random_sd(rng, 5, 2)], dic)[0]
    assert np.allclose(c.alpha, [0.5, 0.5])


def test_fit_self_consistency(rng):
    dic = well_separated_dict(rng)
    target = decode([0.2, 0.5, 0.3], dic)
    c = fit_coefficients([target], dic)[0]
    assert c.loss <= 1e-4


def test_fit_rejects_shape(rng):
    dic = well_separated_dict(rng)
    with pytest.raises(InvalidInput):
        fit_coefficients([random_sd(rng, 4, 2)], dic)


def test_fit_deterministic(rng):
    dic = well_separated_dict(rng)
    targets = [random_sd(rng, 6, 2) for _ in range(3)]
    a = fit_coefficients(targets, dic)
    b = fit_coefficients(targets, dic)
    assert all(np.array_equal(x.logits, y.logits) for x, y in zip(a, b))


def test_kmedoids_and_init_loss(rng):
    ops = [random_sd(rng, 4, 2) for _ in range(8)]
    cfg = SgotConfig()
    dist = pairwise_distances(ops, cfg)
    med = kmedoids(dist, 3)
    assert len(set(med.tolist())) == 3
    # every medoid is optimal for its cluster
    labels = np.argmin(dist[:, med], axis=1)
    for c, m in enumerate(med):
        members = np.nonzero(labels == c)[0]
        costs = dist[np.ix_(members, members)].sum(axis=1)
        assert dist[m, members].sum() <= costs.min() + 1e-12
    atoms, medoids, init = initialize_dictionary(ops, 3, cfg, dist)
    direct = np.mean([min(sgot_divergence(o, a, cfg) for a in atoms) for o in ops])
    assert init == pytest.approx(direct, abs=1e-10)
    for a, m in zip(atoms, medoids):
        assert np.allclose(assemble_operator(a).matrix, assemble_operator(ops[m]).matrix, atol=1e-12)


def test_train_degenerate_population(rng):
    g = random_sd(rng, 5, 2)
    ops = [rescale(g, crandn(rng, 2)) for _ in range(4)]
    dic = train_dictionary(ops, 2, TrainConfig(epochs=1, coeff_iters=20))
    assert dic.epoch_losses[-1] <= dic.init_loss + 1e-9


def test_train_small_population(rng):
    base = well_separated_dict(rng, d=3, p=5, r=2)
    ops = [decode(a, base) for a in rng.dirichlet(np.ones(3), size=10)]
    cfg = TrainConfig(epochs=3, batch_size=4, coeff_iters=30)
    dic = train_dictionary(ops, 3, cfg)
    assert len(dic.loss_curve) == 3 * 3
    assert len(dic.epoch_losses) == 3
    for a, b in zip(dic.epoch_losses[:-1], dic.epoch_losses[1:]):
        assert b <= 1.05 * a
    for atom in dic.atoms:
        atom.validate()
    again = train_dictionary(ops, 3, cfg)
    assert again.to_json() == dic.to_json()
    assert Dictionary.from_json(dic.to_json()).to_json() == dic.to_json()


def test_train_rejects_small_population(rng):
    with pytest.raises(InvalidInput):
        train_dictionary([random_sd(rng, 4, 2)], 2)


def test_envelope_descent(rng):
    # one atom step with codes frozen lowers the batch loss for a small step
    failures = 0
    for _ in range(20):
        atoms = [random_sd(rng, 4, 2) for _ in range(3)]
        batch = [random_sd(rng, 4, 2) for _ in range(4)]
        cfg = SgotConfig()
        coeffs = fit_coefficients(batch, atoms, TrainConfig(coeff_iters=10), cfg)
        loss, grads = batch_loss_and_atom_grads(atoms, batch, coeffs, cfg)
        lr = 1e-4
        moved = [
            SpectralDecomposition(a.eigvals - lr * g[0], a.left - lr * g[1], a.right - lr * g[2])
            for a, g in zip(atoms, grads)
        ]
        moved = [project_feasible(m) for m in moved]
        new_loss, _ = batch_loss_and_atom_grads(moved, batch, coeffs, cfg)
        failures += new_loss > loss
    assert failures <= 1


def test_one_step_loss_direct(rng):
    sd = random_sd(rng, 5, 2, spread=0.5)
    z = rng.normal(size=(40, 5)) * 0.3
    g = assemble_operator(sd).matrix
    direct = np.mean([np.linalg.norm(z[t + 1] - g.conj().T @ z[t]) ** 2 for t in range(39)])
    stats = TransitionStats(z)
    assert one_step_loss(sd, stats) == pytest.approx(direct, rel=1e-10)
    # invariant to the gauge of the decomposition
    assert one_step_loss(rescale(sd, crandn(rng, 2)), stats) == pytest.approx(direct, rel=1e-10)


def test_one_step_loss_gradient(rng):
    from oracles import euclid_fd_errors

    sd = random_sd(rng, 5, 2)
    stats = TransitionStats(rng.normal(size=(30, 5)))
    _, grads = one_step_loss(sd, stats, with_grad=True)

    def f(lam, L, R):
        return one_step_loss(SpectralDecomposition(lam, L, R), stats)

    assert euclid_fd_errors(f, grads, [sd.eigvals, sd.left, sd.right], rng) < 1e-6


def test_short_loss_gradient_single_pair(rng):
    dic = Dictionary([random_sd(rng, 4, 2, spread=0.5) for _ in range(3)])
    z = rng.normal(size=(2, 4))
    stats = TransitionStats(z)
    x = rng.normal(size=3)
    f, g = short_loss_and_grad(x, dic.atoms, stats)
    assert f == pytest.approx(one_step_loss(decode(softmax(x), dic), stats), rel=1e-10)
    fd = fd_logits(lambda y: short_loss_and_grad(y, dic.atoms, stats)[0], x)
    assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)


def shared_mode_dict(rng, d=3, p=6, r=2, spread=0.2):
    """Real atoms with well separated eigenvalues and nearby eigenvectors."""
    l0, r0 = rng.normal(size=(p, r)), rng.normal(size=(p, r))
    atoms = []
    for j in range(d):
        lam = np.array([0.95, 0.6])[:r] - 0.3 * j
        atoms.append(project_feasible((lam, l0 + spread * rng.normal(size=(p, r)), r0 + spread * rng.normal(size=(p, r)))))
    return Dictionary(atoms)


def vertex_series(rng, atom, n=30):
    g = assemble_operator(atom).matrix.real
    z = np.zeros((n, atom.p))
    z[0] = rng.normal(size=atom.p)
    for t in range(n - 1):
        z[t + 1] = g.T @ z[t]
    return z


@pytest.mark.parametrize("j", [0, 1, 2])
def test_short_vertex_generation(rng, j):
    dic = shared_mode_dict(rng)
    z = vertex_series(rng, dic.atoms[j])
    # near a vertex the logit gradient is about twice the loss, so a loss of
    # 1e-10 is only reachable with a gradient tolerance well below the default
    coef, sd = estimate_short_trajectory(z, dic, gtol=1e-12)
    assert coef.alpha[j] >= 0.99
    assert coef.loss <= 1e-10
    assert one_step_loss(sd, TransitionStats(z)) == pytest.approx(coef.loss, abs=1e-12)


def test_short_default_tolerance_stops_on_gradient(rng):
    dic = shared_mode_dict(rng)
    z = vertex_series(rng, dic.atoms[0])
    coef, _ = estimate_short_trajectory(z, dic)
    _, g = short_loss_and_grad(coef.logits, dic.atoms, TransitionStats(z))
    assert np.abs(g).max() <= 1e-6
    assert coef.alpha[0] >= 0.99 and coef.loss < 1e-5


def test_short_zero_features(rng):
    dic = well_separated_dict(rng, p=4)
    coef, _ = estimate_short_trajectory(np.zeros((20, 4)), dic)
    assert np.allclose(coef.alpha, 1 / 3)
    assert coef.loss == 0


def test_short_monotone(rng):
    dic = well_separated_dict(rng, p=4)
    coef, sd = estimate_short_trajectory(rng.normal(size=(30, 4)) * 0.3, dic)
    assert coef.loss <= coef.initial_loss
    sd.validate()


def test_rolling_single_window(rng):
    dic = well_separated_dict(rng, p=4)
    z = rng.normal(size=(25, 4)) * 0.3
    rc = rolling_coefficients(z, dic, window=25)
    assert len(rc) == 1 and rc[0][0] == 0
    ref, _ = estimate_short_trajectory(z, dic)
    assert np.array_equal(rc[0][1].logits, ref.logits)
    assert len(rolling_coefficients(z, dic, window=10, stride=5)) == 4
    with pytest.raises(InvalidInput):
        rolling_coefficients(z, dic, window=1)


def test_simplex_lstsq_kkt(rng):
    for d in (1, 2, 4):
        a = rng.normal(size=(10, d))
        b = rng.normal(size=10)
        sol = simplex_lstsq(a.T @ a, a.T @ b)
        assert sol.min() >= 0 and sol.sum() == pytest.approx(1)
        # compare with a dense grid / random search on the simplex
        cand = rng.dirichlet(np.ones(d), size=4000)
        best = np.min(np.sum((cand @ a.T - b) ** 2, axis=1))
        assert np.sum((a @ sol - b) ** 2) <= best + 1e-12
