import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from specdict.dictionary import decode, simplex_lstsq, softmax
from specdict.manifold import project_feasible
from specdict.sgot import PROJECTOR_METRICS, SgotConfig, projector_metric_value, sgot_divergence
from specdict.spectral_core import assemble_operator, spectral_decompose

from conftest import random_sd

seeds = st.integers(0, 2**32 - 1)
dims = st.tuples(st.integers(2, 8), st.integers(1, 4)).filter(lambda t: t[1] <= t[0])


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_feasible_projection_is_biorthogonal(seed, pr):
    sd = random_sd(np.random.default_rng(seed), *pr)
    assert sd.biorth_error() < 1e-8


@settings(max_examples=40, deadline=None)
@given(seeds, dims)
def test_decompose_round_trip(seed, pr):
    sd = random_sd(np.random.default_rng(seed), *pr)
    g = assemble_operator(sd).matrix
    back = assemble_operator(spectral_decompose(g, pr[1])).matrix
    assert np.linalg.norm(back - g) <= 1e-7 * max(1.0, np.linalg.norm(g))


@settings(max_examples=30, deadline=None)
@given(seeds, dims, st.sampled_from(PROJECTOR_METRICS))
def test_divergence_symmetric_nonnegative(seed, pr, metric):
    rng = np.random.default_rng(seed)
    a, b = random_sd(rng, *pr), random_sd(rng, *pr)
    cfg = SgotConfig(projector_metric=metric)
    ab, ba = sgot_divergence(a, b, cfg), sgot_divergence(b, a, cfg)
    assert ab >= 0 and abs(ab - ba) <= 1e-9 * max(1.0, ab)
    assert sgot_divergence(a, a, cfg) <= 1e-12


@given(st.lists(st.floats(0, 1), min_size=2, max_size=20), st.sampled_from(PROJECTOR_METRICS))
def test_projector_metric_monotone(deltas, metric):
    d = np.sort(np.asarray(deltas))
    v = projector_metric_value(d, metric)
    assert np.all(v >= -1e-15) and np.all(np.diff(v) <= 1e-12)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8))
def test_softmax_on_simplex(logits):
    a = softmax(np.asarray(logits))
    assert np.all(a >= 0) and abs(a.sum() - 1) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds, st.integers(1, 6), st.integers(1, 10))
def test_simplex_lstsq_feasible_and_optimal(seed, k, m):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(m, k))
    b = rng.normal(size=m)
    x = simplex_lstsq(a.T @ a, a.T @ b)
    assert np.all(x >= -1e-12) and abs(x.sum() - 1) <= 1e-9
    f = np.sum((a @ x - b) ** 2)
    for j in range(k):
        assert f <= np.sum((a[:, j] - b) ** 2) + 1e-8


@settings(max_examples=20, deadline=None)
@given(seeds, st.integers(2, 4))
def test_decode_vertices(seed, d):
    rng = np.random.default_rng(seed)
    atoms = [random_sd(rng, 5, 2) for _ in range(d)]
    for j in range(d):
        out = decode(np.eye(d)[j], atoms)
        assert np.max(np.abs(out.left - atoms[j].left)) <= 1e-10
        assert np.max(np.abs(out.right - atoms[j].right)) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(seeds)
def test_project_feasible_idempotent(seed):
    sd = random_sd(np.random.default_rng(seed), 6, 3)
    again = project_feasible(sd)
    assert np.max(np.abs(again.left - sd.left)) <= 1e-10
