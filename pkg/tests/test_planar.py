from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qec_mle.dem import DetectorErrorModel, pure_error, sample_shots, syndrome_of
from qec_mle.generate import generate_dem
from qec_mle.oracle import brute_distribution, brute_partition, fd_grad
from qec_mle.planar import (
    KacWardOperator,
    NotGraphlikeError,
    PlanarLikelihood,
    RotationSystem,
    build_dual_graph,
    grad_log_prob_planar,
    kac_ward_log_partition,
    kac_ward_log_z,
    log_prob_planar,
)

from conftest import all_syndromes, random_graphlike_model, random_planar_graph


def _key(s) -> int:
    return sum(int(b) << j for j, b in enumerate(s))


def test_kac_ward_random_planar_graphs():
    rng = np.random.default_rng(7)
    for _ in range(40):
        n_v, edges, rot = random_planar_graph(rng)
        j = rng.uniform(-2, 2, len(edges))
        got = kac_ward_log_z(KacWardOperator(rot), j)
        assert got == pytest.approx(brute_partition(n_v, edges, j), rel=1e-10)


def test_kac_ward_gradient_random_graph():
    rng = np.random.default_rng(8)
    n_v, edges, rot = random_planar_graph(rng, 9)
    op = KacWardOperator(rot)
    j = rng.uniform(-1, 1, len(edges))
    _, g = kac_ward_log_z(op, j, grad=True)
    fd = fd_grad(lambda x: brute_partition(n_v, edges, x), j, h=1e-6, relative=False)
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-8)


@given(st.floats(-3, 3))
def test_two_spin_closed_form(j):
    rot = RotationSystem(2, np.array([[0, 1]]), ((0,), (1,)))
    assert kac_ward_log_z(KacWardOperator(rot), np.array([j])) == pytest.approx(math.log(4 * math.cosh(j)))


def test_zero_couplings():
    rng = np.random.default_rng(9)
    n_v, edges, rot = random_planar_graph(rng)
    assert kac_ward_log_z(KacWardOperator(rot), np.zeros(len(edges))) == pytest.approx(n_v * math.log(2))


def test_dual_graph_couplings(rep35):
    e = np.zeros(rep35.n_mechanisms, np.uint8)
    half = build_dual_graph(rep35, e, np.full(rep35.n_mechanisms, 0.5))
    assert np.all(half.couplings == 0)
    e[4] = 1
    flipped = build_dual_graph(rep35, e)
    plain = build_dual_graph(rep35, np.zeros_like(e))
    assert flipped.couplings[4] == -plain.couplings[4]
    assert np.array_equal(np.delete(flipped.couplings, 4), np.delete(plain.couplings, 4))


def test_dual_graph_counts(rep35):
    g = build_dual_graph(rep35, np.zeros(rep35.n_mechanisms, np.uint8))
    assert g.n_edges == rep35.n_mechanisms
    assert g.n_spins == rep35.n_mechanisms - rep35.n_detectors + 1
    assert g.logical_spin >= 0 and g.auxiliary_spin >= 0
    faces = g.embedding
    assert faces.n_vertices - faces.n_edges + len(faces.faces) == 2


def test_single_mechanism_model():
    model = DetectorErrorModel.from_mechanisms([(0.1, [0], False)], 1, [(0.0, 0.0)])
    assert math.exp(log_prob_planar(model, model.priors, np.array([0]))) == pytest.approx(0.9)
    assert math.exp(log_prob_planar(model, model.priors, np.array([1]))) == pytest.approx(0.1)
    assert grad_log_prob_planar(model, model.priors, np.array([1]))[0] == pytest.approx(10.0)


def test_not_graphlike():
    model = generate_dem("surface", 3, 2, 0.001)
    with pytest.raises(NotGraphlikeError):
        PlanarLikelihood(model)


@pytest.mark.parametrize("d,r", [(3, 1), (3, 3), (5, 1)])
def test_matches_brute_force_all_syndromes(d, r):
    base = generate_dem("repetition", d, r, 0.001)
    theta = np.random.default_rng(d * 10 + r).uniform(0.01, 0.3, base.n_mechanisms)
    model = base.with_priors(theta)
    syn = all_syndromes(model.n_detectors)
    table = brute_distribution(model, theta)
    lik = PlanarLikelihood(model)
    got = lik.log_prob(theta, syn)
    joint = lik.log_joint(theta, syn)
    for s, lp, lj in zip(syn, got, joint):
        p0, p1 = table.get(_key(s), (0.0, 0.0))
        assert lp == pytest.approx(math.log(p0 + p1), rel=1e-10)
        assert np.exp(lj) == pytest.approx([p0, p1], rel=1e-9, abs=1e-300)


def test_normalization_toy_model(rep35):
    theta = np.random.default_rng(3).uniform(0.001, 0.2, rep35.n_mechanisms)
    lp = PlanarLikelihood(rep35).log_prob(theta, all_syndromes(12))
    assert math.fsum(np.exp(lp).tolist()) == pytest.approx(1.0, abs=1e-8)


def test_gauge_invariance(rep35):
    rng = np.random.default_rng(5)
    theta = rng.uniform(0.01, 0.3, rep35.n_mechanisms)
    for _ in range(20):
        e1 = rng.integers(0, 2, rep35.n_mechanisms).astype(np.uint8)
        s = syndrome_of(rep35, e1).syndromes[0]
        a = log_prob_planar(rep35, theta, s)
        b = log_prob_planar(rep35, theta, s, e=e1)
        assert a == pytest.approx(b, rel=1e-10)


def test_coset_split(rep35):
    rng = np.random.default_rng(6)
    theta = rng.uniform(0.01, 0.3, rep35.n_mechanisms)
    for _ in range(10):
        e = rng.integers(0, 2, rep35.n_mechanisms)
        g = build_dual_graph(rep35, e, theta)
        free = kac_ward_log_partition(g).log_Z
        plus = kac_ward_log_partition(g, +1).log_Z
        minus = kac_ward_log_partition(g, -1).log_Z
        assert free == pytest.approx(np.logaddexp(plus, minus), rel=1e-10)
    with pytest.raises(ValueError):
        kac_ward_log_partition(g, 2)


def test_gradient_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(8):
        model = random_graphlike_model(rng)
        theta = model.priors
        e = rng.integers(0, 2, model.n_mechanisms)
        s = syndrome_of(model, e).syndromes[0]
        g = grad_log_prob_planar(model, theta, s)
        fd = fd_grad(lambda t: log_prob_planar(model, t, s), theta)
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_batched_gradient_weights(rep35):
    rng = np.random.default_rng(12)
    theta = rng.uniform(0.01, 0.2, rep35.n_mechanisms)
    syn = sample_shots(rep35.with_priors(theta), 40, seed=1).syndromes
    w = rng.uniform(0, 1, 40)
    lik = PlanarLikelihood(rep35)
    _, g = lik.log_prob(theta, syn, weights=w, grad=True)
    want = sum(wk * grad_log_prob_planar(rep35, theta, s) for wk, s in zip(w, syn))
    assert np.allclose(g, want, rtol=1e-8)


def test_rare_syndromes_stay_accurate():
    # tiny priors with uniformly random errors drive the determinant into the tail
    base = generate_dem("repetition", 3, 3, 0.001)
    theta = np.full(base.n_mechanisms, 1e-6)
    rng = np.random.default_rng(13)
    syn = syndrome_of(base, rng.integers(0, 2, (30, base.n_mechanisms))).syndromes
    table = brute_distribution(base, theta)
    lp, g = PlanarLikelihood(base).log_prob(theta, syn, grad=True)
    want = [math.log(sum(table[_key(s)])) for s in syn]
    assert np.allclose(lp, want, rtol=1e-10)
    assert np.all(np.isfinite(g))


def test_syndrome_width_checked(rep35):
    with pytest.raises(ValueError):
        PlanarLikelihood(rep35).log_prob(rep35.priors, np.zeros((1, 5)))


def test_pure_error_choice_consistent(rep35):
    s = sample_shots(rep35, 5, seed=2).syndromes
    assert np.array_equal(syndrome_of(rep35, pure_error(rep35, s)).syndromes, s)
