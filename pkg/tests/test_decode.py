"""Maximum-likelihood decoding and logical error rates."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binomtest

from conftest import all_syndromes, truncate
from qec_mle.decode import (
    LerReport,
    decode,
    decode_planar,
    decode_tn,
    evaluate_ler,
    ler_report,
    per_round_rate,
    wilson_interval,
)
from qec_mle.dem import DetectorErrorModel, ShotBatch, sample_shots
from qec_mle.generate import generate_dem
from qec_mle.oracle import brute_distribution, brute_joint
from qec_mle.tn import TNLikelihood


def brute_table(model, theta):
    tab = brute_distribution(model, theta)
    keys = sorted(tab)
    syn = ((np.array(keys)[:, None] >> np.arange(model.n_detectors)) & 1).astype(np.uint8)
    return syn, np.array([tab[k] for k in keys])


def agree_with_brute(pred, p):
    truth = (p[:, 1] > p[:, 0]).astype(np.uint8)
    near_tie = np.abs(p[:, 0] - p[:, 1]) <= 1e-12 * p.sum(axis=1)
    return bool(np.all((pred == truth) | near_tie))


def test_zero_syndrome_small_theta():
    model = generate_dem("repetition", 3, 2, 0.001)
    zero = np.zeros((1, model.n_detectors), dtype=np.uint8)
    for dec in ("planar", "tn"):
        res = decode(model, model.priors, zero, dec)
        assert res.predicted_logical[0] == 0 and res.log_odds[0] > 0


def test_single_boundary_mechanism():
    model = DetectorErrorModel.from_mechanisms([(0.1, [0], True)], 1)
    res = decode_tn(model, model.priors, np.array([[1], [0]]))
    np.testing.assert_array_equal(res.predicted_logical, [1, 0])
    assert res.log_odds[0] == -np.inf and res.log_odds[1] == np.inf


def test_no_logical_model_never_flips():
    model = DetectorErrorModel.from_mechanisms([(0.3, [0], False), (0.2, [0, 1], False)], 2)
    res = decode_tn(model, model.priors, all_syndromes(2))
    assert not res.predicted_logical.any() and res.n_ties == 0


def test_exact_tie_flagged():
    # two mechanisms with equal priors produce s=1 with opposite logical actions
    model = DetectorErrorModel.from_mechanisms([(0.1, [0], True), (0.1, [0, 0, 0], False)], 1)
    assert model.n_mechanisms == 2
    res = decode_tn(model, model.priors, np.array([[1]]), TNLikelihood(model, strategy="positive"))
    assert res.n_ties == 1 and res.predicted_logical[0] == 0 and res.log_odds[0] == 0


@pytest.mark.parametrize("d, r", [(3, 3), (5, 1), (3, 2)])
def test_decoders_match_brute_force_repetition(d, r):
    model = generate_dem("repetition", d, r, 0.01)
    theta = np.random.default_rng(d * 10 + r).uniform(0.01, 0.3, model.n_mechanisms)
    syn, p = brute_table(model, theta)
    assert agree_with_brute(decode_planar(model, theta, syn).predicted_logical, p)
    assert agree_with_brute(decode_tn(model, theta, syn).predicted_logical, p)


def test_tn_decoder_matches_brute_force_surface():
    rng = np.random.default_rng(4)
    model = truncate(generate_dem("surface", 3, 2, 0.01), 18, rng)
    theta = rng.uniform(0.01, 0.3, model.n_mechanisms)
    syn, p = brute_table(model, theta)
    lik = TNLikelihood(model, strategy="positive")
    res = decode_tn(model, theta, syn, lik)
    assert agree_with_brute(res.predicted_logical, p)
    np.testing.assert_allclose(res.log_odds, np.log(p[:, 0]) - np.log(p[:, 1]), rtol=1e-8, atol=1e-8)


def test_cross_backend_agreement():
    model = generate_dem("repetition", 5, 2, 0.02)
    batch = sample_shots(model, 1000, seed=7)
    a = decode_planar(model, model.priors, batch)
    b = decode_tn(model, model.priors, batch)
    close = np.abs(a.log_odds) < 1e-9
    assert np.all((a.predicted_logical == b.predicted_logical) | close)
    np.testing.assert_allclose(a.log_odds, b.log_odds, rtol=1e-8, atol=1e-10)


def test_cosets_sum_to_likelihood():
    from qec_mle.planar import PlanarLikelihood

    model = generate_dem("repetition", 3, 3, 0.01)
    theta = np.random.default_rng(1).uniform(0.01, 0.3, model.n_mechanisms)
    syn = all_syndromes(model.n_detectors)[::7]
    for lik in (PlanarLikelihood(model), TNLikelihood(model, strategy="positive")):
        joint = lik.log_joint(theta, syn)
        np.testing.assert_allclose(np.logaddexp(joint[:, 0], joint[:, 1]), lik.log_prob(theta, syn), rtol=1e-8)
    for s, row in zip(syn[:5], TNLikelihood(model, strategy="positive").log_joint(theta, syn[:5])):
        np.testing.assert_allclose(np.exp(row), brute_joint(model, s, theta), rtol=1e-8)


def test_unknown_decoder():
    with pytest.raises(ValueError):
        decode(generate_dem("repetition", 3, 1, 0.01), np.full(9, 0.1), np.zeros((1, 4)), "mwpm")


# ---------------------------------------------------------------------------
# error rates


def test_wilson_against_closed_form():
    lo, hi = wilson_interval(10, 100)
    assert lo == pytest.approx(0.05522854, abs=1e-6)
    assert hi == pytest.approx(0.17436566, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10**6), st.data())
def test_wilson_contains_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_wilson_matches_scipy():
    ci = binomtest(37, 500).proportion_ci(0.95, method="wilson")
    np.testing.assert_allclose(wilson_interval(37, 500), (ci.low, ci.high), rtol=1e-10)


def test_per_round_rate():
    assert per_round_rate(0.1, 1) == pytest.approx(0.1)
    assert per_round_rate(0.0, 5) == 0.0
    p = 0.01
    total = 0.5 * (1 - (1 - 2 * p) ** 5)
    assert per_round_rate(total, 5) == pytest.approx(p, rel=1e-12)
    assert per_round_rate(0.6, 3) == 0.5


def test_perfect_decoder_report():
    labels = np.array([0, 1, 1, 0])
    rep = ler_report(labels, labels, rounds=3)
    assert rep.ler == 0 and rep.failures == 0 and rep.per_round == 0


def test_random_guessing_calibration():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, 10_000)
    rep = ler_report(rng.integers(0, 2, 10_000), labels)
    assert rep.wilson_low <= 0.5 <= rep.wilson_high


def test_report_json_and_overlap():
    a = LerReport(100, 10, 0.1, 0.05, 0.17, None)
    b = LerReport(100, 30, 0.3, 0.22, 0.4, None)
    assert not a.overlaps(b)
    assert '"ler": 0.1' in a.to_json()


def test_evaluate_requires_labels():
    model = generate_dem("repetition", 3, 1, 0.01)
    with pytest.raises(ValueError, match="labels"):
        evaluate_ler(model, model.priors, ShotBatch(np.zeros((2, 4))))


def test_evaluate_without_rounds_warns():
    model = DetectorErrorModel.from_mechanisms([(0.1, [0], True), (0.05, [0, 1], False)], 2)
    batch = sample_shots(model, 500, seed=1)
    with pytest.warns(UserWarning, match="round"):
        rep = evaluate_ler(model, model.priors, batch)
    assert rep.per_round is None


def test_true_priors_not_worse_than_perturbed():
    model = generate_dem("repetition", 5, 3, 0.03)
    batch = sample_shots(model, 20_000, seed=2)
    from qec_mle.mle import perturb_priors

    bad = perturb_priors(model.priors, 4.0, seed=3)
    good_rep = evaluate_ler(model, model.priors, batch, "planar")
    bad_rep = evaluate_ler(model, bad, batch, "planar")
    assert good_rep.failures <= bad_rep.failures
