"""Estimator wrappers: parameters, validation, fit/predict."""

from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from qec_mle.dem import sample_shots
from qec_mle.estimators import MLDecoder, PriorEstimator
from qec_mle.generate import generate_dem
from qec_mle.mle import perturb_priors
from qec_mle.oracle import brute_ml_decode


@pytest.fixture(scope="module")
def data():
    model = generate_dem("repetition", 3, 2, 0.02)
    return model, sample_shots(model, 3000, seed=4)


def test_get_set_params_and_clone(data):
    model, _ = data
    est = PriorEstimator(model=model, epochs=3, learning_rate=0.01)
    params = est.get_params()
    assert params["epochs"] == 3 and params["model"] is model
    est.set_params(backend="tn")
    assert clone(est).get_params()["backend"] == "tn"


def test_unfitted_raises(data):
    model, batch = data
    with pytest.raises(NotFittedError):
        PriorEstimator(model=model).score(batch.syndromes)
    with pytest.raises(NotFittedError):
        MLDecoder(model=model).predict(batch.syndromes)


def test_input_validation(data):
    model, batch = data
    est = PriorEstimator(model=model, epochs=1)
    with pytest.raises(ValueError):
        est.fit(batch.syndromes[:, :-1])
    with pytest.raises(ValueError):
        est.fit(batch.syndromes * 2)
    with pytest.raises(ValueError):
        PriorEstimator().fit(batch.syndromes)


def test_fit_improves_score(data):
    model, batch = data
    start = model.with_priors(perturb_priors(model.priors, 2.0, seed=1))
    est = PriorEstimator(model=start, backend="tn", epochs=30, batch_size=1000, learning_rate=0.05, tolerance=0)
    est.fit(batch.syndromes, theta_ref=model.priors)
    assert est.theta_.shape == (model.n_mechanisms,)
    assert est.trace_.rel_err[-1] < est.trace_.initial_rel_err
    assert est.score(batch.syndromes) == pytest.approx(-est.trace_.nll[-1], rel=1e-2)
    assert est.fitted_model().n_mechanisms == model.n_mechanisms


@pytest.mark.parametrize("backend", ["planar", "tn"])
def test_decoder_predictions(data, backend):
    model, batch = data
    dec = MLDecoder(model=model, backend=backend).fit()
    X = batch.syndromes[:200]
    pred = dec.predict(X)
    want = [brute_ml_decode(model, s) for s in X[:30]]
    np.testing.assert_array_equal(pred[:30], want)
    np.testing.assert_array_equal(pred, (dec.decision_function(X) > 0).astype(np.uint8))
    assert 0 <= dec.score(X, batch.logicals[:200]) <= 1
