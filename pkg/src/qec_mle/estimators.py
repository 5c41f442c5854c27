"""Estimator-style wrappers around prior training and decoding."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .decode import decode
from .dem import DetectorErrorModel, ShotBatch
from .mle import PriorParams, TrainConfig, make_backend, nll, train


def _check_syndromes(X, model: DetectorErrorModel) -> np.ndarray:
    X = check_array(X, dtype=None, ensure_min_samples=1)
    if X.shape[1] != model.n_detectors:
        raise ValueError(f"X has {X.shape[1]} columns, model has {model.n_detectors} detectors")
    if not np.isin(X, (0, 1)).all():
        raise ValueError("X must hold 0/1 detector outcomes")
    return X.astype(np.uint8)


class PriorEstimator(BaseEstimator):
    """Learns mechanism priors from syndrome samples by maximum likelihood.

    Args:
        model: Model whose mechanisms are trained; its priors are the initial values.
        backend: ``"planar"`` or ``"tn"``.
        epochs: Epoch budget.
        batch_size: Shots per step.
        learning_rate: Step size on the logits.
        optimizer: ``"adam"`` or ``"sgd"``.
        seed: Shuffle seed.
        window: Convergence window.
        tolerance: Convergence tolerance.
    """

    def __init__(
        self,
        model: DetectorErrorModel | None = None,
        backend: str = "planar",
        epochs: int = 500,
        batch_size: int = 10_000,
        learning_rate: float = 1e-3,
        optimizer: str = "adam",
        seed: int = 0,
        window: int = 20,
        tolerance: float = 1e-4,
    ):
        self.model = model
        self.backend = backend
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.seed = seed
        self.window = window
        self.tolerance = tolerance

    def _config(self, n: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=min(self.batch_size, n),
            learning_rate=self.learning_rate,
            optimizer=self.optimizer,
            seed=self.seed,
            window=self.window,
            tolerance=self.tolerance,
        )

    def fit(self, X, y=None, theta_ref: np.ndarray | None = None):
        """Train on syndromes ``X`` of shape ``(N, m)``.

        Args:
            X: Detector outcomes.
            y: Ignored.
            theta_ref: Reference priors for the relative-error trace.
        """
        if self.model is None:
            raise ValueError("model must be set before fit")
        X = _check_syndromes(X, self.model)
        self.likelihood_ = make_backend(self.model, self.backend)
        init = PriorParams.from_theta(self.model.priors, self.backend)
        params, self.trace_ = train(self.model, ShotBatch(X), init, self._config(X.shape[0]), theta_ref, self.likelihood_)
        self.theta_ = params.theta
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "theta_"):
            raise NotFittedError("PriorEstimator is not fitted yet; call fit first")

    def fitted_model(self) -> DetectorErrorModel:
        """The model with trained priors."""
        self._check_fitted()
        return self.model.with_priors(self.theta_)

    def score_samples(self, X) -> np.ndarray:
        """``log p(s)`` of each shot under the trained priors."""
        self._check_fitted()
        return self.likelihood_.log_prob(self.theta_, _check_syndromes(X, self.model))

    def score(self, X, y=None) -> float:
        """Mean log-likelihood (the negated NLL)."""
        return -nll(self.score_samples(X))


class MLDecoder(ClassifierMixin, BaseEstimator):
    """Exact maximum-likelihood decoder predicting the logical bit from a syndrome.

    ``fit`` only validates and stores the model; priors are not learned here.

    Args:
        model: Model with the priors to decode with.
        backend: ``"planar"`` or ``"tn"``.
    """

    def __init__(self, model: DetectorErrorModel | None = None, backend: str = "tn"):
        self.model = model
        self.backend = backend

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("model must be set before fit")
        if X is not None:
            _check_syndromes(X, self.model)
        self.likelihood_ = make_backend(self.model, self.backend) if self.model.has_logical else None
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = self.model.n_detectors
        return self

    def _check_fitted(self):
        if not hasattr(self, "classes_"):
            raise NotFittedError("MLDecoder is not fitted yet; call fit first")

    def decision_function(self, X) -> np.ndarray:
        """``log p(s, L=1) - log p(s, L=0)``; positive favours a logical flip."""
        self._check_fitted()
        res = decode(self.model, self.model.priors, _check_syndromes(X, self.model), self.backend, self.likelihood_)
        return -res.log_odds

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        res = decode(self.model, self.model.priors, _check_syndromes(X, self.model), self.backend, self.likelihood_)
        return res.predicted_logical
