"""Exact maximum-likelihood decoding and logical error rate evaluation."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from .dem import DetectorErrorModel, ShotBatch

DECODERS = ("planar", "tn")


@dataclass
class DecodeResult:
    """Per-shot decoding output.

    Attributes:
        predicted_logical: Predicted logical bit per shot.
        log_odds: ``log p(s, L=0) - log p(s, L=1)`` per shot (may be infinite).
        ties: Shots whose two cosets had equal weight (predicted ``0``).
    """

    predicted_logical: np.ndarray
    log_odds: np.ndarray
    ties: np.ndarray

    @property
    def n_ties(self) -> int:
        return int(np.count_nonzero(self.ties))


def _syndromes(batch: ShotBatch | np.ndarray) -> np.ndarray:
    return np.atleast_2d(np.asarray(batch.syndromes if isinstance(batch, ShotBatch) else batch, dtype=np.uint8))


def _result(log_odds: np.ndarray, ties: np.ndarray) -> DecodeResult:
    log_odds = np.where(ties, 0.0, log_odds)
    return DecodeResult((log_odds < 0).astype(np.uint8), log_odds, ties)


def decode_planar(model: DetectorErrorModel, theta: np.ndarray, batch: ShotBatch | np.ndarray, likelihood=None) -> DecodeResult:
    """Planar-backend decoding by comparing the two pinned partition functions.

    Args:
        model: Graphlike model with a planar matching graph.
        theta: Priors.
        batch: Shots or a syndrome array.
        likelihood: Prebuilt :class:`PlanarLikelihood` to reuse.
    """
    from .planar import PlanarLikelihood

    lik = likelihood or PlanarLikelihood(model)
    joint = lik.log_joint(np.asarray(theta, dtype=np.float64), _syndromes(batch))
    with np.errstate(invalid="ignore"):
        log_odds = joint[:, 0] - joint[:, 1]
    ties = (joint[:, 0] == joint[:, 1]) | np.isnan(log_odds)
    return _result(log_odds, ties)


def decode_tn(model: DetectorErrorModel, theta: np.ndarray, batch: ShotBatch | np.ndarray, likelihood=None) -> DecodeResult:
    """Tensor-network decoding from the sign of ``A = p0 - p1``.

    Args:
        model: Any model.
        theta: Priors.
        batch: Shots or a syndrome array.
        likelihood: Prebuilt :class:`TNLikelihood` to reuse.
    """
    syn = _syndromes(batch)
    if not model.has_logical:
        n = syn.shape[0]
        return DecodeResult(np.zeros(n, dtype=np.uint8), np.full(n, np.inf), np.zeros(n, dtype=bool))
    from .tn.likelihood import TNLikelihood

    lik = likelihood or TNLikelihood(model)
    _, (_, sign_a), joint = lik.coset_values(np.asarray(theta, dtype=np.float64), syn)
    with np.errstate(invalid="ignore"):
        log_odds = joint[:, 0] - joint[:, 1]
    ties = sign_a == 0
    log_odds = np.where(np.isnan(log_odds), np.where(sign_a > 0, np.inf, -np.inf), log_odds)
    # The sign of A is authoritative even when rounding flattens the joint.
    log_odds = np.where((sign_a < 0) & (log_odds >= 0), -np.finfo(float).tiny, log_odds)
    log_odds = np.where((sign_a > 0) & (log_odds <= 0), np.finfo(float).tiny, log_odds)
    return _result(log_odds, ties)


def decode(model: DetectorErrorModel, theta: np.ndarray, batch, decoder: str = "tn", likelihood=None) -> DecodeResult:
    """Dispatch to :func:`decode_planar` or :func:`decode_tn`."""
    if decoder == "planar":
        return decode_planar(model, theta, batch, likelihood)
    if decoder == "tn":
        return decode_tn(model, theta, batch, likelihood)
    raise ValueError(f"decoder must be one of {DECODERS}")


def wilson_interval(failures: int, shots: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval of a binomial proportion."""
    if shots <= 0:
        raise ValueError("shots must be positive")
    z = float(norm.ppf(0.5 + confidence / 2))
    p = failures / shots
    den = 1 + z * z / shots
    centre = (p + z * z / (2 * shots)) / den
    half = z * math.sqrt(p * (1 - p) / shots + z * z / (4 * shots * shots)) / den
    # the exact interval always contains p; clamp away rounding at k = 0 or k = n
    return min(p, max(0.0, centre - half)), max(p, min(1.0, centre + half))


def per_round_rate(ler: float, rounds: int) -> float:
    """``P_L = (1 - (1 - 2 ler)^(1/r)) / 2``; ``0.5`` at or beyond ``ler = 0.5``."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if ler >= 0.5:
        return 0.5
    return 0.5 * (1.0 - (1.0 - 2.0 * ler) ** (1.0 / rounds))


@dataclass
class LerReport:
    """Logical error rate of one decoder on labelled shots.

    Attributes:
        shots: Number of shots.
        failures: Wrong predictions.
        ler: ``failures / shots``.
        wilson_low: Lower end of the 95% Wilson interval.
        wilson_high: Upper end of the 95% Wilson interval.
        per_round: Per-round rate, ``None`` without round metadata.
        ties: Shots decoded as ties.
    """

    shots: int
    failures: int
    ler: float
    wilson_low: float
    wilson_high: float
    per_round: float | None
    ties: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def overlaps(self, other: LerReport) -> bool:
        return self.wilson_low <= other.wilson_high and other.wilson_low <= self.wilson_high


def ler_report(predicted: np.ndarray, labels: np.ndarray, rounds: int | None = None, ties: int = 0) -> LerReport:
    """Compare predictions with labels."""
    predicted = np.asarray(predicted).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if predicted.shape != labels.shape:
        raise ValueError("predictions and labels differ in length")
    n = int(labels.size)
    fails = int(np.count_nonzero(predicted.astype(np.uint8) != labels.astype(np.uint8)))
    ler = fails / n
    lo, hi = wilson_interval(fails, n)
    return LerReport(n, fails, ler, lo, hi, None if rounds is None else per_round_rate(ler, rounds), ties)


def evaluate_ler(
    model: DetectorErrorModel,
    theta: np.ndarray,
    batch: ShotBatch,
    decoder: str = "tn",
    likelihood=None,
) -> LerReport:
    """Decode labelled shots and report the logical error rate.

    Raises:
        ValueError: If the shots carry no logical labels.
    """
    if batch.logicals is None:
        raise ValueError("shots carry no logical labels")
    res = decode(model, theta, batch, decoder, likelihood)
    rounds = model.metadata.get("rounds")
    if rounds is None:
        warnings.warn("model has no round metadata; per-round rate omitted", stacklevel=2)
    return ler_report(res.predicted_logical, batch.logicals, None if rounds is None else int(rounds), res.n_ties)
