"""Maximum-likelihood estimation of detector error model priors and exact decoding."""

from .decode import DecodeResult, LerReport, decode, decode_planar, decode_tn, evaluate_ler, wilson_interval
from .dem import DetectorErrorModel, ErrorMechanism, ShotBatch, load_dem, parse_dem, sample_shots, save_dem, serialize_dem
from .estimators import MLDecoder, PriorEstimator
from .generate import generate_dem
from .mle import (
    PriorParams,
    TrainConfig,
    TrainTrace,
    broadcast_params,
    exact_nll_train,
    nll,
    perturb_priors,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "DecodeResult",
    "DetectorErrorModel",
    "ErrorMechanism",
    "LerReport",
    "MLDecoder",
    "PriorEstimator",
    "PriorParams",
    "ShotBatch",
    "TrainConfig",
    "TrainTrace",
    "broadcast_params",
    "decode",
    "decode_planar",
    "decode_tn",
    "evaluate_ler",
    "exact_nll_train",
    "generate_dem",
    "load_dem",
    "nll",
    "parse_dem",
    "perturb_priors",
    "sample_shots",
    "save_dem",
    "serialize_dem",
    "train",
    "wilson_interval",
]
