"""Planar (Kac–Ward) backend for graphlike models."""

from .dual import DualSpinGraph, NotGraphlikeError, build_dual_graph, build_matching_graph, couplings_from
from .embedding import PlanarityError, RotationSystem, rotation_from_angles
from .kacward import KacWardError, KacWardOperator, kac_ward_log_z
from .likelihood import (
    PartitionResult,
    PlanarLikelihood,
    grad_log_prob_planar,
    kac_ward_log_partition,
    log_prob_planar,
)

__all__ = [
    "DualSpinGraph",
    "KacWardError",
    "KacWardOperator",
    "NotGraphlikeError",
    "PartitionResult",
    "PlanarLikelihood",
    "PlanarityError",
    "RotationSystem",
    "build_dual_graph",
    "build_matching_graph",
    "couplings_from",
    "grad_log_prob_planar",
    "kac_ward_log_partition",
    "kac_ward_log_z",
    "log_prob_planar",
    "rotation_from_angles",
]
