"""Exact syndrome likelihoods of graphlike models via Kac–Ward determinants."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg

from ..dem import DetectorErrorModel, pure_error
from .dual import DualSpinGraph, build_dual_graph, couplings_from, dual_structure
from .precise import PreciseBase
from .kacward import KacWardOperator, _slogdet_lu, check_phase, kac_ward_log_z, log_cosh

LOG2 = float(np.log(2.0))
FIX_CHOICES = ("free", +1, -1)
FALLBACK_RESIDUE = 1e-12


@dataclass(frozen=True)
class PartitionResult:
    """Result of one Kac–Ward evaluation.

    Attributes:
        log_Z: Natural log of the partition function.
        grad_J: ``d log Z / d J`` per edge, if requested.
        const_term: ``sum_i log(t_i (1 - t_i)) / 2`` implied by ``|J|``.
    """

    log_Z: float
    grad_J: np.ndarray | None
    const_term: float


_OPERATORS: dict[int, tuple[object, KacWardOperator]] = {}


def _operator(emb) -> KacWardOperator:
    key = id(emb)
    hit = _OPERATORS.get(key)
    if hit is not None and hit[0] is emb:
        return hit[1]
    op = KacWardOperator(emb)
    if len(_OPERATORS) > 64:
        _OPERATORS.clear()
    _OPERATORS[key] = (emb, op)
    return op


def kac_ward_log_partition(graph: DualSpinGraph, fix_logical="free", grad: bool = False) -> PartitionResult:
    """Partition function of a dual spin graph.

    Args:
        graph: Dual spin graph.
        fix_logical: ``"free"``, ``+1`` (logical and auxiliary spins aligned)
            or ``-1`` (anti-aligned).
        grad: Also compute ``d log Z / d J``.
    """
    if fix_logical not in FIX_CHOICES:
        raise ValueError(f"fix_logical must be one of {FIX_CHOICES}")
    j = graph.couplings
    const = float(np.sum(-LOG2 - log_cosh(j)))
    if fix_logical == "free":
        out = kac_ward_log_z(_operator(graph.embedding), j, grad)
        sign = None
    else:
        sign = np.where(graph.logical_cut, -1.0, 1.0) if fix_logical == -1 else np.ones_like(j)
        out = kac_ward_log_z(_operator(graph.pinned_embedding), j * sign, grad)
    if not grad:
        return PartitionResult(float(out), None, const)
    log_z, g = out
    if sign is not None:
        g = g * sign
    return PartitionResult(float(log_z), g, const)


def log_prob_planar(model: DetectorErrorModel, theta: np.ndarray, syndrome: np.ndarray, e: np.ndarray | None = None) -> float:
    """``log p(s)`` of a single syndrome on a graphlike planar model."""
    e = pure_error(model, syndrome) if e is None else e
    graph = build_dual_graph(model, e, theta)
    res = kac_ward_log_partition(graph)
    return -LOG2 + res.log_Z + res.const_term


def grad_log_prob_planar(model: DetectorErrorModel, theta: np.ndarray, syndrome: np.ndarray) -> np.ndarray:
    """``d log p(s) / d theta`` of a single syndrome."""
    theta = np.asarray(theta, dtype=np.float64)
    e = pure_error(model, syndrome)
    graph = build_dual_graph(model, e, theta)
    res = kac_ward_log_partition(graph, grad=True)
    sigma = np.where(np.asarray(e, dtype=bool), -1.0, 1.0)
    q = theta * (1.0 - theta)
    return res.grad_J * (-sigma / (2.0 * q)) + (1.0 - 2.0 * theta) / (2.0 * q)


@dataclass
class _Base:
    """Factorization of ``I - K`` at all-positive couplings, reused across syndromes."""

    log_det: complex
    n_minus: np.ndarray
    q: np.ndarray | None
    q_diag: np.ndarray | None
    tanh: np.ndarray
    op: KacWardOperator
    theta: np.ndarray
    _precise: PreciseBase | None = None

    def precise(self) -> PreciseBase:
        if self._precise is None:
            self._precise = PreciseBase(self.op, self.theta)
        return self._precise


def _base(op: KacWardOperator, theta: np.ndarray, grad: bool) -> _Base:
    t = 1.0 - 2.0 * theta
    a = np.eye(2 * t.size) - op.phase * np.repeat(t, 2)[None, :]
    log_det, lu, piv = _slogdet_lu(a)
    inv = scipy.linalg.lu_solve((lu, piv), np.eye(a.shape[0])) if a.shape[0] else a
    n_minus = inv - np.eye(a.shape[0])
    q = qd = None
    if grad:
        q = inv @ op.phase
        qd = np.diagonal(q).copy()
    return _Base(log_det, n_minus, q, qd, t, op, theta)


def _flipped_half_edges(edges: np.ndarray) -> np.ndarray:
    return np.stack([2 * edges, 2 * edges + 1], axis=1).reshape(-1)


def _phase_residue(log_det: complex) -> float:
    return float(abs(np.angle(np.exp(1j * log_det.imag))))


def _log_det(base: _Base, sigma_edges: np.ndarray, grad: bool, threshold: float):
    """Double-precision result, redone in ball arithmetic when the phase residue is large."""
    log_det, tr = _evaluate(base, sigma_edges, grad)
    if _phase_residue(log_det) > threshold:
        flipped_edges = np.flatnonzero(sigma_edges < 0)
        precise = base.precise()
        log_det = complex(precise.log_det_flipped(_flipped_half_edges(flipped_edges)), 0.0)
        if grad:
            tr = precise.edge_traces(base.op, flipped_edges)
    return log_det, tr


def _evaluate(base: _Base, sigma_edges: np.ndarray, grad: bool):
    """``log det(I - K)`` for couplings ``sigma * J0`` via a low-rank update.

    Returns the complex log-determinant and, when ``grad`` is set, the real
    per-edge trace ``Re sum_{b in edge} [(I - K)^-1 Phi]_{bb}``.
    """
    f = _flipped_half_edges(np.flatnonzero(sigma_edges < 0))
    if f.size == 0:
        log_det = base.log_det
        diag = base.q_diag if grad else None
    else:
        c = np.eye(f.size) + 2.0 * base.n_minus[np.ix_(f, f)]
        ld_c, lu, piv = _slogdet_lu(c)
        log_det = base.log_det + ld_c
        diag = None
        if grad:
            # diag(N[:, F] C^{-1} Q[F, :]) with y = C^{-T} N[:, F]^T
            y = scipy.linalg.lu_solve((lu, piv), base.n_minus[:, f].T, trans=1)
            diag = base.q_diag - 2.0 * np.einsum("kb,kb->b", y, base.q[f, :])
    if not grad:
        return log_det, None
    return log_det, (diag[0::2] + diag[1::2]).real


class PlanarLikelihood:
    """Batched exact likelihoods for one graphlike model.

    The embedding and its Kac–Ward phases are built once. For each prior
    vector the matrix ``I - K`` at the all-positive couplings is factorized
    once; each syndrome then differs by the sign flips of its pure error and
    costs one small determinant of size twice the pure-error weight.

    Args:
        model: Graphlike model with detector coordinates.
        fallback_residue: Phase residue of ``log det`` above which a syndrome
            is recomputed in ball arithmetic. The residue tracks the absolute
            error of ``log p`` to within a small factor.
    """

    def __init__(self, model: DetectorErrorModel, fallback_residue: float = FALLBACK_RESIDUE):
        self.model = model
        self.fallback_residue = fallback_residue
        dual, logical, aux = dual_structure(model)
        self.dual = dual
        self.logical_spin = logical
        self.auxiliary_spin = aux
        self.free_op = KacWardOperator(dual)
        self.n_spins = dual.n_vertices

    @cached_property
    def pinned_op(self) -> KacWardOperator | None:
        if self.logical_spin < 0:
            return None
        return KacWardOperator(self.dual.merge_vertices(self.logical_spin, self.auxiliary_spin))

    @cached_property
    def logical_cut(self) -> np.ndarray:
        at = self.dual.ends == self.logical_spin
        return at[:, 0] ^ at[:, 1]

    def _unique(self, syndromes: np.ndarray):
        s = np.atleast_2d(np.asarray(syndromes, dtype=np.uint8))
        if s.shape[1] != self.model.n_detectors:
            raise ValueError(f"syndromes have {s.shape[1]} detectors, model has {self.model.n_detectors}")
        uniq, inverse = np.unique(s, axis=0, return_inverse=True)
        return uniq, inverse.reshape(-1)

    def log_prob(
        self,
        theta: np.ndarray,
        syndromes: np.ndarray,
        weights: np.ndarray | None = None,
        grad: bool = False,
    ):
        """Log-likelihoods of a batch of syndromes.

        Args:
            theta: Priors.
            syndromes: ``(N, m)`` syndromes.
            weights: Optional per-syndrome weights for the gradient.
            grad: Also return ``d/dtheta sum_k w_k log p(s_k)``.

        Returns:
            ``log p`` of shape ``(N,)``, and the gradient if requested.
        """
        theta = np.asarray(theta, dtype=np.float64)
        uniq, inverse = self._unique(syndromes)
        w = np.ones(inverse.size) if weights is None else np.asarray(weights, dtype=np.float64)
        uw = np.bincount(inverse, weights=w, minlength=uniq.shape[0])
        e0 = pure_error(self.model, uniq)
        base = _base(self.free_op, theta, grad)
        n = theta.size
        offset = (self.n_spins - 1 - n) * LOG2
        out = np.empty(uniq.shape[0])
        g_j = np.zeros(n)
        sig_sum = np.zeros(n)
        for k in range(uniq.shape[0]):
            sigma = np.where(e0[k].astype(bool), -1.0, 1.0)
            log_det, tr = _log_det(base, sigma, grad, self.fallback_residue)
            val = offset + 0.5 * log_det.real
            check_phase(log_det, val, f" (syndrome {k})")
            out[k] = val
            if grad and uw[k] != 0.0:
                t = sigma * base.tanh
                g_j += uw[k] * sigma * (t - 0.5 * (1.0 - t * t) * tr)
                sig_sum += uw[k]
        if not grad:
            return out[inverse]
        q = theta * (1.0 - theta)
        gradient = -g_j / (2.0 * q) + sig_sum * (1.0 - 2.0 * theta) / (2.0 * q)
        return out[inverse], gradient

    def log_joint(self, theta: np.ndarray, syndromes: np.ndarray) -> np.ndarray:
        """``log p(s, L)`` for ``L = 0, 1``, shape ``(N, 2)``."""
        theta = np.asarray(theta, dtype=np.float64)
        uniq, inverse = self._unique(syndromes)
        e0 = pure_error(self.model, uniq)
        l0 = (e0.astype(np.int64) @ self.model.logical_mask.astype(np.int64)) & 1
        out = np.full((uniq.shape[0], 2), -np.inf)
        n = theta.size
        if self.pinned_op is None:
            lp = self.log_prob(theta, uniq)
            out[np.arange(uniq.shape[0]), l0] = lp
            return out[inverse]
        base = _base(self.pinned_op, theta, False)
        offset = (self.n_spins - 2 - n) * LOG2
        for k in range(uniq.shape[0]):
            sigma = np.where(e0[k].astype(bool), -1.0, 1.0)
            for cls, sg in ((l0[k], sigma), (1 - l0[k], np.where(self.logical_cut, -sigma, sigma))):
                log_det, _ = _log_det(base, sg, False, self.fallback_residue)
                val = offset + 0.5 * log_det.real
                check_phase(log_det, val, f" (syndrome {k})")
                out[k, cls] = val
        return out[inverse]
