"""Exhaustive reference computations for small instances.

These routines share no code with the fast backends. They enumerate error
configurations, spin configurations or character sums directly.
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence

import numpy as np

from .dem import DetectorErrorModel

MAX_BRUTE_MECHANISMS = 24
MAX_BRUTE_SPINS = 22
_CHUNK = 1 << 16


def _detector_masks(model: DetectorErrorModel) -> tuple[list[int], list[int]]:
    dmask = []
    lbits = []
    for mech in model.mechanisms:
        x = 0
        for d in mech.detectors:
            x |= 1 << d
        dmask.append(x)
        lbits.append(int(mech.flips_logical))
    return dmask, lbits


def _syndrome_int(s: Sequence[int]) -> int:
    return sum(1 << j for j, b in enumerate(s) if b)


def _enumerate(model: DetectorErrorModel, theta: np.ndarray):
    """Yield (syndrome keys, logical bits, probabilities) chunk by chunk."""
    n = model.n_mechanisms
    if n > MAX_BRUTE_MECHANISMS:
        raise ValueError(f"brute force limited to n <= {MAX_BRUTE_MECHANISMS}, got {n}")
    m = model.n_detectors
    n_words = max(1, -(-m // 63))
    dmask, lbits = _detector_masks(model)
    words = np.array([[(x >> (63 * w)) & ((1 << 63) - 1) for w in range(n_words)] for x in dmask], dtype=np.int64)
    words = words.reshape(n, n_words)
    total = 1 << n
    for lo in range(0, total, _CHUNK):
        codes = np.arange(lo, min(total, lo + _CHUNK), dtype=np.int64)
        key = np.zeros((codes.size, n_words), dtype=np.int64)
        lg = np.zeros(codes.size, dtype=np.int64)
        prob = np.ones(codes.size, dtype=np.float64)
        for i in range(n):
            bit = (codes >> i) & 1
            on = bit.astype(bool)
            key[on] ^= words[i]
            lg ^= bit * lbits[i]
            prob *= np.where(on, theta[i], 1.0 - theta[i])
        yield key, lg, prob


def _key_of(s: Sequence[int], m: int) -> np.ndarray:
    x = _syndrome_int(s)
    n_words = max(1, -(-m // 63))
    return np.array([(x >> (63 * w)) & ((1 << 63) - 1) for w in range(n_words)], dtype=np.int64)


def brute_joint(model: DetectorErrorModel, syndrome: Sequence[int], theta: np.ndarray | None = None) -> tuple[float, float]:
    """``(p(s, L=0), p(s, L=1))`` by enumerating all ``2^n`` error configurations."""
    theta = model.priors if theta is None else np.asarray(theta, dtype=np.float64)
    target = _key_of(syndrome, model.n_detectors)
    parts: list[list[float]] = [[], []]
    for key, lg, prob in _enumerate(model, theta):
        hit = np.all(key == target, axis=1)
        parts[0].extend(prob[hit & (lg == 0)].tolist())
        parts[1].extend(prob[hit & (lg == 1)].tolist())
    return math.fsum(parts[0]), math.fsum(parts[1])


def brute_prob(model: DetectorErrorModel, syndrome: Sequence[int], theta: np.ndarray | None = None) -> float:
    """``p(s)`` by enumerating all ``2^n`` error configurations (``n <= 24``)."""
    p0, p1 = brute_joint(model, syndrome, theta)
    return p0 + p1


def brute_distribution(model: DetectorErrorModel, theta: np.ndarray | None = None) -> dict[int, tuple[float, float]]:
    """Full table ``{syndrome as int: (p(s, L=0), p(s, L=1))}`` over reachable syndromes."""
    theta = model.priors if theta is None else np.asarray(theta, dtype=np.float64)
    acc: dict[tuple[int, int], list[float]] = {}
    for key, lg, prob in _enumerate(model, theta):
        packed = key[:, 0].copy()
        if key.shape[1] > 1:
            packed = [tuple(r) for r in key.tolist()]
        else:
            packed = packed.tolist()
        for k, l, p in zip(packed, lg.tolist(), prob.tolist()):
            acc.setdefault((k if isinstance(k, int) else _words_to_int(k), l), []).append(p)
    out: dict[int, list[float]] = {}
    for (k, l), vals in acc.items():
        out.setdefault(k, [0.0, 0.0])[l] = math.fsum(vals)
    return {k: (v[0], v[1]) for k, v in out.items()}


def _words_to_int(words: Sequence[int]) -> int:
    return sum(int(w) << (63 * i) for i, w in enumerate(words))


def char_sum_prob(model: DetectorErrorModel, syndrome: Sequence[int], theta: np.ndarray | None = None) -> float:
    """``p(s)`` as a character sum over all ``2^m`` detector sign patterns.

    ``p(s) = 2^{-m} sum_a (-1)^{a.s} prod_i [(1 - t_i) + t_i (-1)^{|a & d_i|}]``.
    Accurate in absolute terms only; small probabilities lose relative precision.
    """
    theta = model.priors if theta is None else np.asarray(theta, dtype=np.float64)
    m = model.n_detectors
    if m > 24:
        raise ValueError("character sum limited to m <= 24")
    dmask, _ = _detector_masks(model)
    sint = _syndrome_int(syndrome)
    alphas = np.arange(1 << m, dtype=np.int64)
    chi = np.ones(alphas.size)
    for i, mask in enumerate(dmask):
        par = _popcount_parity(alphas & mask)
        chi *= np.where(par, 1.0 - 2.0 * theta[i], 1.0)
    sign = np.where(_popcount_parity(alphas & sint), -1.0, 1.0)
    return math.fsum((sign * chi).tolist()) / float(1 << m)


def _popcount_parity(x: np.ndarray) -> np.ndarray:
    return (np.bitwise_count(x.astype(np.uint64)) & 1).astype(bool)


def brute_ml_decode(model: DetectorErrorModel, syndrome: Sequence[int], theta: np.ndarray | None = None) -> int:
    """Maximum-likelihood logical class; ties go to 0."""
    p0, p1 = brute_joint(model, syndrome, theta)
    return int(p1 > p0)


def brute_partition(
    n_vertices: int,
    edges: Sequence[tuple[int, int]],
    couplings: Sequence[float],
    pinned: dict[int, int] | None = None,
) -> float:
    """Ising partition function ``sum_s exp(sum_e J_e s_u s_v)`` by enumeration.

    Args:
        n_vertices: Number of spins (at most 22).
        edges: Edge endpoints (self-loops allowed).
        couplings: Coupling per edge.
        pinned: Optional ``{vertex: +1 or -1}`` fixing some spins.

    Returns:
        ``log Z``.
    """
    if n_vertices > MAX_BRUTE_SPINS:
        raise ValueError(f"brute partition limited to {MAX_BRUTE_SPINS} spins")
    configs = np.arange(1 << n_vertices, dtype=np.int64)
    spins = 1 - 2 * ((configs[:, None] >> np.arange(n_vertices)) & 1)
    keep = np.ones(configs.size, dtype=bool)
    for v, val in (pinned or {}).items():
        keep &= spins[:, v] == val
    spins = spins[keep]
    energy = np.zeros(spins.shape[0])
    for (u, v), j in zip(edges, couplings):
        energy += j * spins[:, u] * spins[:, v]
    top = energy.max()
    return float(top + math.log(math.fsum(np.exp(energy - top).tolist())))


def fd_grad(f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-6, relative: bool = True) -> np.ndarray:
    """Central finite-difference gradient of a scalar function.

    Args:
        f: Function of a parameter vector.
        theta: Evaluation point.
        h: Step, relative to each coordinate when ``relative`` is set.
        relative: Scale the step by ``|theta_i|``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    g = np.zeros_like(theta)
    for i in range(theta.size):
        step = h * abs(theta[i]) if relative and theta[i] != 0 else h
        tp, tm = theta.copy(), theta.copy()
        tp[i] += step
        tm[i] -= step
        g[i] = (f(tp) - f(tm)) / (2.0 * step)
    return g
