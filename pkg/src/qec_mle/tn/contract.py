"""Batched execution of contraction trees with scale tracking and reverse mode.

Every pairwise contraction is reduced to one batched matrix product: indices
shared and kept become batch dimensions, shared and summed ones the inner
dimension, the rest the row and column dimensions. After each contraction the
intermediate is divided by its largest magnitude (per shot when it carries
the batch axis) and the logarithm of that factor is accumulated, so values far
below the double-precision range stay representable.

The backward pass treats those factors as constants. The output is a
multilinear function of the leaves, so dividing intermediates by constants
rescales the output by a constant and leaves ``d log|value|`` unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import BATCH, HADAMARD, BoundSyndromes, TensorNetwork
from .tree import ContractionTree, analyze

CHECKPOINT_ELEMS = 1 << 24


class MissingForwardCacheError(RuntimeError):
    """Backward called on a result computed without its forward cache."""


def _pair(x: np.ndarray, ix: tuple, y: np.ndarray, iy: tuple, out: tuple, dims: dict) -> np.ndarray:
    """Contract two tensors with hyper-index semantics into index order ``out``.

    Indices of ``out`` held by neither operand are broadcast.
    """
    sx, sy = set(ix), set(iy)
    so = set(out)
    drop_x = tuple(k for k, i in enumerate(ix) if i not in sy and i not in so)
    if drop_x:
        x = x.sum(axis=drop_x)
        ix = tuple(i for i in ix if i in sy or i in so)
    drop_y = tuple(k for k, i in enumerate(iy) if i not in sx and i not in so)
    if drop_y:
        y = y.sum(axis=drop_y)
        iy = tuple(i for i in iy if i in sx or i in so)
    sx, sy = set(ix), set(iy)
    batch = [i for i in ix if i in sy and i in so]
    contr = [i for i in ix if i in sy and i not in so]
    left = [i for i in ix if i not in sy]
    right = [i for i in iy if i not in sx]
    px = {i: k for k, i in enumerate(ix)}
    py = {i: k for k, i in enumerate(iy)}
    size = lambda idx: int(np.prod([dims[i] for i in idx], dtype=np.int64))  # noqa: E731
    xb = x.transpose([px[i] for i in batch + left + contr]).reshape(size(batch), size(left), size(contr))
    yb = y.transpose([py[i] for i in batch + contr + right]).reshape(size(batch), size(contr), size(right))
    z = np.matmul(xb, yb).reshape([dims[i] for i in batch + left + right])
    have = batch + left + right
    missing = [i for i in out if i not in have]
    if missing:
        z = z.reshape(z.shape + (1,) * len(missing))
        z = np.broadcast_to(z, z.shape[: len(have)] + tuple(dims[i] for i in missing))
        have = have + missing
    pos = {i: k for k, i in enumerate(have)}
    return np.ascontiguousarray(z.transpose([pos[i] for i in out]))


@dataclass
class ContractionResult:
    """Per-shot outputs of one contraction.

    Attributes:
        log_abs: ``log |value|`` including all scale factors (``-inf`` for zero).
        sign: Sign of the value (``0`` for zero).
    """

    log_abs: np.ndarray
    sign: np.ndarray
    _tape: dict | None = field(default=None, repr=False)

    @property
    def value(self) -> np.ndarray:
        return self.sign * np.exp(self.log_abs)


class _Plan:
    """Index bookkeeping for one (network, tree) pair."""

    def __init__(self, network: TensorNetwork, tree: ContractionTree):
        info = analyze([leaf.indices for leaf in network.leaves], tree)
        self.leaf_idx = [leaf.indices for leaf in network.leaves]
        self.out = []
        for k, node in enumerate(info):
            if k < tree.n_leaves:
                self.out.append(tuple(self.leaf_idx[k]))
            else:
                self.out.append(((BATCH,) if node.batched else ()) + node.indices)
        self.batched = [node.batched for node in info]


def _leaf_values(network: TensorNetwork, theta, bound: BoundSyndromes) -> list[np.ndarray]:
    probs = network.prob_values(theta)
    out = []
    for leaf in network.leaves:
        if leaf.kind == "prob":
            out.append(probs[leaf.mechanism])
        elif leaf.kind == "hadamard":
            out.append(HADAMARD)
        else:
            out.append(bound.signs[:, leaf.detector, :])
    return out


def _rescale(z: np.ndarray, batched: bool) -> tuple[np.ndarray, np.ndarray | float]:
    if batched:
        flat = np.abs(z.reshape(z.shape[0], -1))
        s = flat.max(axis=1) if flat.shape[1] else np.ones(z.shape[0])
        s = np.where(s > 0, s, 1.0)
        return z / s.reshape((-1,) + (1,) * (z.ndim - 1)), s
    s = float(np.max(np.abs(z))) if z.size else 1.0
    s = s if s > 0 else 1.0
    return z / s, s


def contract(
    network: TensorNetwork,
    tree: ContractionTree,
    bound: BoundSyndromes,
    theta: np.ndarray | None = None,
    keep_tape: bool = False,
    checkpoint_elems: int = CHECKPOINT_ELEMS,
) -> ContractionResult:
    """Contract a bound network along ``tree``.

    Args:
        network: Likelihood or decoder network.
        tree: Contraction tree over its leaves.
        bound: Sign vectors of the shots.
        theta: Priors (defaults to the network's). Not clamped, so values
            below the usual floor may be passed directly.
        keep_tape: Keep what :func:`backward` needs.
        checkpoint_elems: Intermediates larger than this are not kept on the
            tape and are recomputed during the backward pass.

    Returns:
        ``log |value| + sum of log scales + global_log_scale`` and the sign,
        per shot.
    """
    if tree.n_leaves != network.n_leaves:
        raise ValueError(f"tree has {tree.n_leaves} leaves, network has {network.n_leaves}")
    plan = _Plan(network, tree)
    n_shots = bound.n_shots
    dims = {BATCH: n_shots}
    dims.update({x: 2 for x in network.index_holders})
    theta_arr = network.theta if theta is None else np.asarray(theta, dtype=np.float64)
    vals: list[np.ndarray | None] = _leaf_values(network, theta_arr, bound)
    scales: list[np.ndarray | float] = [1.0] * tree.n_leaves
    log_total = np.zeros(n_shots)
    for k, (a, b) in enumerate(tree.pairs):
        v = tree.n_leaves + k
        z = _pair(vals[a], plan.out[a], vals[b], plan.out[b], plan.out[v], dims)
        z, s = _rescale(z, plan.batched[v])
        vals.append(z)
        scales.append(s)
        log_total += np.log(s)
        for c in (a, b):
            if c >= tree.n_leaves and (not keep_tape or vals[c].size > checkpoint_elems):
                vals[c] = None
    root = tree.root
    if tree.pairs:
        z = vals[root]
    else:
        z = vals[0].reshape(n_shots, -1).sum(axis=1) if plan.batched[0] else vals[0].sum()
    if z.ndim == 0:
        z = np.full(n_shots, float(z))
    z = z.reshape(n_shots)
    sign = np.sign(z)
    with np.errstate(divide="ignore"):
        log_abs = np.log(np.abs(z)) + log_total + network.global_log_scale
    tape = None
    if keep_tape:
        tape = {"plan": plan, "vals": vals, "scales": scales, "root": z, "dims": dims, "theta": theta_arr, "bound": bound}
    return ContractionResult(log_abs, sign, tape)


def backward(
    network: TensorNetwork,
    tree: ContractionTree,
    result: ContractionResult,
    upstream: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of ``sum_k w_k log|value_k|`` with respect to the priors.

    Args:
        network: Network used in the forward pass.
        tree: Tree used in the forward pass.
        result: Output of :func:`contract` with ``keep_tape=True``.
        upstream: Per-shot weights ``w`` (default all ones).

    Raises:
        MissingForwardCacheError: If the forward pass kept no tape.
    """
    tape = result._tape
    if tape is None:
        raise MissingForwardCacheError("contract() was called without keep_tape=True")
    plan: _Plan = tape["plan"]
    vals = tape["vals"]
    scales = tape["scales"]
    dims = tape["dims"]
    n_shots = result.log_abs.size
    w = np.ones(n_shots) if upstream is None else np.asarray(upstream, dtype=np.float64).reshape(n_shots)
    root_val = tape["root"]
    with np.errstate(divide="ignore", invalid="ignore"):
        g_root = np.where(root_val != 0, w / root_val, 0.0)
    n_leaves = tree.n_leaves
    grad = np.zeros(network.n_mechanisms)
    if not tree.pairs:
        return grad
    children = {n_leaves + k: p for k, p in enumerate(tree.pairs)}

    def value(v: int) -> np.ndarray:
        if vals[v] is None:
            a, b = children[v]
            z = _pair(value(a), plan.out[a], value(b), plan.out[b], plan.out[v], dims)
            s = scales[v]
            vals[v] = z / (s.reshape((-1,) + (1,) * (z.ndim - 1)) if plan.batched[v] else s)
        return vals[v]

    adj: dict[int, np.ndarray] = {}
    root = tree.root
    adj[root] = g_root if plan.batched[root] else np.asarray(g_root.sum())
    probs_adj = np.zeros((network.n_mechanisms, 2))
    for k in range(len(tree.pairs) - 1, -1, -1):
        v = n_leaves + k
        a, b = tree.pairs[k]
        g = adj.pop(v)
        s = scales[v]
        g = g / (s.reshape((-1,) + (1,) * (g.ndim - 1)) if plan.batched[v] else s)
        va, vb = value(a), value(b)
        for child, other, ov in ((a, b, vb), (b, a, va)):
            ga = _pair(g, plan.out[v], ov, plan.out[other], plan.out[child], dims)
            if child < n_leaves:
                leaf = network.leaves[child]
                if leaf.kind == "prob":
                    probs_adj[leaf.mechanism] += ga
            else:
                adj[child] = ga
        vals[v] = None
    second = network.logical_sign if network.decoder else np.ones(network.n_mechanisms)
    grad = -probs_adj[:, 0] + second * probs_adj[:, 1]
    return grad
