"""Walsh–Hadamard tensor networks for syndrome likelihoods and decoding.

Every detector parity constraint ``[e_1 + ... + e_k = s_j mod 2]`` is an XOR
tensor. Writing it as ``1/2 sum_a prod_l H[a, l]`` with a central index ``a``
and the 2x2 Hadamard ``H`` leaves only three kinds of leaves:

* ``prob`` on ``e_i``: ``(1 - t_i, t_i)``, or ``(1 - t_i, -t_i)`` in decoder
  networks when mechanism ``i`` flips the logical;
* ``hadamard`` on ``(a_j, e_i)`` for each incidence;
* ``sign`` on ``(batch, a_j)``: rows ``(1, (-1)^{s_j})``.

Index ``e_i`` has id ``i``, index ``a_j`` has id ``n + j`` and the shot axis
has id ``BATCH``. The ``1/2`` per detector lives in ``global_log_scale``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ..dem import DetectorErrorModel, ShotBatch

BATCH = -1
HADAMARD = np.array([[1.0, 1.0], [1.0, -1.0]])
KINDS = ("prob", "hadamard", "sign")


class DegenerateDecodingError(ValueError):
    """The model has no mechanism flipping the logical observable."""


@dataclass(frozen=True)
class Leaf:
    """One leaf tensor.

    Attributes:
        kind: ``"prob"``, ``"hadamard"`` or ``"sign"``.
        indices: Index ids in axis order.
        mechanism: Mechanism id (``-1`` for sign leaves).
        detector: Detector id (``-1`` for prob leaves).
    """

    kind: str
    indices: tuple[int, ...]
    mechanism: int = -1
    detector: int = -1


@dataclass(frozen=True)
class TensorNetwork:
    """Likelihood or decoder network of one model.

    Attributes:
        model: Source model.
        theta: Priors used for the prob leaves.
        leaves: Leaf tensors; prob leaves first, then Hadamards, then signs.
        decoder: Whether logical mechanisms carry the sign-flipped vector.
        global_log_scale: ``-m log 2``.
    """

    model: DetectorErrorModel
    theta: np.ndarray
    leaves: tuple[Leaf, ...]
    decoder: bool = False
    global_log_scale: float = 0.0
    logical_sign: np.ndarray = field(default=None, repr=False)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def n_mechanisms(self) -> int:
        return self.model.n_mechanisms

    @property
    def n_detectors(self) -> int:
        return self.model.n_detectors

    @cached_property
    def index_holders(self) -> dict[int, tuple[int, ...]]:
        """Leaves holding each index (the batch index excluded)."""
        out: dict[int, list[int]] = {}
        for k, leaf in enumerate(self.leaves):
            for x in leaf.indices:
                if x != BATCH:
                    out.setdefault(x, []).append(k)
        return {x: tuple(v) for x, v in out.items()}

    @cached_property
    def sign_leaf(self) -> np.ndarray:
        """Leaf id of each detector's sign vector."""
        out = np.full(self.n_detectors, -1, dtype=np.int64)
        for k, leaf in enumerate(self.leaves):
            if leaf.kind == "sign":
                out[leaf.detector] = k
        return out

    def structure_hash(self) -> str:
        """Hash of the index structure; trees depend on nothing else."""
        doc = json.dumps([leaf.indices for leaf in self.leaves]).encode()
        return hashlib.sha256(doc).hexdigest()[:20]

    def prob_values(self, theta: np.ndarray | None = None) -> np.ndarray:
        """``(n, 2)`` prob-leaf values for the given priors (unclamped)."""
        t = self.theta if theta is None else np.asarray(theta, dtype=np.float64)
        second = t * self.logical_sign if self.decoder else t
        return np.stack([1.0 - t, second], axis=1)

    def to_json(self) -> dict:
        """Structure dump: leaves with their kinds, indices and dimensions."""
        n = self.n_mechanisms

        def name(x: int) -> str:
            return "batch" if x == BATCH else (f"e{x}" if x < n else f"a{x - n}")

        return {
            "kind": "decoder" if self.decoder else "likelihood",
            "n_mechanisms": n,
            "n_detectors": self.n_detectors,
            "global_log_scale": self.global_log_scale,
            "indices": [name(x) for x in range(n + self.n_detectors)],
            "leaves": [
                {"kind": leaf.kind, "indices": [name(x) for x in leaf.indices], "dims": [None if x == BATCH else 2 for x in leaf.indices]}
                for leaf in self.leaves
            ],
        }


def _build(model: DetectorErrorModel, theta: np.ndarray | None, decoder: bool) -> TensorNetwork:
    theta = model.priors if theta is None else np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.n_mechanisms,):
        raise ValueError(f"theta has shape {theta.shape}, expected ({model.n_mechanisms},)")
    n, m = model.n_mechanisms, model.n_detectors
    leaves = [Leaf("prob", (i,), mechanism=i) for i in range(n)]
    for i, mech in enumerate(model.mechanisms):
        for j in mech.detectors:
            leaves.append(Leaf("hadamard", (n + j, i), mechanism=i, detector=j))
    for j in range(m):
        leaves.append(Leaf("sign", (BATCH, n + j), detector=j))
    sign = np.where(model.logical_mask, -1.0, 1.0)
    return TensorNetwork(model, theta, tuple(leaves), decoder, -m * float(np.log(2.0)), sign)


def build_likelihood_network(model: DetectorErrorModel, theta: np.ndarray | None = None) -> TensorNetwork:
    """Network whose bound contraction is ``p(s)`` for each shot."""
    return _build(model, theta, decoder=False)


def build_decoder_network(model: DetectorErrorModel, theta: np.ndarray | None = None) -> TensorNetwork:
    """Network whose bound contraction is ``p(s, L=0) - p(s, L=1)``.

    Raises:
        DegenerateDecodingError: If no mechanism flips the logical.
    """
    if not model.has_logical:
        raise DegenerateDecodingError("no mechanism flips the logical observable; decoding is trivial")
    return _build(model, theta, decoder=True)


@dataclass(frozen=True)
class BoundSyndromes:
    """Sign-vector values for a batch of syndromes.

    Attributes:
        signs: ``(N, m, 2)`` rows ``(1, (-1)^{s_j})``.
    """

    signs: np.ndarray

    @property
    def n_shots(self) -> int:
        return int(self.signs.shape[0])


def bind_syndromes(network: TensorNetwork, batch: ShotBatch | np.ndarray) -> BoundSyndromes:
    """Sign vectors for every shot of ``batch``.

    Raises:
        ValueError: If the syndrome width differs from the model's detector count.
    """
    s = batch.syndromes if isinstance(batch, ShotBatch) else np.atleast_2d(np.asarray(batch))
    if s.ndim != 2 or s.shape[1] != network.n_detectors:
        raise ValueError(f"syndromes have width {s.shape[-1]}, network has {network.n_detectors} detectors")
    signs = np.ones(s.shape + (2,))
    signs[:, :, 1] = 1.0 - 2.0 * (s & 1)
    return BoundSyndromes(signs)
