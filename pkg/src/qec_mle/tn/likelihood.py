"""Batched syndrome likelihoods and coset values from the tensor-network backend."""

from __future__ import annotations

from functools import cached_property

import numpy as np

from ..dem import DetectorErrorModel
from .contract import backward, contract
from .network import bind_syndromes, build_decoder_network, build_likelihood_network
from .pathfind import SAConfig, optimize_path, positive_tree
from .tree import ContractionTree, tree_cost

TREE_STRATEGIES = ("anneal", "positive")
DEFAULT_SA = SAConfig(proposals_per_temperature=500, max_temperatures=40)
CHUNK_ELEMS = 1 << 24


class TNLikelihood:
    """Exact likelihoods of any model through one shared contraction tree.

    Args:
        model: Detector error model.
        tree: Precomputed tree; built on demand otherwise.
        strategy: ``"anneal"`` searches a cheap tree; ``"positive"`` uses a tree
            free of cancellation (exact for tiny probabilities, small models only).
        sa_config: Path-search settings for ``"anneal"``.
        chunk_shots: Shots per contraction (also the batch size the path cost assumes).
    """

    def __init__(
        self,
        model: DetectorErrorModel,
        tree: ContractionTree | None = None,
        strategy: str = "anneal",
        sa_config: SAConfig | None = None,
        chunk_shots: int = 1024,
    ):
        if strategy not in TREE_STRATEGIES:
            raise ValueError(f"strategy must be one of {TREE_STRATEGIES}")
        self.model = model
        self.strategy = strategy
        self.chunk_shots = int(chunk_shots)
        self.sa_config = sa_config or DEFAULT_SA
        self.network = build_likelihood_network(model)
        self._tree = tree

    @property
    def tree(self) -> ContractionTree:
        if self._tree is None:
            if self.strategy == "positive":
                self._tree = positive_tree(self.network)
            else:
                cfg = self.sa_config
                if cfg.batch_size != self.chunk_shots:
                    from dataclasses import replace

                    cfg = replace(cfg, batch_size=self.chunk_shots)
                self._tree = optimize_path(self.network, cfg)
        return self._tree

    @cached_property
    def decoder_network(self):
        return build_decoder_network(self.model)

    def _chunks(self, n: int) -> list[slice]:
        rep = tree_cost([leaf.indices for leaf in self.network.leaves], self.tree, 1)
        per_shot = max(rep.max_tensor_elems, 1.0)
        size = int(max(1, min(self.chunk_shots, CHUNK_ELEMS // per_shot)))
        return [slice(a, min(a + size, n)) for a in range(0, n, size)]

    def _unique(self, syndromes: np.ndarray):
        s = np.atleast_2d(np.asarray(syndromes, dtype=np.uint8))
        if s.shape[1] != self.model.n_detectors:
            raise ValueError(f"syndromes have {s.shape[1]} detectors, model has {self.model.n_detectors}")
        uniq, inverse = np.unique(s, axis=0, return_inverse=True)
        return uniq, inverse.reshape(-1)

    def log_prob(self, theta: np.ndarray, syndromes: np.ndarray, weights: np.ndarray | None = None, grad: bool = False):
        """``log p(s)`` per shot and optionally ``d/dtheta sum_k w_k log p(s_k)``."""
        theta = np.asarray(theta, dtype=np.float64)
        uniq, inverse = self._unique(syndromes)
        w = np.ones(inverse.size) if weights is None else np.asarray(weights, dtype=np.float64)
        uw = np.bincount(inverse, weights=w, minlength=uniq.shape[0])
        out = np.empty(uniq.shape[0])
        g = np.zeros(theta.size)
        tree = self.tree
        for sl in self._chunks(uniq.shape[0]):
            bound = bind_syndromes(self.network, uniq[sl])
            res = contract(self.network, tree, bound, theta, keep_tape=grad)
            out[sl] = res.log_abs
            if grad:
                g += backward(self.network, tree, res, uw[sl])
        if grad:
            return out[inverse], g
        return out[inverse]

    def log_joint(self, theta: np.ndarray, syndromes: np.ndarray) -> np.ndarray:
        """``log p(s, L)`` for ``L = 0, 1``, shape ``(N, 2)``."""
        _, _, joint = self.coset_values(theta, syndromes)
        return joint

    def coset_values(self, theta: np.ndarray, syndromes: np.ndarray):
        """``log p``, signed ``A = p0 - p1`` as ``(log|A|, sign)``, and ``log p(s, L)``.

        Returns:
            ``(log_p, (log_abs_A, sign_A), log_joint)`` per shot.
        """
        theta = np.asarray(theta, dtype=np.float64)
        uniq, inverse = self._unique(syndromes)
        log_p = self.log_prob(theta, uniq)
        if not self.model.has_logical:
            joint = np.stack([log_p, np.full_like(log_p, -np.inf)], axis=1)
            return log_p[inverse], (log_p[inverse], np.ones(inverse.size)), joint[inverse]
        dec = self.decoder_network
        log_a = np.empty(uniq.shape[0])
        sign_a = np.empty(uniq.shape[0])
        for sl in self._chunks(uniq.shape[0]):
            res = contract(dec, self.tree, bind_syndromes(dec, uniq[sl]), theta)
            log_a[sl] = res.log_abs
            sign_a[sl] = res.sign
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            ratio = np.clip(sign_a * np.exp(log_a - log_p), -1.0, 1.0)
            joint = np.stack([log_p + np.log1p(ratio) - np.log(2.0), log_p + np.log1p(-ratio) - np.log(2.0)], axis=1)
        return log_p[inverse], (log_a[inverse], sign_a[inverse]), joint[inverse]
