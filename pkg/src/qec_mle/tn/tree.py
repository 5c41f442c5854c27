"""Contraction trees over hyper-index networks and their symbolic cost.

A tree is a list of pairwise contractions. Leaves are ``0..L-1``; the k-th
pair creates node ``L + k`` and the last pair is the root. An index is summed
at the lowest node whose subtree holds all of its holders; the batch index is
never summed. Only the index structure matters, so every function here takes
the tuple of leaf index tuples rather than tensor data.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

from .network import BATCH

BYTES_PER_ELEM = 8


class TreeError(ValueError):
    """Malformed contraction tree."""


@dataclass(frozen=True)
class CostWeights:
    """Weights of the scalar path loss.

    Attributes:
        w_mem: Weight of ``log2`` of the largest intermediate.
        w_acc: Weight of ``log2`` of the total memory traffic.
        memory_cap: Largest allowed intermediate in elements; bigger trees get
            infinite loss.
    """

    w_mem: float = 1.0
    w_acc: float = 0.2
    memory_cap: float = float(2**30)


@dataclass(frozen=True)
class CostReport:
    """Symbolic cost of executing one tree.

    Attributes:
        total_flops: Sum over contractions of the union index-space size.
        max_tensor_elems: Largest intermediate, in elements.
        total_access_bytes: Bytes read and written over all contractions.
        loss: ``log2 flops + w_mem log2 max + w_acc log2 access``.
    """

    total_flops: float
    max_tensor_elems: float
    total_access_bytes: float
    loss: float

    def to_json(self) -> dict:
        return asdict(self)


def path_loss(flops: float, max_elems: float, access_bytes: float, weights: CostWeights) -> float:
    """Scalar loss; ``inf`` above the memory cap."""
    if max_elems > weights.memory_cap:
        return math.inf
    return (
        math.log2(max(flops, 1.0))
        + weights.w_mem * math.log2(max(max_elems, 1.0))
        + weights.w_acc * math.log2(max(access_bytes, 1.0))
    )


@dataclass(frozen=True)
class ContractionTree:
    """Binary contraction tree.

    Attributes:
        n_leaves: Number of leaves.
        pairs: Children of internal node ``n_leaves + k`` at position ``k``.
    """

    n_leaves: int
    pairs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple((int(a), int(b)) for a, b in self.pairs))
        self.validate()

    @property
    def root(self) -> int:
        return self.n_leaves + len(self.pairs) - 1 if self.pairs else 0

    @property
    def n_nodes(self) -> int:
        return self.n_leaves + len(self.pairs)

    def validate(self) -> None:
        """Check that every node is used exactly once and children precede parents."""
        if self.n_leaves < 1:
            raise TreeError("tree needs at least one leaf")
        if len(self.pairs) != self.n_leaves - 1:
            raise TreeError(f"{self.n_leaves} leaves need {self.n_leaves - 1} contractions, got {len(self.pairs)}")
        used = [False] * (self.n_leaves + len(self.pairs))
        for k, (a, b) in enumerate(self.pairs):
            node = self.n_leaves + k
            for c in (a, b):
                if not 0 <= c < node:
                    raise TreeError(f"node {node} has invalid child {c}")
                if used[c]:
                    raise TreeError(f"node {c} is contracted twice")
                used[c] = True
            if a == b:
                raise TreeError(f"node {node} contracts {a} with itself")

    def to_json(self) -> dict:
        return {"n_leaves": self.n_leaves, "pairs": [list(p) for p in self.pairs]}

    @classmethod
    def from_json(cls, doc: dict) -> ContractionTree:
        return cls(int(doc["n_leaves"]), tuple(tuple(p) for p in doc["pairs"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))


@dataclass(frozen=True)
class NodeInfo:
    """Index bookkeeping of one tree node.

    Attributes:
        indices: Open (kept) indices, batch excluded, sorted.
        batched: Whether the node carries the batch axis.
        union: Indices of the pairwise contraction that made the node.
        summed: Indices summed at this node.
    """

    indices: tuple[int, ...]
    batched: bool
    union: tuple[int, ...]
    summed: tuple[int, ...]


def index_totals(leaf_indices) -> dict[int, int]:
    """Number of leaves holding each non-batch index."""
    total: dict[int, int] = {}
    for idx in leaf_indices:
        for x in idx:
            if x != BATCH:
                total[x] = total.get(x, 0) + 1
    return total


def leaf_open(idx: tuple[int, ...], total: dict[int, int]) -> dict[int, int]:
    """Open indices of a leaf with their in-subtree counts."""
    return {x: 1 for x in idx if x != BATCH and total[x] > 1}


def merge_open(oa: dict[int, int], ob: dict[int, int], total: dict[int, int]) -> tuple[dict[int, int], int]:
    """Open indices of a pairwise contraction and the size of its union."""
    if len(oa) < len(ob):
        oa, ob = ob, oa
    out = dict(oa)
    union = len(oa)
    for x, c in ob.items():
        have = out.get(x)
        if have is None:
            out[x] = c
            union += 1
        elif have + c == total[x]:
            del out[x]
        else:
            out[x] = have + c
    return out, union


def analyze(leaf_indices, tree: ContractionTree) -> list[NodeInfo]:
    """Open and summed index sets of every node (leaves first)."""
    leaf_indices = list(leaf_indices)
    if len(leaf_indices) != tree.n_leaves:
        raise TreeError(f"tree has {tree.n_leaves} leaves, network has {len(leaf_indices)}")
    total = index_totals(leaf_indices)
    opens: list[dict[int, int]] = []
    batched: list[bool] = []
    info: list[NodeInfo] = []
    for idx in leaf_indices:
        o = leaf_open(tuple(idx), total)
        opens.append(o)
        batched.append(BATCH in idx)
        summed = tuple(sorted(x for x in idx if x != BATCH and x not in o))
        info.append(NodeInfo(tuple(sorted(o)), BATCH in idx, tuple(sorted(x for x in idx if x != BATCH)), summed))
    for a, b in tree.pairs:
        o, _ = merge_open(opens[a], opens[b], total)
        union = set(opens[a]) | set(opens[b])
        opens.append(o)
        bt = batched[a] or batched[b]
        batched.append(bt)
        info.append(NodeInfo(tuple(sorted(o)), bt, tuple(sorted(union)), tuple(sorted(union - set(o)))))
    return info


def tree_cost(leaf_indices, tree: ContractionTree, batch_size: int = 1, weights: CostWeights = CostWeights()) -> CostReport:
    """Cost report of a tree given only the leaf index structure."""
    info = analyze(leaf_indices, tree)
    flops = 0.0
    access = 0.0
    biggest = 0.0

    def elems(node: NodeInfo) -> float:
        return float(2 ** len(node.indices)) * (batch_size if node.batched else 1)

    for k, (a, b) in enumerate(tree.pairs):
        node = info[tree.n_leaves + k]
        flops += float(2 ** len(node.union)) * (batch_size if node.batched else 1)
        size = elems(node)
        access += (elems(info[a]) + elems(info[b]) + size) * BYTES_PER_ELEM
        biggest = max(biggest, size)
    return CostReport(flops, biggest, access, path_loss(flops, biggest, access, weights))


def estimate_cost(network, tree: ContractionTree, batch_size: int = 1, weights: CostWeights = CostWeights()) -> CostReport:
    """Symbolic cost of contracting ``network`` along ``tree``.

    Args:
        network: A :class:`TensorNetwork`.
        tree: Contraction tree over its leaves.
        batch_size: Number of shots carried along the batch axis.
        weights: Loss weights.

    Raises:
        TreeError: If the tree does not match the network.
    """
    return tree_cost([leaf.indices for leaf in network.leaves], tree, batch_size, weights)
