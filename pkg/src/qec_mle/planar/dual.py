"""From a graphlike detector error model to its planar dual Ising model.

The matching graph has one vertex per detector and one edge per mechanism.
Mechanisms touching a single detector attach to a boundary vertex; mechanisms
touching none (pure logical flips) join the two boundary sides. The drawing
uses detector coordinates ``(space, ..., round)`` as a 2D layout with the
boundary split into a left and a right vertex. Joining those two through the
outer face by a virtual edge and contracting it yields the matching graph with
a single boundary vertex, whose faces become the dual spins.

Error configurations consistent with a syndrome are ``e0`` plus a sum of face
boundaries, so summing over them is an Ising partition function on the faces
with couplings ``J_i = (-1)^{e0_i} * log((1 - t_i) / t_i) / 2``. The logical
parity of a face boundary is odd for exactly two faces, the logical spin and
the auxiliary spin; their relative orientation is the logical class relative
to ``e0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..dem import DetectorErrorModel
from .embedding import PlanarityError, RotationSystem, rotation_from_angles


class NotGraphlikeError(ValueError):
    """A mechanism flips more than two detectors."""


@dataclass(frozen=True)
class MatchingGraph:
    """Embedded matching graph of a graphlike model.

    Attributes:
        embedding: Rotation system; edge ``i < n`` is mechanism ``i``, an extra
            final edge (if present) is the virtual boundary join.
        virtual_edge: Index of the virtual edge or ``-1``.
        detector_vertex: Vertex id of each detector (``-1`` if untouched).
    """

    embedding: RotationSystem
    virtual_edge: int
    detector_vertex: np.ndarray


def _layout(model: DetectorErrorModel) -> np.ndarray:
    coords = model.detector_coords
    if any(len(c) < 2 for c in coords):
        raise PlanarityError("planar backend needs (space, round) detector coordinates")
    return np.array([(c[0], c[-1]) for c in coords], dtype=np.float64)


def build_matching_graph(model: DetectorErrorModel) -> MatchingGraph:
    """Embed the matching graph of a graphlike model from its detector layout.

    Raises:
        NotGraphlikeError: If a mechanism flips more than two detectors.
        PlanarityError: If the layout does not give a planar embedding.
    """
    for i, mech in enumerate(model.mechanisms):
        if len(mech.detectors) > 2:
            raise NotGraphlikeError(f"mechanism {i} flips {len(mech.detectors)} detectors")
    pos = _layout(model) if model.n_detectors else np.zeros((0, 2))
    used = sorted({d for mech in model.mechanisms for d in mech.detectors})
    vid = np.full(model.n_detectors, -1, dtype=np.int64)
    vid[used] = np.arange(len(used))
    xs = pos[used, 0] if used else np.zeros(1)
    ts = pos[used, 1] if used else np.zeros(1)
    x_lo, x_hi = float(xs.min()), float(xs.max())
    span = max(x_hi - x_lo, 1.0)
    t_mid = 0.5 * (float(ts.min()) + float(ts.max()))

    sides: list[int | None] = []
    for mech in model.mechanisms:
        if len(mech.detectors) == 1:
            x = pos[mech.detectors[0], 0]
            sides.append(0 if x - x_lo <= x_hi - x else 1)
        elif not mech.detectors:
            sides.append(2)
        else:
            sides.append(None)
    need = {0: any(s in (0, 2) for s in sides), 1: any(s in (1, 2) for s in sides)}
    bvid = {}
    bpos = {}
    n_v = len(used)
    for side, x in ((0, x_lo - span), (1, x_hi + span)):
        if need[side]:
            bvid[side] = n_v
            bpos[side] = (x, t_mid)
            n_v += 1

    vpos = np.zeros((n_v, 2))
    vpos[: len(used)] = pos[used]
    for side in bvid:
        vpos[bvid[side]] = bpos[side]

    ends = []
    angles = []
    for mech, side in zip(model.mechanisms, sides):
        if side is None:
            u, v = (int(vid[d]) for d in mech.detectors)
        elif side == 2:
            ends.append((bvid[0], bvid[1]))
            angles.extend([np.pi / 2, np.pi / 2])
            continue
        else:
            u, v = int(vid[mech.detectors[0]]), bvid[side]
        du = vpos[v] - vpos[u]
        ends.append((u, v))
        angles.extend([np.arctan2(du[1], du[0]), np.arctan2(-du[1], -du[0])])
    virtual = -1
    if 0 in bvid and 1 in bvid:
        virtual = len(ends)
        ends.append((bvid[0], bvid[1]))
        angles.extend([-np.pi / 2, -np.pi / 2])
    emb = rotation_from_angles(n_v, np.array(ends, dtype=np.int64).reshape(-1, 2), np.array(angles))
    emb.check_planar()
    return MatchingGraph(emb, virtual, vid)


@dataclass(frozen=True)
class DualSpinGraph:
    """Ising model on the faces of the embedded matching graph.

    Attributes:
        n_spins: Number of dual spins (faces).
        ends: ``(n, 2)`` spins joined by the dual edge of each mechanism.
        couplings: ``J_i`` per mechanism.
        embedding: Rotation system of the dual graph (edge ``i`` = mechanism ``i``).
        logical_spin: Spin whose face boundary flips the logical, or ``-1``.
        auxiliary_spin: The other such spin, or ``-1``.
    """

    n_spins: int
    ends: np.ndarray
    couplings: np.ndarray
    embedding: RotationSystem
    logical_spin: int
    auxiliary_spin: int

    @property
    def n_edges(self) -> int:
        return int(self.ends.shape[0])

    @cached_property
    def pinned_embedding(self) -> RotationSystem:
        """Embedding with the logical and auxiliary spins identified."""
        if self.logical_spin < 0:
            raise ValueError("model has no logical spin")
        return self.embedding.merge_vertices(self.logical_spin, self.auxiliary_spin)

    @cached_property
    def logical_cut(self) -> np.ndarray:
        """Edges with exactly one endpoint on the logical spin."""
        at = self.ends == self.logical_spin
        return at[:, 0] ^ at[:, 1]


def couplings_from(theta: np.ndarray, e: np.ndarray | None = None) -> np.ndarray:
    """``J_i = (-1)^{e_i} * log((1 - t_i) / t_i) / 2``."""
    theta = np.asarray(theta, dtype=np.float64)
    j = 0.5 * (np.log1p(-theta) - np.log(theta))
    if e is not None:
        j = np.where(np.asarray(e, dtype=bool), -j, j)
    return j


def dual_structure(model: DetectorErrorModel) -> tuple[RotationSystem, int, int]:
    """Dual rotation system and the (logical, auxiliary) spins of a model."""
    mg = build_matching_graph(model)
    drop = frozenset([mg.virtual_edge]) if mg.virtual_edge >= 0 else frozenset()
    dual, kept = mg.embedding.dual(drop)
    if not np.array_equal(kept, np.arange(model.n_mechanisms)):
        raise AssertionError("dual edge numbering must follow mechanisms")
    odd = np.zeros(dual.n_vertices, dtype=np.int64)
    for i in np.flatnonzero(model.logical_mask):
        odd[dual.ends[i, 0]] ^= 1
        odd[dual.ends[i, 1]] ^= 1
    odd_faces = np.flatnonzero(odd)
    if odd_faces.size == 0:
        return dual, -1, -1
    if odd_faces.size != 2:
        raise PlanarityError(f"{odd_faces.size} faces carry odd logical parity; expected 2")
    aux_candidates = set()
    if mg.virtual_edge >= 0:
        v = mg.virtual_edge
        aux_candidates = {int(mg.embedding.face_of[2 * v]), int(mg.embedding.face_of[2 * v + 1])}
    lo, hi = int(odd_faces[0]), int(odd_faces[1])
    logical, aux = (hi, lo) if lo in aux_candidates and hi not in aux_candidates else (lo, hi)
    return dual, logical, aux


def build_dual_graph(model: DetectorErrorModel, e: np.ndarray, theta: np.ndarray | None = None) -> DualSpinGraph:
    """Dual Ising model for the syndrome of pure error ``e``.

    Args:
        model: Graphlike model with detector coordinates.
        e: Pure error (length ``n``).
        theta: Priors (defaults to the model's).

    Returns:
        The dual spin graph with couplings set from ``e`` and ``theta``.
    """
    theta = model.priors if theta is None else np.asarray(theta, dtype=np.float64)
    dual, logical, aux = dual_structure(model)
    return DualSpinGraph(dual.n_vertices, dual.ends, couplings_from(theta, e), dual, logical, aux)
