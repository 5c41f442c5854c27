"""Combinatorial planar embeddings (rotation systems).

Edge ``e`` joins ``ends[e] = (u, v)``. Its half-edges are ``2e`` (at ``u``)
and ``2e + 1`` (at ``v``). A directed edge is named by the half-edge it
leaves from, so ``a`` runs from ``vertex_of(a)`` to ``vertex_of(a ^ 1)`` and
``a ^ 1`` is its reversal. ``rotation[v]`` lists the half-edges at ``v`` in
counterclockwise order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class PlanarityError(ValueError):
    """The supplied rotation system is not a planar embedding of a connected graph."""


@dataclass(frozen=True)
class RotationSystem:
    """A graph with a cyclic order of half-edges around each vertex.

    Attributes:
        n_vertices: Number of vertices.
        ends: ``(E, 2)`` array of edge endpoints.
        rotation: Counterclockwise half-edge order at each vertex.
    """

    n_vertices: int
    ends: np.ndarray
    rotation: tuple[tuple[int, ...], ...]

    @property
    def n_edges(self) -> int:
        return int(self.ends.shape[0])

    @cached_property
    def vertex_of(self) -> np.ndarray:
        """Vertex holding each half-edge."""
        return np.asarray(self.ends, dtype=np.int64).reshape(-1)

    @cached_property
    def position(self) -> np.ndarray:
        """Index of each half-edge within its vertex rotation."""
        pos = np.full(2 * self.n_edges, -1, dtype=np.int64)
        for rot in self.rotation:
            for k, h in enumerate(rot):
                pos[h] = k
        if np.any(pos < 0):
            raise PlanarityError("rotation system misses some half-edges")
        return pos

    @cached_property
    def degree(self) -> np.ndarray:
        return np.array([len(r) for r in self.rotation], dtype=np.int64)

    def face_successor(self, a: int) -> int:
        """Next directed edge along the face to the left of ``a``."""
        h = a ^ 1
        v = self.vertex_of[h]
        rot = self.rotation[v]
        return rot[(self.position[h] - 1) % len(rot)]

    @cached_property
    def faces(self) -> tuple[tuple[int, ...], ...]:
        """Boundary walks of all faces, as lists of directed edges."""
        seen = np.zeros(2 * self.n_edges, dtype=bool)
        out = []
        for start in range(2 * self.n_edges):
            if seen[start]:
                continue
            walk = []
            a = start
            while not seen[a]:
                seen[a] = True
                walk.append(a)
                a = self.face_successor(a)
            if a != start:
                raise PlanarityError("face tracing did not close")
            out.append(tuple(walk))
        return tuple(out)

    @cached_property
    def face_of(self) -> np.ndarray:
        """Face index to the left of each directed edge."""
        fo = np.empty(2 * self.n_edges, dtype=np.int64)
        for f, walk in enumerate(self.faces):
            fo[list(walk)] = f
        return fo

    def n_components(self) -> int:
        parent = list(range(self.n_vertices))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for u, v in self.ends:
            parent[find(int(u))] = find(int(v))
        return len({find(x) for x in range(self.n_vertices)})

    def check_planar(self) -> None:
        """Verify connectivity and Euler's formula ``V - E + F = 2``."""
        if self.n_vertices == 0:
            raise PlanarityError("empty graph")
        if self.n_components() != 1:
            raise PlanarityError("graph is not connected")
        chi = self.n_vertices - self.n_edges + len(self.faces)
        if chi != 2:
            raise PlanarityError(f"Euler characteristic {chi} != 2; embedding is not planar")

    def dual(self, drop_edges: frozenset[int] = frozenset()) -> tuple[RotationSystem, np.ndarray]:
        """Planar dual, optionally contracting the primal edges ``drop_edges``.

        Dual edge ``k`` crosses primal edge ``kept[k]``. Its half-edge ``2k``
        sits in the face left of primal directed edge ``2 kept[k]``.

        Returns:
            The dual rotation system and the array ``kept`` of primal edge ids.
        """
        kept = np.array([e for e in range(self.n_edges) if e not in drop_edges], dtype=np.int64)
        new_id = {int(e): k for k, e in enumerate(kept)}
        ends = np.stack([self.face_of[2 * kept], self.face_of[2 * kept + 1]], axis=1) if kept.size else np.zeros((0, 2), np.int64)
        rotation = []
        for walk in self.faces:
            rotation.append(tuple(2 * new_id[a >> 1] + (a & 1) for a in walk if (a >> 1) in new_id))
        return RotationSystem(len(self.faces), ends, tuple(rotation)), kept

    def merge_vertices(self, keep: int, drop: int) -> RotationSystem:
        """Identify two vertices that share a face, preserving planarity.

        The merged vertex takes id ``keep``; vertices above ``drop`` shift
        down by one. Edges between them become self-loops.

        Raises:
            PlanarityError: If no face touches both vertices.
        """
        if keep == drop:
            raise ValueError("cannot merge a vertex with itself")
        corner_keep = corner_drop = None
        for walk in self.faces:
            at_keep = [a for a in walk if self.vertex_of[a ^ 1] == keep]
            at_drop = [a for a in walk if self.vertex_of[a ^ 1] == drop]
            if at_keep and at_drop:
                corner_keep, corner_drop = at_keep[0] ^ 1, at_drop[0] ^ 1
                break
        if corner_keep is None:
            raise PlanarityError(f"vertices {keep} and {drop} share no face")
        rk = self.rotation[keep]
        rd = self.rotation[drop]
        pk = int(self.position[corner_keep])
        pd = int(self.position[corner_drop])
        merged = rk[pk:] + rk[:pk] + rd[pd:] + rd[:pd]
        relabel = np.arange(self.n_vertices)
        relabel[drop] = keep
        relabel[drop + 1 :] -= 1
        ends = relabel[np.asarray(self.ends, dtype=np.int64)]
        rotation = []
        for v in range(self.n_vertices):
            if v == drop:
                continue
            rotation.append(merged if v == keep else self.rotation[v])
        return RotationSystem(self.n_vertices - 1, ends, tuple(rotation))


def rotation_from_angles(n_vertices: int, ends: np.ndarray, angles: np.ndarray) -> RotationSystem:
    """Rotation system from the direction of each half-edge at its vertex.

    Half-edges with equal angles (parallel edges) are ordered by edge index,
    ascending at the lower-numbered endpoint and descending at the other.

    Args:
        n_vertices: Number of vertices.
        ends: ``(E, 2)`` endpoints.
        angles: ``(2E,)`` direction of each half-edge, in radians.
    """
    ends = np.asarray(ends, dtype=np.int64)
    buckets: list[list[tuple[float, int, int]]] = [[] for _ in range(n_vertices)]
    for e, (u, v) in enumerate(ends):
        for side, w, other in ((0, u, v), (1, v, u)):
            tie = e if w < other or (w == other and side == 0) else -e
            ang = float(np.mod(angles[2 * e + side], 2 * np.pi))
            buckets[w].append((round(ang, 12), tie, 2 * e + side))
    rotation = tuple(tuple(h for _, _, h in sorted(b)) for b in buckets)
    return RotationSystem(n_vertices, ends, rotation)
