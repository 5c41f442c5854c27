"""Kac–Ward determinant for Ising models on combinatorially embedded planar graphs.

The phase of each transition between directed edges comes from angles that
are read off the rotation system: half-edge ``k`` of a degree-``d`` vertex
points in direction ``2 pi k / d``. Any such assignment differs from a true
straight-line drawing by a bend on each edge. A per-edge sign is then chosen
so that every face of the embedding accumulates a total rotation of
``2 pi`` modulo ``4 pi``, which is the only property the determinant
identity needs.
"""

from __future__ import annotations

from collections import deque
from fractions import Fraction

import numpy as np
import scipy.linalg

from .embedding import PlanarityError, RotationSystem

TWO_PI = 2.0 * np.pi


class KacWardError(ArithmeticError):
    """Non-finite or inconsistent determinant."""


def log_cosh(x: np.ndarray) -> np.ndarray:
    """Overflow-free ``log cosh x``."""
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - np.log(2.0)


def _wrap_frac(x: Fraction) -> Fraction:
    """Map an angle in units of pi into ``(-1, 1]``."""
    return 1 - (1 - x) % 2


def _wrap(x: np.ndarray) -> np.ndarray:
    """Map angles into ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - x, TWO_PI)


class KacWardOperator:
    """Coupling-independent part of the Kac–Ward matrix of one embedding.

    ``K = Phi @ diag(tanh J[edge(b)])`` where ``Phi[a, b]`` is the unit phase
    of the transition from directed edge ``a`` into directed edge ``b``.

    Args:
        graph: Planar rotation system (connected, Euler-checked here).
    """

    def __init__(self, graph: RotationSystem):
        graph.check_planar()
        self.graph = graph
        n_e = graph.n_edges
        pos = graph.position
        deg = np.maximum(graph.degree[graph.vertex_of], 1)
        # angles in units of pi, kept exact so the phases can be rebuilt at any precision
        phi = [Fraction(2 * int(p), int(d)) for p, d in zip(pos, deg)]
        bend = [Fraction(0)] * (2 * n_e)
        for e in range(n_e):
            b = _wrap_frac(phi[2 * e + 1] + 1 - phi[2 * e])
            bend[2 * e], bend[2 * e + 1] = b, -b
        parity = self._edge_parity(graph, np.array([float(b) for b in bend]) * np.pi)
        self.edge_sign = 1.0 - 2.0 * parity
        rows, cols, fracs = [], [], []
        for rot in graph.rotation:
            d = len(rot)
            for i_in, h_in in enumerate(rot):
                a = h_in ^ 1
                for i_out, b in enumerate(rot):
                    if b == h_in:
                        continue
                    beta = Fraction(2 * ((i_in - i_out) % d), d)
                    ang = (bend[a] + 1 - beta) / 2 + int(parity[a >> 1])
                    rows.append(a)
                    cols.append(b)
                    fracs.append(ang % 2)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.angle_fracs = fracs
        self.values = np.exp(1j * np.pi * np.array([float(f) for f in fracs]))
        self.phase = np.zeros((2 * n_e, 2 * n_e), dtype=np.complex128)
        self.phase[self.rows, self.cols] = self.values

    @staticmethod
    def _edge_parity(graph: RotationSystem, bend: np.ndarray) -> np.ndarray:
        """Per-edge parities making every face rotate by 2 pi mod 4 pi."""
        faces = graph.faces
        need = np.zeros(len(faces), dtype=np.int64)
        for f, walk in enumerate(faces):
            total = 0.0
            for a in walk:
                b = graph.face_successor(a)
                h_in = a ^ 1
                d = graph.degree[graph.vertex_of[h_in]]
                steps = (graph.position[h_in] - graph.position[b]) % d or d
                total += bend[a] + np.pi - TWO_PI * steps / d
            turns = total / TWO_PI
            k = int(round(turns))
            if abs(turns - k) > 1e-6:
                raise PlanarityError("face rotation is not a multiple of 2 pi")
            need[f] = (1 - k) % 2
        face_of = graph.face_of
        adj: list[list[tuple[int, int]]] = [[] for _ in faces]
        for e in range(graph.n_edges):
            f, g = int(face_of[2 * e]), int(face_of[2 * e + 1])
            if f != g:
                adj[f].append((g, e))
                adj[g].append((f, e))
        parity = np.zeros(graph.n_edges, dtype=np.int64)
        parent_edge = [-1] * len(faces)
        order = []
        seen = [False] * len(faces)
        seen[0] = True
        queue = deque([0])
        while queue:
            f = queue.popleft()
            order.append(f)
            for g, e in adj[f]:
                if not seen[g]:
                    seen[g] = True
                    parent_edge[g] = e
                    queue.append(g)
        if not all(seen):
            raise PlanarityError("dual graph is disconnected")
        for f in reversed(order):
            if f == 0:
                continue
            have = sum(parity[a >> 1] for a in faces[f] if face_of[a ^ 1] != f)
            parity[parent_edge[f]] ^= (need[f] - have) % 2
        have = sum(parity[a >> 1] for a in faces[0] if face_of[a ^ 1] != 0)
        if (have - need[0]) % 2:
            raise PlanarityError("face parities are inconsistent; embedding is not planar")
        return parity

    def matrix(self, couplings: np.ndarray) -> np.ndarray:
        """Dense ``I - K`` for the given edge couplings."""
        t = np.tanh(np.asarray(couplings, dtype=np.float64))
        k = self.phase * np.repeat(t, 2)[None, :]
        return np.eye(k.shape[0]) - k


def _slogdet_lu(mat: np.ndarray) -> tuple[complex, np.ndarray, np.ndarray]:
    """Log-determinant (complex) and LU factors of a square matrix."""
    if mat.shape[0] == 0:
        return 0j, mat, np.zeros(0, dtype=np.int32)
    lu, piv = scipy.linalg.lu_factor(mat, check_finite=True)
    diag = np.diag(lu)
    if np.any(diag == 0):
        raise KacWardError("singular Kac-Ward matrix")
    swaps = int(np.count_nonzero(piv != np.arange(piv.size)))
    log_abs = float(np.sum(np.log(np.abs(diag))))
    phase = float(np.sum(np.angle(diag))) + np.pi * swaps
    return complex(log_abs, phase), lu, piv


def check_phase(log_det: complex, log_z: float, where: str = "") -> None:
    """Raise if the determinant of a real partition function is not real positive."""
    resid = abs(_wrap(np.asarray(log_det.imag)))
    if not np.isfinite(log_det.real) or resid > max(1e-8 * abs(log_z), 1e-8):
        raise KacWardError(
            f"Kac-Ward determinant has phase residue {resid:.3e} (log|det|={log_det.real:.6g}){where}"
        )


def kac_ward_log_z(op: KacWardOperator, couplings: np.ndarray, grad: bool = False):
    """``log Z`` (and optionally ``d log Z / dJ``) for one coupling vector.

    Args:
        op: Precomputed operator for the embedding.
        couplings: Edge couplings ``J``.
        grad: Also return the gradient with respect to ``J``.

    Returns:
        ``log Z`` or ``(log Z, dlogZ/dJ)``.
    """
    j = np.asarray(couplings, dtype=np.float64)
    a = op.matrix(j)
    log_det, lu, piv = _slogdet_lu(a)
    log_z = op.graph.n_vertices * np.log(2.0) + float(np.sum(log_cosh(j))) + 0.5 * log_det.real
    check_phase(log_det, log_z)
    if not grad:
        return log_z
    if a.shape[0] == 0:
        return log_z, np.zeros(0)
    inv = scipy.linalg.lu_solve((lu, piv), np.eye(a.shape[0]))
    diag = np.einsum("ba,ab->b", inv, op.phase)
    t = np.tanh(j)
    trace = (diag[0::2] + diag[1::2]).real
    return log_z, t - 0.5 * (1.0 - t * t) * trace
