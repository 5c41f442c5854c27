"""Bit-packed linear algebra over GF(2).

Rows are stored as arrays of ``uint64`` words, little-endian in bit order:
bit ``j`` of a row lives in word ``j // 64`` at position ``j % 64``.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

_WORD = 64


def n_words(n_bits: int) -> int:
    """Number of 64-bit words needed to hold ``n_bits`` bits."""
    return max(1, -(-n_bits // _WORD))


def pack_rows(bits: np.ndarray) -> np.ndarray:
    """Pack a 2D 0/1 array into rows of uint64 words.

    Args:
        bits: Array of shape ``(rows, n_bits)`` with entries in {0, 1}.

    Returns:
        Array of shape ``(rows, n_words(n_bits))`` and dtype uint64.
    """
    bits = np.asarray(bits, dtype=np.uint8) & 1
    rows, n = bits.shape
    w = n_words(n)
    padded = np.zeros((rows, w * _WORD), dtype=np.uint8)
    padded[:, :n] = bits
    as_bytes = np.packbits(padded, axis=1, bitorder="little")
    return as_bytes.view("<u8").astype(np.uint64, copy=False).reshape(rows, w)


def unpack_rows(words: np.ndarray, n_bits: int) -> np.ndarray:
    """Inverse of :func:`pack_rows`."""
    words = np.ascontiguousarray(words, dtype="<u8")
    as_bytes = words.view(np.uint8).reshape(words.shape[0], -1)
    return np.unpackbits(as_bytes, axis=1, count=n_bits, bitorder="little")


def parity_dot(packed_a: np.ndarray, packed_b: np.ndarray) -> np.ndarray:
    """Pairwise GF(2) inner products between two sets of packed rows.

    Args:
        packed_a: ``(p, w)`` packed rows.
        packed_b: ``(q, w)`` packed rows.

    Returns:
        ``(p, q)`` uint8 matrix of inner products mod 2.
    """
    out = np.zeros((packed_a.shape[0], packed_b.shape[0]), dtype=np.uint8)
    for k in range(packed_a.shape[1]):
        col = packed_a[:, k : k + 1] & packed_b[None, :, k]
        out ^= (np.bitwise_count(col) & 1).astype(np.uint8)
    return out


class InconsistentSyndromeError(ValueError):
    """Raised when a syndrome is outside the column space of the check matrix."""

    def __init__(self, detector: int, shot: int | None = None):
        self.detector = detector
        self.shot = shot
        where = "" if shot is None else f" (shot {shot})"
        super().__init__(
            f"syndrome is not reachable by any error configuration{where}: "
            f"detector {detector} cannot be explained by the available mechanisms"
        )


class GF2Solver:
    """Reusable factorization of a GF(2) matrix for solving ``H e = s``.

    Elimination runs once with column pivoting and records the row transform
    ``T`` such that ``T H`` is in reduced row-echelon form. Each solve is then
    a packed product ``T s`` read off at the pivot columns.

    Args:
        matrix: ``(m, n)`` 0/1 matrix ``H``.
        column_order: Optional order in which columns are tried as pivots.
            Earlier columns are preferred in the returned solutions.
    """

    def __init__(self, matrix: np.ndarray, column_order: Sequence[int] | None = None):
        h = np.asarray(matrix, dtype=np.uint8) & 1
        if h.ndim != 2:
            raise ValueError("matrix must be two-dimensional")
        self.n_rows, self.n_cols = h.shape
        order = range(self.n_cols) if column_order is None else column_order
        rows = pack_rows(h)
        transform = pack_rows(np.eye(self.n_rows, dtype=np.uint8))
        pivots: list[int] = []
        rank = 0
        for col in order:
            if rank == self.n_rows:
                break
            word, bit = divmod(int(col), _WORD)
            has_bit = ((rows[:, word] >> np.uint64(bit)) & np.uint64(1)).astype(bool)
            candidates = np.flatnonzero(has_bit[rank:])
            if candidates.size == 0:
                continue
            p = rank + int(candidates[0])
            if p != rank:
                rows[[rank, p]] = rows[[p, rank]]
                transform[[rank, p]] = transform[[p, rank]]
                has_bit[[rank, p]] = has_bit[[p, rank]]
            has_bit[rank] = False
            rows[has_bit] ^= rows[rank]
            transform[has_bit] ^= transform[rank]
            pivots.append(int(col))
            rank += 1
        self.rank = rank
        self.pivot_columns = np.asarray(pivots, dtype=np.int64)
        self._transform = transform

    def solve(self, syndromes: np.ndarray) -> np.ndarray:
        """Return one solution ``e`` of ``H e = s`` per syndrome row.

        Args:
            syndromes: ``(m,)`` or ``(N, m)`` 0/1 array.

        Returns:
            ``(n,)`` or ``(N, n)`` uint8 array.

        Raises:
            InconsistentSyndromeError: If some syndrome has no solution.
        """
        s = np.asarray(syndromes, dtype=np.uint8)
        single = s.ndim == 1
        s = np.atleast_2d(s)
        if s.shape[1] != self.n_rows:
            raise ValueError(f"syndrome length {s.shape[1]} != {self.n_rows}")
        t = parity_dot(pack_rows(s), self._transform)
        bad = np.argwhere(t[:, self.rank :])
        if bad.size:
            shot, k = (int(x) for x in bad[0])
            combo = unpack_rows(self._transform[self.rank + k : self.rank + k + 1], self.n_rows)[0]
            culprits = np.flatnonzero(combo & s[shot])
            raise InconsistentSyndromeError(int(culprits[0]), None if single else shot)
        e = np.zeros((s.shape[0], self.n_cols), dtype=np.uint8)
        e[:, self.pivot_columns] = t[:, : self.rank]
        return e[0] if single else e
