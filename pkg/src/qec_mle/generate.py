"""Memory-experiment circuits and their detector error models.

Circuits follow the usual circuit-level noise conventions for memory
experiments: single-qubit depolarization on data qubits before each round,
depolarization after every Clifford gate, and bit flips before measurement
and after reset, all with the same strength ``p``.

Fault propagation is done backwards: each detector is tracked as a Pauli
observable pulled back through the circuit, stored as per-qubit bitmasks of
which detectors have an X or Z component on that qubit. A fault anticommuting
with a pulled-back detector flips it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .dem import DetectorErrorModel, xor_combine

CODES = ("repetition", "surface")


@dataclass
class _Circuit:
    ops: list[tuple] = field(default_factory=list)
    n_meas: int = 0
    detectors: list[tuple[tuple[float, ...], list[int]]] = field(default_factory=list)
    observable: list[int] = field(default_factory=list)

    def add(self, *op):
        self.ops.append(op)

    def measure(self, kind: str, qubits: list[int]) -> list[int]:
        recs = list(range(self.n_meas, self.n_meas + len(qubits)))
        self.n_meas += len(qubits)
        self.ops.append((kind, list(qubits), recs))
        return recs


def _depolarize1_component(p: float) -> float:
    return 0.5 - 0.5 * math.sqrt(1.0 - 4.0 * p / 3.0)


def _depolarize2_component(p: float) -> float:
    return 0.5 - 0.5 * (1.0 - 16.0 * p / 15.0) ** 0.125


def _circuit_to_dem(circ: _Circuit, metadata: dict) -> DetectorErrorModel:
    m = len(circ.detectors)
    rec_mask = [0] * circ.n_meas
    for j, (_, recs) in enumerate(circ.detectors):
        for r in recs:
            rec_mask[r] ^= 1 << j
    for r in circ.observable:
        rec_mask[r] ^= 1 << m
    xs: dict[int, int] = {}
    zs: dict[int, int] = {}
    faults: dict[int, float] = {}

    def fire(mask: int, p: float):
        if mask:
            faults[mask] = xor_combine(faults[mask], p) if mask in faults else p

    def reset(q: int):
        if xs.get(q, 0):
            raise AssertionError(f"non-deterministic detector at reset of qubit {q}")
        xs[q] = 0
        zs[q] = 0

    for op in reversed(circ.ops):
        kind = op[0]
        if kind == "R":
            for q in op[1]:
                reset(q)
        elif kind in ("M", "MR"):
            for q, r in zip(reversed(op[1]), reversed(op[2])):
                if kind == "MR":
                    reset(q)
                zs[q] = zs.get(q, 0) ^ rec_mask[r]
        elif kind == "H":
            for q in op[1]:
                xs[q], zs[q] = zs.get(q, 0), xs.get(q, 0)
        elif kind == "CX":
            for c, t in op[1]:
                xs[t] = xs.get(t, 0) ^ xs.get(c, 0)
                zs[c] = zs.get(c, 0) ^ zs.get(t, 0)
        elif kind == "X_ERROR":
            for q in op[2]:
                fire(zs.get(q, 0), op[1])
        elif kind == "DEPOLARIZE1":
            pc = _depolarize1_component(op[1])
            for q in op[2]:
                x, z = xs.get(q, 0), zs.get(q, 0)
                fire(z, pc)
                fire(x, pc)
                fire(x ^ z, pc)
        elif kind == "DEPOLARIZE2":
            pc = _depolarize2_component(op[1])
            for a, b in op[2]:
                sa = (0, zs.get(a, 0), xs.get(a, 0) ^ zs.get(a, 0), xs.get(a, 0))
                sb = (0, zs.get(b, 0), xs.get(b, 0) ^ zs.get(b, 0), xs.get(b, 0))
                for i, k in itertools.product(range(4), range(4)):
                    if i or k:
                        fire(sa[i] ^ sb[k], pc)
        else:
            raise ValueError(f"unknown op {kind}")
    for q in list(xs):
        reset(q)

    mechanisms = []
    for mask in sorted(faults, key=lambda mk: (_bits(mk & ((1 << m) - 1)), mk >> m)):
        dets = _bits(mask & ((1 << m) - 1))
        mechanisms.append((faults[mask], dets, bool(mask >> m & 1)))
    coords = [c for c, _ in circ.detectors]
    return DetectorErrorModel.from_mechanisms(mechanisms, m, coords, metadata)


def _bits(x: int) -> tuple[int, ...]:
    out = []
    k = 0
    while x:
        if x & 1:
            out.append(k)
        x >>= 1
        k += 1
    return tuple(out)


def repetition_circuit(distance: int, rounds: int, p: float) -> _Circuit:
    """Repetition-code memory circuit (bit-flip protection, Z basis)."""
    d = distance
    data = [2 * i for i in range(d)]
    anc = [2 * i + 1 for i in range(d - 1)]
    circ = _Circuit()
    circ.add("R", data + anc)
    circ.add("X_ERROR", p, data + anc)
    prev: list[int] | None = None
    for t in range(rounds):
        circ.add("DEPOLARIZE1", p, data)
        layer1 = [(data[i], anc[i]) for i in range(d - 1)]
        layer2 = [(data[i + 1], anc[i]) for i in range(d - 1)]
        for layer in (layer1, layer2):
            circ.add("CX", layer)
            circ.add("DEPOLARIZE2", p, layer)
        circ.add("X_ERROR", p, anc)
        recs = circ.measure("MR", anc)
        circ.add("X_ERROR", p, anc)
        for i, r in enumerate(recs):
            circ.detectors.append(((float(anc[i]), float(t)), [r] if prev is None else [r, prev[i]]))
        prev = recs
    circ.add("X_ERROR", p, data)
    drecs = circ.measure("M", data)
    for i in range(d - 1):
        circ.detectors.append(((float(anc[i]), float(rounds)), [prev[i], drecs[i], drecs[i + 1]]))
    circ.observable = [drecs[-1]]
    return circ


def surface_circuit(distance: int, rounds: int, p: float) -> _Circuit:
    """Rotated surface-code memory circuit (Z basis)."""
    d = distance
    data = {(x, y): None for x in range(1, 2 * d, 2) for y in range(1, 2 * d, 2)}
    measure: list[tuple[tuple[int, int], str]] = []
    for y in range(0, 2 * d + 1, 2):
        for x in range(0, 2 * d + 1, 2):
            kind = "X" if ((x + y) // 2) % 2 == 1 else "Z"
            nbrs = [(x + dx, y + dy) for dx in (-1, 1) for dy in (-1, 1) if (x + dx, y + dy) in data]
            if len(nbrs) == 4:
                measure.append(((x, y), kind))
            elif len(nbrs) == 2:
                on_tb = y in (0, 2 * d)
                on_lr = x in (0, 2 * d)
                if (kind == "X" and on_tb and not on_lr) or (kind == "Z" and on_lr and not on_tb):
                    measure.append(((x, y), kind))
    width = 2 * d + 1
    qid = {xy: xy[0] + width * xy[1] for xy in list(data) + [c for c, _ in measure]}
    dq = sorted(qid[xy] for xy in data)
    mq = [qid[c] for c, _ in measure]
    xq = [qid[c] for c, k in measure if k == "X"]
    orders = {"X": [(1, 1), (-1, 1), (1, -1), (-1, -1)], "Z": [(1, 1), (1, -1), (-1, 1), (-1, -1)]}

    circ = _Circuit()
    circ.add("R", dq + mq)
    circ.add("X_ERROR", p, dq + mq)
    prev: list[int] | None = None
    for t in range(rounds):
        circ.add("DEPOLARIZE1", p, dq)
        circ.add("H", xq)
        circ.add("DEPOLARIZE1", p, xq)
        for k in range(4):
            layer = []
            for (x, y), kind in measure:
                dx, dy = orders[kind][k]
                nb = (x + dx, y + dy)
                if nb in data:
                    pair = (qid[(x, y)], qid[nb]) if kind == "X" else (qid[nb], qid[(x, y)])
                    layer.append(pair)
            circ.add("CX", layer)
            circ.add("DEPOLARIZE2", p, layer)
        circ.add("H", xq)
        circ.add("DEPOLARIZE1", p, xq)
        circ.add("X_ERROR", p, mq)
        recs = circ.measure("MR", mq)
        circ.add("X_ERROR", p, mq)
        for i, ((x, y), kind) in enumerate(measure):
            if prev is None and kind == "X":
                continue
            circ.detectors.append(((float(x), float(y), float(t)), [recs[i]] if prev is None else [recs[i], prev[i]]))
        prev = recs
    circ.add("X_ERROR", p, dq)
    drecs = circ.measure("M", dq)
    rec_of = {q: r for q, r in zip(dq, drecs)}
    for i, ((x, y), kind) in enumerate(measure):
        if kind != "Z":
            continue
        nbrs = [qid[(x + dx, y + dy)] for dx in (-1, 1) for dy in (-1, 1) if (x + dx, y + dy) in data]
        circ.detectors.append(((float(x), float(y), float(rounds)), [prev[i]] + [rec_of[q] for q in nbrs]))
    circ.observable = [rec_of[qid[(x, 1)]] for x in range(1, 2 * d, 2)]
    return circ


def generate_dem(code: str, distance: int, rounds: int, error_rate: float) -> DetectorErrorModel:
    """Detector error model of a memory experiment.

    Args:
        code: ``"repetition"`` or ``"surface"``.
        distance: Code distance (odd, at least 3).
        rounds: Number of stabilizer measurement rounds (at least 1).
        error_rate: Circuit-level noise strength ``p`` in ``(0, 0.5)``.

    Returns:
        The model. Detector coordinates end with the round index.
    """
    if code not in CODES:
        raise ValueError(f"unknown code '{code}', expected one of {CODES}")
    if distance < 3 or distance % 2 == 0 or rounds < 1:
        raise ValueError("distance must be odd and >= 3, rounds must be >= 1")
    if not 0.0 < error_rate < 0.5:
        raise ValueError("error_rate must lie in (0, 0.5)")
    build = repetition_circuit if code == "repetition" else surface_circuit
    meta = {"code": code, "distance": int(distance), "rounds": int(rounds), "error_rate": float(error_rate)}
    return _circuit_to_dem(build(distance, rounds, error_rate), meta)
