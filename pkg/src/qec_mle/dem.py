"""Detector error models: parsing, serialization, sampling and syndromes.

A detector error model (DEM) is a list of independent error mechanisms. Each
mechanism fires with its prior probability and flips a set of detectors and
optionally the logical observable ``L0``.
"""

from __future__ import annotations

import json
import math
import re
import warnings
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .gf2 import GF2Solver

PROB_FLOOR = 1e-9
PROB_CEIL = 1.0 - 1e-9
SAMPLE_CHUNK = 1 << 15
HEADER = "# qec-mle detector error model"


class DemSyntaxError(ValueError):
    """Malformed detector error model text."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


def xor_combine(p: float, q: float) -> float:
    """Probability that exactly one of two independent events fires."""
    return p * (1.0 - q) + q * (1.0 - p)


def clamp_probability(p: float | np.ndarray) -> float | np.ndarray:
    """Clamp probabilities into ``[PROB_FLOOR, PROB_CEIL]``."""
    return np.clip(p, PROB_FLOOR, PROB_CEIL)


@dataclass(frozen=True)
class ErrorMechanism:
    """One independent error mechanism.

    Attributes:
        prob: Prior probability that the mechanism fires.
        detectors: Sorted indices of the detectors it flips.
        flips_logical: Whether it flips the logical observable.
    """

    prob: float
    detectors: tuple[int, ...]
    flips_logical: bool = False

    @property
    def symptom(self) -> tuple[tuple[int, ...], bool]:
        return self.detectors, self.flips_logical


@dataclass(frozen=True)
class DetectorErrorModel:
    """An immutable detector error model.

    Attributes:
        n_detectors: Number of detectors ``m``.
        mechanisms: The ``n`` error mechanisms.
        detector_coords: Per-detector coordinate tuples (may be empty tuples).
        metadata: Free-form generation parameters (code, distance, rounds, ...).
    """

    n_detectors: int
    mechanisms: tuple[ErrorMechanism, ...]
    detector_coords: tuple[tuple[float, ...], ...] = ()
    metadata: Mapping[str, object] = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        if not self.detector_coords:
            object.__setattr__(self, "detector_coords", tuple(() for _ in range(self.n_detectors)))
        if len(self.detector_coords) != self.n_detectors:
            raise ValueError("detector_coords must have one entry per detector")
        for mech in self.mechanisms:
            if any(d < 0 or d >= self.n_detectors for d in mech.detectors):
                raise ValueError(f"mechanism {mech} references a detector outside 0..{self.n_detectors - 1}")
            if not 0.0 < mech.prob < 1.0:
                raise ValueError(f"mechanism probability {mech.prob} outside (0, 1)")

    @classmethod
    def from_mechanisms(
        cls,
        mechanisms: Iterable[tuple[float, Iterable[int], bool]],
        n_detectors: int | None = None,
        detector_coords: Sequence[Sequence[float]] | None = None,
        metadata: Mapping[str, object] | None = None,
    ) -> DetectorErrorModel:
        """Build a model, merging mechanisms with identical symptoms.

        Mechanisms that flip nothing are dropped. Probabilities are clamped.
        """
        merged: dict[tuple[tuple[int, ...], bool], float] = {}
        for p, dets, logical in mechanisms:
            key = (_xor_targets(dets), bool(logical))
            if not key[0] and not key[1]:
                continue
            merged[key] = xor_combine(merged[key], p) if key in merged else float(p)
        mechs = tuple(ErrorMechanism(float(clamp_probability(p)), k[0], k[1]) for k, p in merged.items())
        if n_detectors is None:
            n_detectors = 1 + max((d for m in mechs for d in m.detectors), default=-1)
        coords = tuple(tuple(float(x) for x in c) for c in detector_coords) if detector_coords else ()
        return cls(n_detectors, mechs, coords, dict(metadata or {}))

    @property
    def n_mechanisms(self) -> int:
        return len(self.mechanisms)

    @cached_property
    def priors(self) -> np.ndarray:
        """Prior vector ``theta`` of shape ``(n,)``."""
        out = np.array([m.prob for m in self.mechanisms], dtype=np.float64)
        out.setflags(write=False)
        return out

    @cached_property
    def check_matrix(self) -> np.ndarray:
        """Detector incidence matrix ``H`` of shape ``(m, n)``."""
        h = np.zeros((self.n_detectors, self.n_mechanisms), dtype=np.uint8)
        for i, mech in enumerate(self.mechanisms):
            h[list(mech.detectors), i] = 1
        h.setflags(write=False)
        return h

    @cached_property
    def logical_mask(self) -> np.ndarray:
        """Boolean vector marking mechanisms that flip ``L0``."""
        out = np.array([m.flips_logical for m in self.mechanisms], dtype=bool)
        out.setflags(write=False)
        return out

    @cached_property
    def has_logical(self) -> bool:
        return bool(self.logical_mask.any())

    @cached_property
    def is_graphlike(self) -> bool:
        """True when every mechanism flips at most two detectors."""
        return all(len(m.detectors) <= 2 for m in self.mechanisms)

    @cached_property
    def solver(self) -> GF2Solver:
        """Cached GF(2) factorization used for pure errors."""
        return GF2Solver(self.check_matrix, column_order=np.argsort(-self.priors, kind="stable"))

    def with_priors(self, theta: np.ndarray) -> DetectorErrorModel:
        """Return a copy with priors replaced (clamped into range)."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_mechanisms,):
            raise ValueError(f"expected {self.n_mechanisms} priors, got shape {theta.shape}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("priors must be finite")
        theta = clamp_probability(theta)
        mechs = tuple(ErrorMechanism(float(p), m.detectors, m.flips_logical) for p, m in zip(theta, self.mechanisms))
        return DetectorErrorModel(self.n_detectors, mechs, self.detector_coords, dict(self.metadata))


@dataclass
class ShotBatch:
    """A batch of sampled or loaded shots.

    Attributes:
        syndromes: ``(N, m)`` uint8 detector outcomes.
        logicals: Optional ``(N,)`` uint8 logical observable outcomes.
    """

    syndromes: np.ndarray
    logicals: np.ndarray | None = None

    def __post_init__(self):
        self.syndromes = np.atleast_2d(np.asarray(self.syndromes, dtype=np.uint8))
        if self.logicals is not None:
            self.logicals = np.asarray(self.logicals, dtype=np.uint8).reshape(-1)
            if self.logicals.shape[0] != self.syndromes.shape[0]:
                raise ValueError("logicals and syndromes disagree on the number of shots")

    def __len__(self) -> int:
        return self.syndromes.shape[0]

    @property
    def n_detectors(self) -> int:
        return self.syndromes.shape[1]

    def __getitem__(self, idx) -> ShotBatch:
        logicals = None if self.logicals is None else self.logicals[idx]
        return ShotBatch(self.syndromes[idx], logicals)


# ---------------------------------------------------------------------------
# Parsing and serialization


_INSTR = re.compile(r"^([A-Za-z_]+)\s*(?:\(([^)]*)\))?\s*(.*)$")


def _xor_targets(dets: Iterable[int]) -> tuple[int, ...]:
    out: set[int] = set()
    for d in dets:
        out ^= {int(d)}
    return tuple(sorted(out))


def _parse_args(text: str | None, lineno: int) -> list[float]:
    if text is None or not text.strip():
        return []
    try:
        return [float(x) for x in text.split(",")]
    except ValueError as exc:
        raise DemSyntaxError(f"bad numeric argument list '({text})'", lineno) from exc


def _strip_lines(text: str) -> list[tuple[int, str]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        out.append((lineno, raw))
    return out


class _ParseState:
    def __init__(self):
        self.det_offset = 0
        self.coord_shift: list[float] = []
        self.errors: list[tuple[float, tuple[int, ...], bool, int]] = []
        self.coords: dict[int, tuple[float, ...]] = {}
        self.seen: set[int] = set()
        self.metadata: dict[str, object] = {}


def _shifted(coords: list[float], shift: list[float]) -> tuple[float, ...]:
    return tuple(c + (shift[k] if k < len(shift) else 0.0) for k, c in enumerate(coords))


def _parse_targets(tokens: list[str], state: _ParseState, lineno: int) -> tuple[list[int], bool]:
    dets: list[int] = []
    logical = False
    for tok in tokens:
        if tok == "^":
            continue
        if tok[0] in "Dd" and tok[1:].isdigit():
            dets.append(int(tok[1:]) + state.det_offset)
        elif tok[0] in "Ll" and tok[1:].isdigit():
            if int(tok[1:]) != 0:
                raise DemSyntaxError(f"only observable L0 is supported, got {tok}", lineno)
            logical = not logical
        else:
            raise DemSyntaxError(f"unrecognized target '{tok}'", lineno)
    return dets, logical


def _parse_block(lines: list[tuple[int, str]], start: int, state: _ParseState, nested: bool) -> int:
    i = start
    while i < len(lines):
        lineno, raw = lines[i]
        i += 1
        if raw.strip().startswith("# meta "):
            try:
                state.metadata.update(json.loads(raw.strip()[len("# meta ") :]))
            except json.JSONDecodeError as exc:
                raise DemSyntaxError("bad metadata comment", lineno) from exc
            continue
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "}":
            if not nested:
                raise DemSyntaxError("unmatched '}'", lineno)
            return i
        m = _INSTR.match(line)
        if m is None:
            raise DemSyntaxError(f"cannot parse '{line}'", lineno)
        name, args_text, rest = m.group(1).lower(), m.group(2), m.group(3).strip()
        if name == "repeat":
            parts = rest.split()
            if len(parts) != 2 or parts[1] != "{" or not parts[0].isdigit():
                raise DemSyntaxError("expected 'repeat N {'", lineno)
            count = int(parts[0])
            body_start = i
            end = None
            for _ in range(count):
                end = _parse_block(lines, body_start, state, nested=True)
            if end is None:
                end = _skip_block(lines, body_start)
            i = end
            continue
        args = _parse_args(args_text, lineno)
        tokens = rest.split()
        if name == "error":
            if len(args) != 1:
                raise DemSyntaxError("error(p) takes exactly one probability", lineno)
            p = args[0]
            if not (0.0 <= p < 1.0) or math.isnan(p):
                raise DemSyntaxError(f"probability {p} outside (0, 1)", lineno)
            dets, logical = _parse_targets(tokens, state, lineno)
            state.seen.update(dets)
            if p == 0.0:
                warnings.warn(f"line {lineno}: dropping zero-probability mechanism", UserWarning, stacklevel=4)
                continue
            state.errors.append((p, _xor_targets(dets), logical, lineno))
        elif name == "detector":
            dets, logical = _parse_targets(tokens, state, lineno)
            if logical:
                raise DemSyntaxError("detector instruction cannot target L0", lineno)
            for d in dets:
                state.seen.add(d)
                state.coords[d] = _shifted(args, state.coord_shift)
        elif name == "shift_detectors":
            if len(tokens) > 1 or (tokens and not tokens[0].isdigit()):
                raise DemSyntaxError("shift_detectors takes one non-negative integer", lineno)
            state.det_offset += int(tokens[0]) if tokens else 0
            if len(state.coord_shift) < len(args):
                state.coord_shift.extend([0.0] * (len(args) - len(state.coord_shift)))
            for k, a in enumerate(args):
                state.coord_shift[k] += a
        elif name == "logical_observable":
            _parse_targets(tokens, state, lineno)
        else:
            raise DemSyntaxError(f"unknown instruction '{name}'", lineno)
    if nested:
        raise DemSyntaxError("unterminated repeat block", lines[-1][0] if lines else None)
    return i


def _skip_block(lines: list[tuple[int, str]], start: int) -> int:
    depth = 1
    i = start
    while i < len(lines):
        line = lines[i][1].split("#", 1)[0].strip()
        i += 1
        if line.endswith("{"):
            depth += 1
        elif line == "}":
            depth -= 1
            if depth == 0:
                return i
    raise DemSyntaxError("unterminated repeat block")


def parse_dem(text: str) -> DetectorErrorModel:
    """Parse detector error model text.

    ``repeat`` blocks are unrolled, duplicate mechanisms merged with
    XOR-combination, and probabilities clamped into range.

    Args:
        text: Model text.

    Returns:
        The parsed model.

    Raises:
        DemSyntaxError: On malformed input.
    """
    state = _ParseState()
    _parse_block(_strip_lines(text), 0, state, nested=False)
    m = 1 + max(state.seen, default=-1)
    missing = sorted(set(range(m)) - state.seen)
    if missing:
        warnings.warn(f"detector indices are not dense; unused: {missing[:10]}", UserWarning, stacklevel=2)
    mechanisms = [(p, d, lg) for p, d, lg, _ in state.errors]
    coords = None
    if state.coords:
        coords = [state.coords.get(j, ()) for j in range(m)]
    return DetectorErrorModel.from_mechanisms(mechanisms, m, coords, state.metadata)


def _fmt(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def serialize_dem(model: DetectorErrorModel) -> str:
    """Serialize a model; ``parse_dem(serialize_dem(M)) == M``.

    Probabilities use the shortest decimal form that round-trips exactly.
    """
    lines = [HEADER]
    if model.metadata:
        lines.append("# meta " + json.dumps(dict(model.metadata), sort_keys=True))
    for mech in model.mechanisms:
        targets = [f"D{d}" for d in mech.detectors] + (["L0"] if mech.flips_logical else [])
        lines.append(f"error({repr(float(mech.prob))}) " + " ".join(targets))
    for j, c in enumerate(model.detector_coords):
        if c:
            lines.append(f"detector({', '.join(_fmt(x) for x in c)}) D{j}")
        else:
            lines.append(f"detector D{j}")
    return "\n".join(lines) + "\n"


def load_dem(path: str | Path) -> DetectorErrorModel:
    """Read a model from a file."""
    return parse_dem(Path(path).read_text())


def save_dem(model: DetectorErrorModel, path: str | Path) -> None:
    """Write a model to a file."""
    Path(path).write_text(serialize_dem(model))


# ---------------------------------------------------------------------------
# Syndromes, sampling, pure errors


def syndrome_of(model: DetectorErrorModel, errors: np.ndarray) -> ShotBatch:
    """Syndromes and logical flips of error configurations.

    Args:
        model: The model.
        errors: ``(n,)`` or ``(N, n)`` 0/1 array.

    Returns:
        A :class:`ShotBatch` with one row per configuration.
    """
    e = np.atleast_2d(np.asarray(errors, dtype=np.uint8) & 1)
    if e.shape[1] != model.n_mechanisms:
        raise ValueError(f"expected {model.n_mechanisms} error bits, got {e.shape[1]}")
    ef = e.astype(np.float32)
    s = (ef @ model.check_matrix.T.astype(np.float32)).astype(np.int64) & 1
    lg = (ef @ model.logical_mask.astype(np.float32)).astype(np.int64) & 1
    return ShotBatch(s.astype(np.uint8), lg.astype(np.uint8))


def sample_shots(
    model: DetectorErrorModel,
    n_shots: int,
    seed: int,
    theta: np.ndarray | None = None,
) -> ShotBatch:
    """Sample ``n_shots`` independent shots from the model.

    Shots are drawn in fixed-size chunks, each with its own generator spawned
    from ``seed``, so the output is a pure function of ``(model, n_shots, seed)``.

    Args:
        model: The model.
        n_shots: Number of shots.
        seed: Integer seed.
        theta: Optional priors overriding the model's.

    Returns:
        The sampled batch, including logical flips.
    """
    if n_shots < 0:
        raise ValueError("n_shots must be non-negative")
    theta = model.priors if theta is None else np.asarray(theta, dtype=np.float64)
    n_chunks = -(-n_shots // SAMPLE_CHUNK)
    children = np.random.SeedSequence(seed).spawn(max(n_chunks, 1))
    h = model.check_matrix.T.astype(np.float32)
    lmask = model.logical_mask.astype(np.float32)
    synd = np.zeros((n_shots, model.n_detectors), dtype=np.uint8)
    logi = np.zeros(n_shots, dtype=np.uint8)
    for c in range(n_chunks):
        lo, hi = c * SAMPLE_CHUNK, min(n_shots, (c + 1) * SAMPLE_CHUNK)
        rng = np.random.default_rng(children[c])
        fired = (rng.random((hi - lo, model.n_mechanisms)) < theta).astype(np.float32)
        synd[lo:hi] = (fired @ h).astype(np.int64) & 1
        logi[lo:hi] = (fired @ lmask).astype(np.int64) & 1
    return ShotBatch(synd, logi)


def pure_error(model: DetectorErrorModel, syndromes: np.ndarray) -> np.ndarray:
    """Any error configuration ``e0`` with ``H e0 = s``.

    Args:
        model: The model.
        syndromes: ``(m,)`` or ``(N, m)`` 0/1 array.

    Returns:
        ``(n,)`` or ``(N, n)`` uint8 array.

    Raises:
        InconsistentSyndromeError: Naming an unreachable detector.
    """
    return model.solver.solve(syndromes)


# ---------------------------------------------------------------------------
# Shot files


SHOT_FORMATS = ("01", "b8")


def write_shots(batch: ShotBatch, path: str | Path, fmt: str = "01", append_logical: bool | None = None) -> None:
    """Write shots in ``01`` text or ``b8`` packed format.

    Args:
        batch: Shots to write.
        path: Output file.
        fmt: ``"01"`` (one line of characters per shot) or ``"b8"``
            (``ceil(bits / 8)`` bytes per shot, least significant bit first).
        append_logical: Append the logical flip as a final bit. Defaults to
            whether the batch carries logical outcomes.
    """
    if append_logical is None:
        append_logical = batch.logicals is not None
    bits = batch.syndromes
    if append_logical:
        if batch.logicals is None:
            raise ValueError("batch has no logical outcomes to append")
        bits = np.concatenate([bits, batch.logicals[:, None]], axis=1)
    Path(path).write_bytes(encode_bits(bits, fmt))


def encode_bits(bits: np.ndarray, fmt: str) -> bytes:
    """Encode an ``(N, k)`` 0/1 array in a shot format."""
    bits = np.asarray(bits, dtype=np.uint8)
    if fmt == "01":
        if bits.shape[0] == 0:
            return b""
        rows = (bits + ord("0")).astype(np.uint8)
        lines = np.concatenate([rows, np.full((rows.shape[0], 1), ord("\n"), np.uint8)], axis=1)
        return lines.tobytes()
    if fmt == "b8":
        return np.packbits(bits, axis=1, bitorder="little").tobytes()
    raise ValueError(f"unknown shot format '{fmt}', expected one of {SHOT_FORMATS}")


def decode_bits(data: bytes, width: int, fmt: str) -> np.ndarray:
    """Decode shot-format bytes into an ``(N, width)`` uint8 array."""
    if fmt == "01":
        text = data.decode("ascii")
        lines = [ln for ln in text.split("\n") if ln.strip() != ""] if text else []
        out = np.zeros((len(lines), width), dtype=np.uint8)
        for k, ln in enumerate(lines):
            ln = ln.strip()
            if len(ln) != width or set(ln) - {"0", "1"}:
                raise ValueError(f"shot {k}: expected {width} characters of 0/1, got {len(ln)}")
            out[k] = np.frombuffer(ln.encode(), dtype=np.uint8) - ord("0")
        return out
    if fmt == "b8":
        per = max(1, -(-width // 8)) if width else 0
        if per == 0:
            return np.zeros((0, 0), dtype=np.uint8)
        if len(data) % per:
            raise ValueError(f"truncated b8 data: {len(data)} bytes is not a multiple of {per}")
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, per)
        return np.unpackbits(raw, axis=1, count=width, bitorder="little")
    raise ValueError(f"unknown shot format '{fmt}', expected one of {SHOT_FORMATS}")


def read_shots(path: str | Path, n_detectors: int, fmt: str = "01", has_logical: bool = False) -> ShotBatch:
    """Read shots written by :func:`write_shots`."""
    bits = decode_bits(Path(path).read_bytes(), n_detectors + int(has_logical), fmt)
    if has_logical:
        return ShotBatch(bits[:, :n_detectors], bits[:, n_detectors])
    return ShotBatch(bits)
