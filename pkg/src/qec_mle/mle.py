"""Maximum-likelihood estimation of mechanism priors.

Priors are trained through logits ``theta = sigmoid(phi)`` so they never
leave ``(0, 1)``. Gradients of the mean negative log-likelihood come from
either exact backend and flow to ``phi`` through ``dtheta/dphi = theta (1 - theta)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, logit

from .dem import PROB_CEIL, PROB_FLOOR, DetectorErrorModel, ShotBatch, clamp_probability

BACKENDS = ("planar", "tn")
OPTIMIZERS = ("adam", "sgd")
TRAIN_FALLBACK_RESIDUE = 1e-8
CHECKPOINT_MAGIC = "qec-mle-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class PriorParams:
    """Trainable priors in logit form.

    Attributes:
        phi: Logits, ``theta = 1 / (1 + exp(-phi))``.
        backend: ``"planar"`` or ``"tn"``.
    """

    phi: np.ndarray
    backend: str = "planar"

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=np.float64)
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")

    @property
    def theta(self) -> np.ndarray:
        return expit(self.phi)

    @classmethod
    def from_theta(cls, theta: np.ndarray, backend: str = "planar") -> PriorParams:
        return cls(logit(np.asarray(clamp_probability(np.asarray(theta, dtype=np.float64)))), backend)


@dataclass(frozen=True)
class TrainConfig:
    """Training schedule.

    Attributes:
        epochs: Epoch budget.
        batch_size: Shots per gradient step.
        learning_rate: Step size on the logits.
        optimizer: ``"adam"`` or ``"sgd"``.
        seed: Seed of the per-epoch shuffles.
        window: Convergence window in epochs.
        tolerance: Stop when the relative loss change over the window falls below this.
        n_shots: Use only the first ``n_shots`` shots (``None`` for all).
        betas: Adam moment decay rates.
        eps: Adam denominator offset.
    """

    epochs: int = 500
    batch_size: int = 10_000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    window: int = 20
    tolerance: float = 1e-4
    n_shots: int | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0 or self.window < 1:
            raise ValueError("epochs, batch_size, learning_rate and window must be non-negative (batch_size, window positive)")
        if self.n_shots is not None and self.batch_size > self.n_shots:
            raise ValueError("batch_size must not exceed n_shots")

    @classmethod
    def from_dict(cls, doc: dict) -> TrainConfig:
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        if "betas" in known:
            known["betas"] = tuple(known["betas"])
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise ValueError(f"unknown training keys {unknown}")
        return cls(**known)

    @classmethod
    def load(cls, path: str | Path) -> TrainConfig:
        """Read a JSON object or ``key = value`` lines."""
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError:
            doc = {}
            for line in text.splitlines():
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                key, _, val = line.partition("=")
                doc[key.strip()] = json.loads(val.strip()) if val.strip()[:1] in "0123456789-[{\"tfn." else val.strip()
        return cls.from_dict(doc)


@dataclass
class TrainTrace:
    """Per-epoch training record.

    Attributes:
        nll: Mean NLL over each epoch.
        rel_err: Mean relative prior error vs the reference after each epoch (if given).
        seconds: Wall-clock time at the end of each epoch.
        initial_nll: Loss at the initial priors.
        initial_rel_err: Relative error of the initial priors.
        converged: Whether the window criterion stopped training.
    """

    nll: list[float] = field(default_factory=list)
    rel_err: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    initial_nll: float = math.nan
    initial_rel_err: float = math.nan
    converged: bool = False

    @property
    def epochs(self) -> int:
        return len(self.nll)

    def to_csv(self, timings: bool = True) -> str:
        """CSV with columns ``epoch,nll,rel_err,seconds``; ``seconds`` is left blank without ``timings``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "nll", "rel_err", "seconds"])
        for k in range(self.epochs):
            rel = self.rel_err[k] if k < len(self.rel_err) else math.nan
            w.writerow([k + 1, repr(self.nll[k]), repr(rel), f"{self.seconds[k]:.3f}" if timings else ""])
        return buf.getvalue()


def nll(log_probs: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Mean of ``-log p`` (weighted mean when ``weights`` are given).

    Raises:
        ValueError: On an empty batch.
    """
    lp = np.asarray(log_probs, dtype=np.float64).reshape(-1)
    if lp.size == 0:
        raise ValueError("nll of an empty batch")
    if weights is None:
        return float(-np.mean(lp))
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    mask = w != 0
    return float(-np.sum(w[mask] * lp[mask]) / np.sum(w))


def mean_relative_error(theta: np.ndarray, reference: np.ndarray) -> float:
    """Mean of ``|theta - ref| / ref``."""
    theta = np.asarray(theta, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    return float(np.mean(np.abs(theta - ref) / ref))


def perturb_priors(theta: np.ndarray, scale: float = 2.0, seed: int = 0) -> np.ndarray:
    """Multiply each prior by a log-uniform factor in ``[1/scale, scale]`` and clamp."""
    if scale < 1:
        raise ValueError("scale must be >= 1")
    theta = np.asarray(theta, dtype=np.float64)
    rng = np.random.default_rng(seed)
    u = np.exp(rng.uniform(-math.log(scale), math.log(scale), theta.shape))
    return np.clip(theta * u, PROB_FLOOR, PROB_CEIL)


def make_backend(model: DetectorErrorModel, backend: str, **kwargs):
    """Likelihood object with ``log_prob(theta, syndromes, weights, grad)``."""
    if backend == "planar":
        from .planar import PlanarLikelihood

        return PlanarLikelihood(model, fallback_residue=kwargs.pop("fallback_residue", TRAIN_FALLBACK_RESIDUE))
    if backend == "tn":
        from .tn.likelihood import TNLikelihood

        return TNLikelihood(model, **kwargs)
    raise ValueError(f"backend must be one of {BACKENDS}")


class _Optimizer:
    """Adam or SGD on the logits (descending the loss)."""

    def __init__(self, cfg: TrainConfig, n: int):
        self.cfg = cfg
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, phi: np.ndarray, grad: np.ndarray) -> np.ndarray:
        lr = self.cfg.learning_rate
        if self.cfg.optimizer == "sgd":
            return phi - lr * grad
        b1, b2 = self.cfg.betas
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return phi - lr * m_hat / (np.sqrt(v_hat) + self.cfg.eps)

    def state(self) -> dict:
        return {"m": self.m, "v": self.v, "t": np.array(self.t)}

    def load(self, state) -> None:
        self.m = np.array(state["m"], dtype=np.float64)
        self.v = np.array(state["v"], dtype=np.float64)
        self.t = int(state["t"])


def save_checkpoint(path: str | Path, params: PriorParams, opt: _Optimizer, trace: TrainTrace, cfg: TrainConfig) -> None:
    """Write logits, optimizer state, epoch and trace to a versioned binary file."""
    meta = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "backend": params.backend,
        "config": asdict(cfg),
        "trace": asdict(trace),
    }
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), phi=params.phi, **opt.state())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> tuple[PriorParams, dict, TrainTrace]:
    """Read a checkpoint written by :func:`save_checkpoint`."""
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("magic") != CHECKPOINT_MAGIC or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path} is not a version-{CHECKPOINT_VERSION} checkpoint")
        params = PriorParams(np.array(data["phi"]), meta["backend"])
        state = {k: np.array(data[k]) for k in ("m", "v", "t")}
    return params, state, TrainTrace(**meta["trace"])


def _converged(losses: list[float], cfg: TrainConfig) -> bool:
    if len(losses) <= cfg.window:
        return False
    old, new = losses[-1 - cfg.window], losses[-1]
    return abs(new - old) <= cfg.tolerance * max(abs(old), 1e-300)


def _run(
    params: PriorParams,
    cfg: TrainConfig,
    epoch_fn,
    theta_ref: np.ndarray | None,
    trace: TrainTrace,
    opt: _Optimizer,
    checkpoint: str | Path | None,
    stop_after: int | None,
) -> tuple[PriorParams, TrainTrace]:
    start = time.monotonic() - (trace.seconds[-1] if trace.seconds else 0.0)
    done = 0
    while trace.epochs < cfg.epochs and not trace.converged:
        epoch = trace.epochs
        try:
            loss = epoch_fn(epoch, params, opt)
        except Exception as exc:
            raise RuntimeError(f"training failed in epoch {epoch + 1}: {exc}") from exc
        trace.nll.append(loss)
        if theta_ref is not None:
            trace.rel_err.append(mean_relative_error(params.theta, theta_ref))
        trace.seconds.append(time.monotonic() - start)
        trace.converged = _converged(trace.nll, cfg)
        if checkpoint is not None:
            save_checkpoint(checkpoint, params, opt, trace, cfg)
        done += 1
        if stop_after is not None and done >= stop_after:
            break
    return params, trace


def _resume(checkpoint, init: PriorParams, opt: _Optimizer, trace: TrainTrace, resume: bool):
    if checkpoint is not None and resume and Path(checkpoint).exists():
        params, state, trace = load_checkpoint(checkpoint)
        opt.load(state)
        return params, trace
    return PriorParams(init.phi.copy(), init.backend), trace


def train(
    model: DetectorErrorModel,
    batch: ShotBatch,
    init: PriorParams,
    cfg: TrainConfig,
    theta_ref: np.ndarray | None = None,
    likelihood=None,
    checkpoint: str | Path | None = None,
    resume: bool = False,
    stop_after: int | None = None,
) -> tuple[PriorParams, TrainTrace]:
    """Minibatch maximum-likelihood training on sampled syndromes.

    Args:
        model: Model whose mechanisms are trained (its priors are not used).
        batch: Observed shots.
        init: Initial logits and backend.
        cfg: Schedule.
        theta_ref: Reference priors for the relative-error trace.
        likelihood: Prebuilt backend object (built from ``init.backend`` otherwise).
        checkpoint: File updated after every epoch.
        resume: Continue from ``checkpoint`` when it exists.
        stop_after: Stop after this many epochs in this call (for interruption tests).

    Returns:
        Final parameters and the trace.
    """
    syn = np.asarray(batch.syndromes, dtype=np.uint8)
    if cfg.n_shots is not None:
        syn = syn[: cfg.n_shots]
    n = syn.shape[0]
    if n == 0:
        raise ValueError("no shots to train on")
    if init.phi.shape != (model.n_mechanisms,):
        raise ValueError("initial parameters do not match the model")
    lik = likelihood or make_backend(model, init.backend)
    uniq, inverse = np.unique(syn, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    bs = min(cfg.batch_size, n)
    opt = _Optimizer(cfg, model.n_mechanisms)
    trace = TrainTrace()
    params, trace = _resume(checkpoint, init, opt, trace, resume)

    def full_nll(theta):
        counts = np.bincount(inverse, minlength=uniq.shape[0]).astype(np.float64)
        return nll(lik.log_prob(theta, uniq), counts)

    if math.isnan(trace.initial_nll):
        trace.initial_nll = full_nll(params.theta)
        if theta_ref is not None:
            trace.initial_rel_err = mean_relative_error(params.theta, theta_ref)

    def epoch_fn(epoch: int, p: PriorParams, o: _Optimizer) -> float:
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        total = 0.0
        for a in range(0, n, bs):
            idx = inverse[order[a : a + bs]]
            counts = np.bincount(idx, minlength=uniq.shape[0]).astype(np.float64)
            rows = np.flatnonzero(counts)
            theta = p.theta
            lp, g = lik.log_prob(theta, uniq[rows], weights=counts[rows], grad=True)
            size = float(idx.size)
            total += -float(np.dot(counts[rows], lp))
            grad_phi = (-g / size) * theta * (1.0 - theta)
            p.phi = o.step(p.phi, grad_phi)
        return total / n

    return _run(params, cfg, epoch_fn, theta_ref, trace, opt, checkpoint, stop_after)


def all_syndromes(m: int) -> np.ndarray:
    """All ``2^m`` syndromes, detector ``j`` at bit ``j`` of the row number."""
    codes = np.arange(1 << m, dtype=np.int64)
    return ((codes[:, None] >> np.arange(m)) & 1).astype(np.uint8)


def reachable_syndromes(model: DetectorErrorModel) -> np.ndarray:
    """Every syndrome in the column span of the check matrix (``m <= 20``)."""
    m = model.n_detectors
    if m > 20:
        raise ValueError(f"exact enumeration needs m <= 20 detectors, model has {m}")
    basis = model.check_matrix[:, model.solver.pivot_columns].T.astype(np.int64)
    combos = all_syndromes(basis.shape[0]).astype(np.int64)
    syn = (combos @ basis) & 1
    codes = syn @ (1 << np.arange(m, dtype=np.int64))
    return syn[np.argsort(codes)].astype(np.uint8)


def exact_nll_train(
    model: DetectorErrorModel,
    theta_true: np.ndarray,
    init: PriorParams,
    cfg: TrainConfig,
    likelihood=None,
) -> tuple[PriorParams, TrainTrace]:
    """Full-batch training on the exact cross-entropy against ``p(s | theta_true)``.

    Every epoch is one step on ``sum_s p_data(s) (-log p_theta(s))`` over all
    reachable syndromes.
    """
    if model.n_detectors > 20:
        raise ValueError(f"exact enumeration needs m <= 20 detectors, model has {model.n_detectors}")
    lik = likelihood or make_backend(model, init.backend)
    syn = reachable_syndromes(model)
    theta_true = np.asarray(theta_true, dtype=np.float64)
    p_data = np.exp(lik.log_prob(theta_true, syn))
    opt = _Optimizer(cfg, model.n_mechanisms)
    params = PriorParams(init.phi.copy(), init.backend)
    trace = TrainTrace()
    trace.initial_nll = exact_nll(lik, params.theta, syn, p_data)
    trace.initial_rel_err = mean_relative_error(params.theta, theta_true)

    def epoch_fn(epoch: int, p: PriorParams, o: _Optimizer) -> float:
        theta = p.theta
        lp, g = lik.log_prob(theta, syn, weights=p_data, grad=True)
        loss = -float(np.dot(p_data, lp))
        p.phi = o.step(p.phi, -g * theta * (1.0 - theta))
        return loss

    return _run(params, cfg, epoch_fn, theta_true, trace, opt, None, None)


def exact_nll(likelihood, theta: np.ndarray, syndromes: np.ndarray, p_data: np.ndarray) -> float:
    """``sum_s p_data(s) (-log p_theta(s))``."""
    return -float(np.dot(p_data, likelihood.log_prob(theta, syndromes)))


def exact_nll_gradient(likelihood, theta: np.ndarray, syndromes: np.ndarray, p_data: np.ndarray) -> np.ndarray:
    """Gradient of :func:`exact_nll` with respect to ``theta``."""
    _, g = likelihood.log_prob(theta, syndromes, weights=p_data, grad=True)
    return -g


@dataclass
class BroadcastResult:
    """Priors mapped onto a target model.

    Attributes:
        theta: Target priors.
        unmatched: Target mechanisms without a source key (initial priors kept).
        collisions: Keys whose source mechanisms had differing trained values (means taken).
    """

    theta: np.ndarray
    unmatched: list[int]
    collisions: list[tuple]


def _rounds(model: DetectorErrorModel) -> int:
    coords = model.detector_coords
    if not coords or any(len(c) < 1 for c in coords):
        raise ValueError("model has no detector coordinates with a round axis")
    return int(round(max(c[-1] for c in coords)))


def mechanism_key(model: DetectorErrorModel, i: int, last_round: int | None = None, width: int = 2) -> tuple:
    """Round-translation key ``(anchor, shape, logical)`` of mechanism ``i``.

    ``shape`` lists each detector's spatial coordinates with its round offset
    from the mechanism's earliest round. Mechanisms within ``width`` rounds of
    the first or last detector round keep their offset from that boundary in
    the anchor; all others share the anchor ``("bulk",)``.
    """
    last = _rounds(model) if last_round is None else last_round
    mech = model.mechanisms[i]
    if not mech.detectors:
        return (("none",), (), mech.flips_logical)
    cs = [model.detector_coords[j] for j in mech.detectors]
    ts = [int(round(c[-1])) for c in cs]
    t0, t1 = min(ts), max(ts)
    shape = tuple(sorted(tuple(c[:-1]) + (t - t0,) for c, t in zip(cs, ts)))
    if t0 < width:
        anchor = ("start", t0)
    elif t1 > last - width:
        anchor = ("end", last - t1)
    else:
        anchor = ("bulk",)
    return (anchor, shape, mech.flips_logical)


def _same_layout(a: DetectorErrorModel, b: DetectorErrorModel) -> bool:
    return (
        a.detector_coords == b.detector_coords
        and a.n_mechanisms == b.n_mechanisms
        and all(x.symptom == y.symptom for x, y in zip(a.mechanisms, b.mechanisms))
    )


def broadcast_params(
    source: DetectorErrorModel,
    theta: np.ndarray,
    target: DetectorErrorModel,
    width: int = 2,
) -> BroadcastResult:
    """Map trained priors of a few-round model onto a model with more rounds.

    Args:
        source: Trained model with at least one bulk round.
        theta: Trained priors of ``source``.
        target: Model to receive priors; its own priors are kept where no key matches.
            A target with the source's exact layout receives ``theta`` unchanged.
        width: Rounds at each end treated as boundary. Surface-code models
            need 2 because their first round lacks half of the detectors.

    Raises:
        ValueError: If the source has no bulk round or no round axis.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (source.n_mechanisms,):
        raise ValueError("theta does not match the source model")
    last_s = _rounds(source)
    if last_s < 2 * width:
        raise ValueError(f"source needs detector rounds 0..{2 * width} or more so that a bulk round exists")
    if _same_layout(source, target):
        return BroadcastResult(theta.copy(), [], [])
    values: dict[tuple, list[float]] = {}
    for i in range(source.n_mechanisms):
        values.setdefault(mechanism_key(source, i, last_s, width), []).append(float(theta[i]))
    collisions = [k for k, v in values.items() if len(v) > 1 and max(v) - min(v) > 1e-12 * max(v)]
    mean = {k: math.fsum(v) / len(v) for k, v in values.items()}
    last_t = _rounds(target)
    out = target.priors.copy()
    unmatched = []
    for i in range(target.n_mechanisms):
        key = mechanism_key(target, i, last_t, width)
        if key in mean:
            out[i] = mean[key]
        else:
            unmatched.append(i)
    if unmatched:
        warnings.warn(f"{len(unmatched)} target mechanisms have no source key; initial priors kept", stacklevel=2)
    return BroadcastResult(out, unmatched, collisions)
