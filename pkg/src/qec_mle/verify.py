"""Seeded cross-check suites of both backends against the brute-force oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dem import DetectorErrorModel
from .generate import generate_dem
from .oracle import brute_distribution, fd_grad

SUITES = ("planar", "tn", "decode", "gradient")
REPETITION_CASES = ((3, 1), (3, 2), (5, 1), (3, 3))
REL_TOL = 1e-10
GRAD_TOL = 1e-5


@dataclass
class SuiteResult:
    """Outcome of one suite.

    Attributes:
        suite: Suite name.
        passed: Passing checks.
        failed: Failing checks.
        failures: Short description of each failure.
    """

    suite: str
    passed: int = 0
    failed: int = 0
    failures: list[str] = field(default_factory=list)

    def check(self, ok: bool, what: str) -> None:
        if ok:
            self.passed += 1
        else:
            self.failed += 1
            self.failures.append(what)

    def to_json(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "failed": self.failed, "failures": self.failures[:20]}


def random_repetition(rng: np.random.Generator, lo: float = 0.01, hi: float = 0.3) -> DetectorErrorModel:
    """Small graphlike repetition model with random priors."""
    d, r = REPETITION_CASES[int(rng.integers(len(REPETITION_CASES)))]
    base = generate_dem("repetition", d, r, 0.01)
    return base.with_priors(rng.uniform(lo, hi, base.n_mechanisms))


def random_truncated_surface(rng: np.random.Generator, n_keep: int = 14, lo: float = 0.01, hi: float = 0.3) -> DetectorErrorModel:
    """Random subset of a surface model's mechanisms, untouched detectors dropped."""
    base = generate_dem("surface", 3, 1, 0.01)
    keep = np.sort(rng.choice(base.n_mechanisms, size=n_keep, replace=False))
    mechs = [base.mechanisms[i] for i in keep]
    used = sorted({d for m in mechs for d in m.detectors})
    new = {d: k for k, d in enumerate(used)}
    model = DetectorErrorModel.from_mechanisms(
        [(m.prob, [new[d] for d in m.detectors], m.flips_logical) for m in mechs],
        len(used),
        [base.detector_coords[d] for d in used],
        base.metadata,
    )
    return model.with_priors(rng.uniform(lo, hi, model.n_mechanisms))


def _table(model: DetectorErrorModel, theta: np.ndarray):
    tab = brute_distribution(model, theta)
    keys = sorted(tab)
    m = model.n_detectors
    syn = ((np.array(keys, dtype=np.int64)[:, None] >> np.arange(m)) & 1).astype(np.uint8)
    p = np.array([tab[k] for k in keys])
    return syn, p


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.abs(b)))


def _likelihood_suite(name: str, make, models) -> SuiteResult:
    res = SuiteResult(name)
    for k, model in enumerate(models):
        theta = model.priors
        syn, p = _table(model, theta)
        try:
            lp = make(model).log_prob(theta, syn)
        except Exception as exc:  # noqa: BLE001
            res.check(False, f"case {k}: {type(exc).__name__}: {exc}")
            continue
        err = _rel(np.exp(lp), p.sum(axis=1))
        res.check(err <= REL_TOL, f"case {k}: max relative error {err:.3e}")
        total = math.fsum(np.exp(lp).tolist())
        res.check(abs(total - 1.0) <= 1e-8, f"case {k}: total probability {total!r}")
    return res


def _planar(model):
    from .planar import PlanarLikelihood

    return PlanarLikelihood(model)


def _tn(model):
    from .tn.likelihood import TNLikelihood

    return TNLikelihood(model, strategy="positive")


def _decode_suite(models) -> SuiteResult:
    from .decode import decode

    res = SuiteResult("decode")
    for k, (model, backends) in enumerate(models):
        theta = model.priors
        syn, p = _table(model, theta)
        truth = (p[:, 1] > p[:, 0]).astype(np.uint8)
        near_tie = np.abs(p[:, 0] - p[:, 1]) <= 1e-12 * p.sum(axis=1)
        for b in backends:
            lik = _planar(model) if b == "planar" else _tn(model)
            pred = decode(model, theta, syn, b, lik).predicted_logical
            bad = int(np.count_nonzero((pred != truth) & ~near_tie))
            res.check(bad == 0, f"case {k} {b}: {bad} syndromes decoded differently from brute force")
    return res


def _gradient_suite(models) -> SuiteResult:
    res = SuiteResult("gradient")
    for k, (model, backends) in enumerate(models):
        theta = model.priors
        syn, _ = _table(model, theta)
        rng = np.random.default_rng(k)
        pick = syn[rng.choice(syn.shape[0], size=min(4, syn.shape[0]), replace=False)]
        for b in backends:
            lik = _planar(model) if b == "planar" else _tn(model)
            _, g = lik.log_prob(theta, pick, grad=True)
            fd = fd_grad(lambda t: float(np.sum(lik.log_prob(t, pick))), theta)
            err = float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)))
            res.check(err <= GRAD_TOL, f"case {k} {b}: gradient mismatch {err:.3e}")
    return res


def run_suite(name: str, seed: int = 0, cases: int = 10) -> SuiteResult:
    """Run one seeded suite.

    Args:
        name: One of :data:`SUITES`.
        seed: Seed of the random instances.
        cases: Number of random models.
    """
    rng = np.random.default_rng(seed)
    if name == "planar":
        return _likelihood_suite(name, _planar, [random_repetition(rng) for _ in range(cases)])
    if name == "tn":
        models = [random_repetition(rng) if k % 2 else random_truncated_surface(rng) for k in range(cases)]
        return _likelihood_suite(name, _tn, models)
    if name == "decode":
        models = []
        for k in range(cases):
            if k % 2:
                models.append((random_repetition(rng), ("planar", "tn")))
            else:
                models.append((random_truncated_surface(rng), ("tn",)))
        return _decode_suite(models)
    if name == "gradient":
        models = []
        for k in range(cases):
            if k % 2:
                models.append((random_repetition(rng), ("planar", "tn")))
            else:
                models.append((random_truncated_surface(rng, 10), ("tn",)))
        return _gradient_suite(models)
    raise ValueError(f"unknown suite '{name}', expected one of {SUITES} or 'all'")
