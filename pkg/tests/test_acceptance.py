"""Acceptance criteria, one test each, with a pass/fail line per criterion.

Criterion 6 is hours long and runs only with ``QEC_MLE_NIGHTLY=1``.
"""

from __future__ import annotations

import math
import os
import time

import numpy as np
import pytest

from conftest import all_syndromes, random_planar_graph, truncate
from qec_mle.cli import main as cli_main
from qec_mle.decode import decode, evaluate_ler
from qec_mle.dem import sample_shots
from qec_mle.generate import generate_dem
from qec_mle.mle import (
    PriorParams,
    TrainConfig,
    exact_nll_train,
    make_backend,
    mean_relative_error,
    perturb_priors,
    train,
)
from qec_mle.oracle import brute_distribution, brute_partition, fd_grad
from qec_mle.planar import KacWardOperator, PlanarLikelihood, kac_ward_log_z
from qec_mle.tn import SAConfig, TNLikelihood, build_likelihood_network, optimize_path, path_report

RESULTS: dict[int, tuple[bool | None, str]] = {}
NIGHTLY = os.environ.get("QEC_MLE_NIGHTLY") == "1"
BRUTE_REPETITION = [(3, 1), (3, 2), (3, 3), (5, 1)]


def record(criterion: int, ok: bool | None, detail: str) -> None:
    RESULTS[criterion] = (ok, detail)
    status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    print(f"\ncriterion {criterion:2d}: {status} {detail}")


def brute_table(model, theta):
    tab = brute_distribution(model, theta)
    keys = sorted(tab)
    syn = ((np.array(keys)[:, None] >> np.arange(model.n_detectors)) & 1).astype(np.uint8)
    return syn, np.array([tab[k] for k in keys]), keys


def brute_models(seed: int):
    """Repetition and truncated surface models within the brute-force limit, random priors."""
    rng = np.random.default_rng(seed)
    reps = []
    for d, r in BRUTE_REPETITION:
        base = generate_dem("repetition", d, r, 0.01)
        reps.append(base.with_priors(rng.uniform(0.01, 0.3, base.n_mechanisms)))
    surf = []
    for n_keep in (12, 16, 20, 24):
        model = truncate(generate_dem("surface", 3, 1 if n_keep <= 20 else 2, 0.01), n_keep, rng)
        surf.append(model.with_priors(rng.uniform(0.01, 0.3, model.n_mechanisms)))
    return [(m, ("planar", "tn")) for m in reps] + [(m, ("tn",)) for m in surf]


# ---------------------------------------------------------------------------


def test_criterion_01_kac_ward_random_planar_graphs():
    rng = np.random.default_rng(2024)
    start = time.monotonic()
    worst = 0.0
    for _ in range(200):
        n_v, edges, rot = random_planar_graph(rng, 14)
        j = rng.uniform(-2, 2, len(edges))
        got = kac_ward_log_z(KacWardOperator(rot), j)
        want = brute_partition(n_v, edges, j)
        worst = max(worst, abs(got - want) / abs(want))
    elapsed = time.monotonic() - start
    ok = worst <= 1e-10 and elapsed < 60
    record(1, ok, f"200 graphs, max rel err {worst:.2e}, {elapsed:.1f} s")
    assert ok


def test_criterion_02_likelihoods_match_brute_force():
    rng = np.random.default_rng(12)
    worst = {"planar": 0.0, "tn": 0.0}
    checked = 0
    for model, backends in brute_models(11):
        theta = model.priors
        syn_all, p, _ = brute_table(model, theta)
        pick = rng.integers(0, syn_all.shape[0], 1000)
        syn, want = syn_all[pick], p[pick].sum(axis=1)
        for b in backends:
            lik = PlanarLikelihood(model) if b == "planar" else TNLikelihood(model, strategy="positive")
            got = np.exp(lik.log_prob(theta, syn))
            worst[b] = max(worst[b], float(np.max(np.abs(got - want) / want)))
        checked += 1
    # larger repetition models beyond the oracle's reach: backends against each other
    cross = 0.0
    for d, r in ((5, 2), (5, 3)):
        base = generate_dem("repetition", d, r, 0.01)
        theta = rng.uniform(0.01, 0.3, base.n_mechanisms)
        syn = sample_shots(base, 1000, seed=d + r, theta=theta).syndromes
        a = PlanarLikelihood(base).log_prob(theta, syn)
        b = TNLikelihood(base, strategy="positive").log_prob(theta, syn)
        cross = max(cross, float(np.max(np.abs(np.expm1(a - b)))))
    ok = max(worst.values()) <= 1e-10 and cross <= 1e-10
    record(2, ok, f"{checked} models x 1000 syndromes, planar {worst['planar']:.2e}, tn {worst['tn']:.2e}, d=5 cross {cross:.2e}")
    assert ok


def test_criterion_03_normalization():
    extra = generate_dem("repetition", 5, 2, 0.01)
    extra = extra.with_priors(np.random.default_rng(22).uniform(0.01, 0.3, extra.n_mechanisms))
    worst = 0.0
    count = 0
    for model, backends in brute_models(21) + [(extra, ("planar", "tn"))]:
        if model.n_detectors > 12:
            continue
        syn = all_syndromes(model.n_detectors)
        for b in backends:
            lik = PlanarLikelihood(model) if b == "planar" else TNLikelihood(model)
            total = math.fsum(np.exp(lik.log_prob(model.priors, syn)).tolist())
            worst = max(worst, abs(total - 1.0))
            count += 1
    ok = worst <= 1e-8
    record(3, ok, f"{count} model/backend pairs, max |sum - 1| {worst:.2e}")
    assert ok


def test_criterion_04_gradients_match_finite_differences():
    rng = np.random.default_rng(31)
    start = time.monotonic()
    worst = 0.0
    runs = 0
    for k in range(50):
        if k % 2 == 0:
            d, r = BRUTE_REPETITION[(k // 2) % len(BRUTE_REPETITION)]
            base = generate_dem("repetition", d, r, 0.01)
            backends = ("planar", "tn")
        else:
            base = truncate(generate_dem("surface", 3, 1, 0.01), int(rng.integers(8, 17)), rng)
            backends = ("tn",)
        theta = rng.uniform(0.01, 0.3, base.n_mechanisms)
        syn = sample_shots(base, 4, seed=k, theta=theta).syndromes
        for b in backends:
            lik = PlanarLikelihood(base) if b == "planar" else TNLikelihood(base, strategy="positive")
            _, g = lik.log_prob(theta, syn, grad=True)
            fd = fd_grad(lambda t: float(np.sum(lik.log_prob(t, syn))), theta)
            worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0))))
            runs += 1
    elapsed = time.monotonic() - start
    ok = worst <= 1e-5 and elapsed < 600
    record(4, ok, f"50 instances ({runs} backend runs), max rel err {worst:.2e}, {elapsed:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_05_toy_model_exact_nll_recovery():
    model = generate_dem("repetition", 3, 5, 0.001)
    assert model.n_detectors == 12
    truth = model.priors
    init = PriorParams.from_theta(perturb_priors(truth, 2.0, seed=5), "tn")
    start = time.monotonic()
    params, trace = exact_nll_train(model, truth, init, TrainConfig(epochs=300, learning_rate=0.05, window=20, tolerance=1e-9))
    elapsed = time.monotonic() - start
    final = mean_relative_error(params.theta, truth)
    ok = final <= 0.01 and elapsed < 1800
    record(5, ok, f"rel err {trace.initial_rel_err:.3f} -> {final:.2e} in {trace.epochs} epochs, {elapsed:.0f} s")
    assert ok


@pytest.mark.nightly
@pytest.mark.skipif(not NIGHTLY, reason="nightly only; set QEC_MLE_NIGHTLY=1")
def test_criterion_06_monte_carlo_recovery_d7_r7():
    model = generate_dem("repetition", 7, 7, 0.001)
    truth = model.priors
    batch = sample_shots(model, 1_000_000, seed=6)
    init = PriorParams.from_theta(perturb_priors(truth, 2.0, seed=6), "planar")
    cfg = TrainConfig(epochs=500, batch_size=10_000, learning_rate=1e-3)
    params, trace = train(model, batch, init, cfg, theta_ref=truth)
    final = mean_relative_error(params.theta, truth)
    ok = final <= 0.5 * trace.initial_rel_err and trace.nll[-1] < trace.initial_nll
    record(6, ok, f"rel err {trace.initial_rel_err:.3f} -> {final:.3f}, nll {trace.initial_nll:.5f} -> {trace.nll[-1]:.5f}")
    assert ok


def test_criterion_06_gate():
    if not NIGHTLY:
        record(6, None, "nightly only (set QEC_MLE_NIGHTLY=1)")


@pytest.mark.slow
def test_criterion_07_surface_recovery_tn():
    model = generate_dem("surface", 3, 2, 0.001)
    truth = model.priors
    batch = sample_shots(model, 100_000, seed=7)
    init = PriorParams.from_theta(perturb_priors(truth, 2.0, seed=7), "tn")
    cfg = TrainConfig(epochs=1000, batch_size=10_000, learning_rate=1e-3)
    start = time.monotonic()
    params, trace = train(model, batch, init, cfg, theta_ref=truth)
    elapsed = time.monotonic() - start
    final = mean_relative_error(params.theta, truth)
    ok = final * 2 <= trace.initial_rel_err and elapsed < 7200
    record(7, ok, f"rel err {trace.initial_rel_err:.3f} -> {final:.3f} in {trace.epochs} epochs, {elapsed:.0f} s")
    assert ok


def test_criterion_08_decoders_match_brute_force():
    models = [(m, b) for m, b in brute_models(81) if m.n_detectors <= 12 and m.has_logical]
    mismatches = 0
    checked = 0
    for model, backends in models:
        theta = model.priors
        syn = all_syndromes(model.n_detectors)
        tab = brute_distribution(model, theta)
        codes = syn @ (1 << np.arange(model.n_detectors))
        p = np.array([tab.get(int(c), (0.0, 0.0)) for c in codes])
        truth = (p[:, 1] > p[:, 0]).astype(np.uint8)
        near_tie = np.abs(p[:, 0] - p[:, 1]) <= 1e-12 * p.sum(axis=1)
        for b in backends:
            lik = PlanarLikelihood(model) if b == "planar" else TNLikelihood(model, strategy="positive")
            pred = decode(model, theta, syn, b, lik).predicted_logical
            mismatches += int(np.count_nonzero((pred != truth) & ~near_tie))
            checked += syn.shape[0]
    ok = mismatches == 0
    record(8, ok, f"{len(models)} models, {checked} syndrome decodes, {mismatches} mismatches")
    assert ok


@pytest.mark.slow
def test_criterion_09_better_priors_lower_ler():
    model = generate_dem("surface", 3, 5, 0.001)
    truth = model.priors
    train_batch = sample_shots(model, 100_000, seed=90)
    test_batch = sample_shots(model, 100_000, seed=91)
    perturbed = perturb_priors(truth, 2.0, seed=92)
    lik = TNLikelihood(model)
    init = PriorParams.from_theta(perturbed, "tn")
    cfg = TrainConfig(epochs=20, batch_size=10_000, learning_rate=1e-2)
    params, trace = train(model, train_batch, init, cfg, theta_ref=truth, likelihood=lik)
    rec = evaluate_ler(model, params.theta, test_batch, "tn", lik)
    pert = evaluate_ler(model, perturbed, test_batch, "tn", lik)
    separated = not rec.overlaps(pert)
    ok = rec.ler <= pert.ler or not separated
    verdict = "separated" if separated else "statistical tie (Wilson intervals overlap)"
    record(
        9,
        ok,
        f"LER recovered {rec.ler:.5f} [{rec.wilson_low:.5f}, {rec.wilson_high:.5f}] vs perturbed "
        f"{pert.ler:.5f} [{pert.wilson_low:.5f}, {pert.wilson_high:.5f}]: {verdict}; "
        f"prior rel err {trace.initial_rel_err:.3f} -> {trace.rel_err[-1]:.3f}",
    )
    assert ok


@pytest.mark.slow
def test_criterion_10_pathfind_d5_r25():
    model = generate_dem("surface", 5, 25, 0.001)
    net = build_likelihood_network(model)
    threads = min(8, os.cpu_count() or 1)
    cfg = SAConfig(seed=0, n_chains=threads, threads=threads, max_temperatures=40)
    start = time.monotonic()
    tree = optimize_path(net, cfg)
    elapsed = time.monotonic() - start
    rep = path_report(net, tree, cfg)
    ok = rep.total_flops <= 1e13 and rep.max_tensor_elems <= 2**31 and elapsed < 3600
    record(
        10,
        ok,
        f"{net.n_leaves} leaves, flops {rep.total_flops:.3e}, max 2^{math.log2(rep.max_tensor_elems):.0f}, "
        f"{threads} thread(s), {elapsed:.0f} s",
    )
    assert ok


def _run_cli(argv) -> bytes:
    import contextlib
    import io

    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        code = cli_main([str(a) for a in argv])
    assert code == 0, buf.getvalue()
    return buf.getvalue().encode()


def test_criterion_11_cli_determinism(tmp_path):
    def session(root):
        root.mkdir()
        dem, shots = root / "m.dem", root / "s.01"
        outs = [
            _run_cli(["gen", "--code", "repetition", "-d", 3, "-r", 2, "--error-rate", 0.02, "--out", dem]),
            _run_cli(["sample", "--dem", dem, "--shots", 2000, "--seed", 4, "--out", shots]),
            _run_cli(["estimate", "--dem", dem, "--shots", shots, "--seed", 4, "--epochs", 3, "--batch-size", 500,
                      "--lr", 0.01, "--threads", 1, "--out", root / "e.dem", "--trace", root / "t.csv"]),
            _run_cli(["decode", "--dem", root / "e.dem", "--shots", shots, "--backend", "planar", "--out", root / "p.01"]),
            _run_cli(["eval", "--dem", root / "e.dem", "--shots", shots, "--out", root / "ler.json"]),
            _run_cli(["pathfind", "--dem", dem, "--seed", 4, "--proposals", 200, "--temperatures", 10, "--threads", 1,
                      "--out", root / "tree.json"]),
            _run_cli(["verify", "--suite", "planar", "--seed", 4, "--cases", 2]),
        ]
        files = {p.name: p.read_bytes() for p in sorted(root.iterdir())}
        return [o.replace(str(root).encode(), b"<root>") for o in outs], files

    out_a, files_a = session(tmp_path / "a")
    out_b, files_b = session(tmp_path / "b")
    ok = out_a == out_b and files_a == files_b
    record(11, ok, f"7 commands, {len(files_a)} output files, identical stdout and files: {ok}")
    assert ok


def test_zz_summary():
    """Echo every recorded criterion once more in order."""
    lines = []
    for c in range(1, 12):
        ok, detail = RESULTS.get(c, (None, "not run"))
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        lines.append(f"criterion {c:2d}: {status} {detail}")
    print("\n" + "\n".join(lines))
