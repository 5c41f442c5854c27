from __future__ import annotations

import numpy as np
import pytest

from qec_mle.generate import generate_dem


@pytest.mark.parametrize("d,r", [(3, 1), (3, 5), (5, 3), (7, 7)])
def test_repetition_detector_count(d, r):
    model = generate_dem("repetition", d, r, 0.001)
    assert model.n_detectors == (d - 1) * (r + 1)
    assert model.is_graphlike


def test_toy_model_size():
    assert generate_dem("repetition", 3, 5, 0.001).n_detectors == 12


def test_surface_regression_counts():
    model = generate_dem("surface", 3, 2, 0.001)
    assert (model.n_detectors, model.n_mechanisms) == (16, 107)
    assert max(len(m.detectors) for m in model.mechanisms) == 4
    assert model.has_logical


def test_metadata_and_coords():
    model = generate_dem("surface", 3, 3, 0.002)
    assert model.metadata == {"code": "surface", "distance": 3, "rounds": 3, "error_rate": 0.002}
    rounds = sorted({c[-1] for c in model.detector_coords})
    assert rounds == [0.0, 1.0, 2.0, 3.0]


def test_deterministic():
    assert generate_dem("surface", 3, 2, 0.001) == generate_dem("surface", 3, 2, 0.001)


@pytest.mark.parametrize("args", [("color", 3, 2, 0.001), ("surface", 4, 2, 0.001), ("surface", 3, 0, 0.001), ("repetition", 3, 2, 0.7)])
def test_invalid_parameters(args):
    with pytest.raises(ValueError):
        generate_dem(*args)


@pytest.mark.parametrize("code,d,r,p", [("repetition", 3, 2, 0.001), ("repetition", 5, 3, 0.01), ("surface", 3, 2, 0.001), ("surface", 5, 3, 0.003)])
def test_matches_stim(code, d, r, p):
    stim = pytest.importorskip("stim")
    from qec_mle.dem import parse_dem

    task = {"repetition": "repetition_code:memory", "surface": "surface_code:rotated_memory_z"}[code]
    circuit = stim.Circuit.generated(
        task,
        distance=d,
        rounds=r,
        after_clifford_depolarization=p,
        before_round_data_depolarization=p,
        before_measure_flip_probability=p,
        after_reset_flip_probability=p,
    )
    ref = parse_dem(str(circuit.detector_error_model(decompose_errors=False).flattened()))
    ours = generate_dem(code, d, r, p)
    assert ref.n_detectors == ours.n_detectors
    index = {c: j for j, c in enumerate(ours.detector_coords)}
    relabel = [index[c] for c in ref.detector_coords]
    want = {(tuple(sorted(relabel[x] for x in m.detectors)), m.flips_logical): m.prob for m in ref.mechanisms}
    got = {m.symptom: m.prob for m in ours.mechanisms}
    assert set(want) == set(got)
    assert max(abs(want[k] / got[k] - 1) for k in want) < 1e-12
