from __future__ import annotations

import math

import numpy as np
import pytest

from qec_mle.dem import DetectorErrorModel
from qec_mle.generate import generate_dem
from qec_mle.oracle import (
    brute_distribution,
    brute_joint,
    brute_ml_decode,
    brute_partition,
    brute_prob,
    char_sum_prob,
    fd_grad,
)

from conftest import all_syndromes, truncate


def test_single_mechanism():
    model = DetectorErrorModel.from_mechanisms([(0.1, [0], False)])
    assert brute_prob(model, [1]) == pytest.approx(0.1, rel=1e-15)
    assert brute_prob(model, [0]) == pytest.approx(0.9, rel=1e-15)


def test_total_probability():
    base = generate_dem("repetition", 3, 3, 0.001)
    model = base.with_priors(np.random.default_rng(0).uniform(0.01, 0.3, base.n_mechanisms))
    total = math.fsum(p0 + p1 for p0, p1 in brute_distribution(model).values())
    assert abs(total - 1) < 1e-12


def test_character_sum_agrees():
    rng = np.random.default_rng(4)
    for model in [generate_dem("repetition", 3, 3, 0.05), truncate(generate_dem("surface", 3, 2, 0.01), 20, rng)]:
        theta = rng.uniform(0.05, 0.4, model.n_mechanisms)
        table = brute_distribution(model, theta)
        for key in list(table)[:40]:
            s = [(key >> j) & 1 for j in range(model.n_detectors)]
            assert char_sum_prob(model, s, theta) == pytest.approx(sum(table[key]), rel=1e-12)


def test_ml_decode_cases():
    no_logical = DetectorErrorModel.from_mechanisms([(0.1, [0], False), (0.2, [0, 1], False)])
    for s in all_syndromes(2):
        assert brute_joint(no_logical, s)[1] == 0.0
        assert brute_ml_decode(no_logical, s) == 0
    one = DetectorErrorModel.from_mechanisms([(0.1, [0], True)])
    assert brute_joint(one, [1]) == pytest.approx((0.0, 0.1))
    assert brute_ml_decode(one, [1]) == 1


def test_too_large():
    mechs = [(0.1, [j for j in range(5) if (k >> j) & 1], False) for k in range(1, 32)]
    model = DetectorErrorModel.from_mechanisms(mechs)
    with pytest.raises(ValueError):
        brute_prob(model, [0] * 5)


def test_partition_closed_forms():
    assert brute_partition(2, [(0, 1)], [0.7]) == pytest.approx(math.log(4 * math.cosh(0.7)))
    assert brute_partition(5, [(0, 1), (1, 2)], [0.0, 0.0]) == pytest.approx(5 * math.log(2))
    assert brute_partition(2, [(0, 1)], [0.7], pinned={0: 1, 1: 1}) == pytest.approx(0.7)


def test_fd_grad():
    theta = np.array([0.2, 0.3])
    assert np.allclose(fd_grad(lambda t: t[0], theta), [1, 0])
    assert np.allclose(fd_grad(lambda t: 3.0, theta), [0, 0])
