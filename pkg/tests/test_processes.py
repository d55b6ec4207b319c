import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropy_gain.gaussian import LOG_2PIE, DisturbanceSpec, InputSpec, disturbance_gain
from entropy_gain.lti import from_coeffs, from_impulse
from entropy_gain.processes import (
    DuplicateSamplesWarning,
    ProcessSpec,
    adversarial_probe,
    entropy_balance_probe,
    entropy_rate,
    knn_entropy,
    random_orthonormal_rows,
    sample,
    samples_to_csv,
    uniform_input_gain_mc,
)


def test_gaussian_sample_mean():
    x = sample(ProcessSpec("gaussian_iid", {"variance": 1.0}, seed=1), 100, 10_000)
    assert x.shape == (10_000, 100)
    assert abs(x.mean()) <= 0.01


def test_uniform_sample_variance():
    x = sample(ProcessSpec("uniform_iid", {"low": 0.0, "high": 1.0}, seed=2), 10, 20_000)
    assert abs(x.var() - 1 / 12) <= 0.01


def test_sum_sample_variance():
    spec = ProcessSpec(
        "sum",
        {"components": [ProcessSpec("uniform_iid", {}, seed=3), ProcessSpec("gaussian_iid", {"variance": 0.5}, seed=4)]},
    )
    x = sample(spec, 10, 20_000)
    assert abs(x.var() - (1 / 12 + 0.5)) <= 0.02


def test_piecewise_sampler_matches_bin_probabilities():
    spec = ProcessSpec("piecewise_constant_iid", {"edges": [0, 1, 3], "probs": [0.25, 0.75], "min_width": 0.5}, seed=5)
    x = sample(spec, 4, 25_000).ravel()
    assert np.mean(x < 1) == pytest.approx(0.25, abs=0.01)
    assert x.min() >= 0 and x.max() <= 3
    assert x.var() == pytest.approx(spec.variance, rel=0.02)
    assert entropy_rate(spec) == pytest.approx(-(0.25 * math.log(0.25) + 0.75 * math.log(0.375)))


@pytest.mark.parametrize(
    "params",
    [
        {"edges": [0, 1, 1.01], "probs": [0.5, 0.5], "min_width": 0.1},
        {"edges": [0, 1], "probs": [1.0], "min_width": 0.0},
        {"edges": [0, 1, 2], "probs": [0.5, 0.6], "min_width": 0.1},
        {"edges": [0, 1, 2], "probs": [1.0], "min_width": 0.1},
    ],
)
def test_piecewise_validation(params):
    with pytest.raises(ValueError):
        ProcessSpec("piecewise_constant_iid", params)


def test_mp_filtered_requires_minimum_phase():
    base = ProcessSpec("gaussian_iid", {})
    with pytest.raises(ValueError, match="minimum phase"):
        ProcessSpec("mp_filtered", {"filter": from_impulse([1, 2]), "component": base})
    ok = ProcessSpec("mp_filtered", {"filter": from_coeffs([1, 0.5], [1, -0.2]), "component": base})
    assert ProcessSpec.from_dict(ok.to_dict()).to_dict() == ok.to_dict()


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown"):
        ProcessSpec("cauchy_iid")


def test_sampling_independent_of_worker_count():
    spec = ProcessSpec("uniform_iid", {}, seed=11)
    np.testing.assert_array_equal(sample(spec, 5, 10_000, workers=1), sample(spec, 5, 10_000, workers=4))


def test_rows_are_not_repeated_across_chunks():
    x = sample(ProcessSpec("gaussian_iid", {}, seed=0), 3, 9000)
    assert len(np.unique(x[:, 0])) == 9000


@pytest.mark.parametrize(
    "spec,dim,expected,tol",
    [
        (ProcessSpec("gaussian_iid", {}, seed=21), 1, 0.5 * LOG_2PIE, 0.05),
        (ProcessSpec("uniform_iid", {}, seed=22), 1, 0.0, 0.05),
        (ProcessSpec("gaussian_iid", {}, seed=23), 2, LOG_2PIE, 0.08),
    ],
)
def test_knn_entropy_examples(spec, dim, expected, tol):
    assert knn_entropy(sample(spec, dim, 10_000)) == pytest.approx(expected, abs=tol)


def test_knn_entropy_limits():
    with pytest.raises(ValueError, match="at least"):
        knn_entropy(np.zeros((999, 1)))
    with pytest.raises(ValueError, match="dimension"):
        knn_entropy(np.zeros((2000, 17)))


def test_knn_entropy_duplicates_warn():
    x = sample(ProcessSpec("uniform_iid", {}, seed=3), 1, 2000)
    x[:10] = x[0]
    with pytest.warns(DuplicateSamplesWarning):
        assert np.isfinite(knn_entropy(x))


def test_knn_entropy_affine_consistency():
    x = sample(ProcessSpec("gaussian_iid", {}, seed=31), 2, 5000)
    h = knn_entropy(x)
    assert knn_entropy(x + 7.5) == pytest.approx(h, abs=1e-9)
    assert knn_entropy(3.0 * x) == pytest.approx(h + 2 * math.log(3.0), abs=1e-9)


def test_random_orthonormal_rows():
    Phi = random_orthonormal_rows(4, 9, np.random.default_rng(0))
    np.testing.assert_allclose(Phi @ Phi.T, np.eye(4), atol=1e-12)


def test_gaussian_probe_is_exact():
    res = entropy_balance_probe(ProcessSpec("gaussian_iid", {"variance": 2.0}), [5, 10, 100], nu=2)
    assert res.method == "analytic"
    np.testing.assert_allclose(res.values, -(2 / res.n) * 0.5 * math.log(2 * math.pi * math.e * 2.0))
    with pytest.raises(ValueError):
        entropy_balance_probe(ProcessSpec("gaussian_iid", {}), [1], nu=1)


def test_uniform_probe_small_at_n12():
    res = entropy_balance_probe(ProcessSpec("uniform_iid", {}, seed=7), [12], nu=1, trials=20_000, workers=2)
    assert abs(res.values[0]) <= 0.1


def test_mc_probe_dimension_budget():
    with pytest.raises(ValueError, match="16"):
        entropy_balance_probe(ProcessSpec("uniform_iid", {}), [20], trials=2000)


def test_adversarial_probe_stays_away_from_zero():
    res = adversarial_probe(from_impulse([1, -2]), [10, 20, 35])
    assert np.all(res.values < -0.3)
    assert res.values[-1] == pytest.approx(-math.log(2), abs=0.1)


def test_uniform_input_matches_gaussian_closed_form():
    tf = from_impulse([1, -1.5])
    dist = DisturbanceSpec.isotropic(1, 1e-4)
    mc = uniform_input_gain_mc(tf, dist, 12, trials=100_000, seed=3)
    gauss = disturbance_gain(tf, InputSpec(1 / 12), dist, 12)
    assert abs(mc - gauss) <= 0.1


def test_uniform_input_gain_is_seed_stable():
    tf = from_impulse([1, -1.5])
    dist = DisturbanceSpec.isotropic(1, 1.0)
    a = uniform_input_gain_mc(tf, dist, 12, trials=50_000, seed=1)
    b = uniform_input_gain_mc(tf, dist, 12, trials=50_000, seed=2)
    assert a == pytest.approx(b, abs=0.01)
    with pytest.raises(ValueError, match="scalar"):
        uniform_input_gain_mc(tf, DisturbanceSpec.isotropic(2, 1.0), 12)


def test_samples_csv(tmp_path):
    x = sample(ProcessSpec("uniform_iid", {}, seed=9), 3, 4)
    samples_to_csv(x, tmp_path / "u.csv")
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "u.csv", delimiter=","), x)


@settings(max_examples=15, deadline=None)
@given(var=st.floats(0.1, 10.0), nu=st.integers(1, 3))
def test_gaussian_probe_decays_like_one_over_n(var, nu):
    res = entropy_balance_probe(ProcessSpec("gaussian_iid", {"variance": var}), [10, 20, 40, 80], nu=nu)
    np.testing.assert_allclose(res.values * res.n, res.values[0] * res.n[0], rtol=1e-12)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), workers=st.integers(2, 6))
def test_sampling_reproducible_for_any_worker_count(seed, workers):
    spec = ProcessSpec("gaussian_iid", {}, seed=seed)
    np.testing.assert_array_equal(sample(spec, 2, 9000), sample(spec, 2, 9000, workers=workers))
