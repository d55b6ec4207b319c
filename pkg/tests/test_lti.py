import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropy_gain.lti import (
    NearUnitCircleWarning,
    TransferFunction,
    blaschke_product,
    closed_loop,
    factorize,
    from_coeffs,
    from_impulse,
    impulse_response,
    jensen_log_integral,
    make_tf,
    natural_response_maps,
    nmp_summary,
)


def test_fir_from_roots():
    tf = make_tf([-2], [0], 1)
    np.testing.assert_allclose(tf.b, [1, 2])
    np.testing.assert_allclose(tf.a, [1, 0])
    assert tf.is_biproper and not tf.is_minimum_phase and tf.is_stable


def test_one_pole_filter():
    tf = make_tf([], [0.5], 1)
    assert tf.is_stable and tf.is_minimum_phase and tf.relative_degree == 1


def test_mixed_zeros_summary():
    s = nmp_summary(make_tf([2, 0.5], [0, 0], 1))
    assert (s.m, s.M, s.iota) == (1, 1, (1,))
    assert s.log_sum == pytest.approx(math.log(2))


@pytest.mark.parametrize(
    "zeros,poles",
    [([1.0], [0.0]), ([], [np.exp(0.3j), np.exp(-0.3j)]), ([-1], [0.2])],
)
def test_unit_circle_roots_rejected(zeros, poles):
    with pytest.raises(ValueError, match="unit circle"):
        make_tf(zeros, poles)


def test_noncausal_rejected():
    with pytest.raises(ValueError, match="non-causal"):
        make_tf([0.5, 0.2], [0.1])


def test_unpaired_complex_root_rejected():
    with pytest.raises(ValueError):
        make_tf([0.5 + 0.5j], [0.1])


@pytest.mark.parametrize(
    "tf,n,expected",
    [
        (from_impulse([1, 2]), 4, [1, 2, 0, 0]),
        (from_coeffs([1], [1, -0.5]), 4, [1, 0.5, 0.25, 0.125]),
        (from_coeffs([1, 2], [1, -0.5]), 3, [1, 2.5, 1.25]),
    ],
)
def test_impulse_response(tf, n, expected):
    np.testing.assert_allclose(impulse_response(tf, n).samples, expected, atol=1e-14)


def test_impulse_response_matches_series_expansion():
    # coefficient recursion of b/a, written out independently of lfilter
    b, a = np.array([1.0, -0.3, 0.2]), np.array([1.0, -0.9, 0.2])
    n = 25
    h = np.zeros(n)
    for k in range(n):
        acc = b[k] if k < len(b) else 0.0
        for i in range(1, len(a)):
            if k - i >= 0:
                acc -= a[i] * h[k - i]
        h[k] = acc
    np.testing.assert_allclose(impulse_response(from_coeffs(b, a), n).samples, h, rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize(
    "tf,value",
    [(make_tf([], [], 1.0), 0.0), (from_impulse([1, 2]), math.log(2)), (from_impulse([1, 0.5]), 0.0)],
)
def test_jensen_examples(tf, value):
    assert jensen_log_integral(tf, 1 << 16).value == pytest.approx(value, abs=1e-9)


def test_jensen_rejects_coarse_grid():
    with pytest.raises(ValueError):
        jensen_log_integral(from_impulse([1, 2]), 256)


def test_jensen_warns_near_unit_circle():
    with pytest.warns(NearUnitCircleWarning):
        res = jensen_log_integral(make_tf([1.0005], [0]))
    assert res.near_unit_circle


def test_nmp_summary_repeated_zeros():
    s = nmp_summary(make_tf([3, 3, 1.5], [0, 0, 0]))
    assert (s.m, s.M, s.multiplicities, s.iota) == (3, 2, (2, 1), (1, 1, 2))
    assert s.log_sum == pytest.approx(2 * math.log(3) + math.log(1.5))
    assert s.partial_log_sum(2) == pytest.approx(2 * math.log(3))


def test_nmp_summary_minimum_phase():
    s = nmp_summary(make_tf([0.9, 0.2], [0, 0]))
    assert s.m == 0 and s.log_sum == 0.0


def test_factorize_poles_zeros():
    P, N = factorize(from_coeffs([1, 2], [1, -0.5]), "poles_zeros")
    np.testing.assert_allclose(np.trim_zeros(P.b, "b"), [1])
    np.testing.assert_allclose(P.a, [1, -0.5])
    np.testing.assert_allclose(np.trim_zeros(N.b, "b"), [1, 2])


def test_factorize_mp_nmp():
    G = from_impulse(np.convolve([1, 2], [1, 0.3]))
    G_mp, F = factorize(G, "mp_nmp")
    np.testing.assert_allclose(F.b, [1, 2])
    np.testing.assert_allclose(np.trim_zeros(G_mp.b, "b"), [1, 0.3])
    with pytest.raises(ValueError):
        factorize(from_coeffs([1], [1, -2]), "mp_nmp")


def test_blaschke_examples():
    B = blaschke_product([2])
    z = np.exp(0.7j)
    assert abs(B(z)) == pytest.approx(1.0, abs=1e-12)
    assert B(z) == pytest.approx((z - 2) / (2 * (z - 0.5)))
    assert B.g0 == pytest.approx(0.5)
    E = blaschke_product([])
    assert E(z) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        blaschke_product([0.5])


def test_closed_loop_examples():
    P = from_coeffs([0, 1], [1, -2])
    cl = closed_loop(P, make_tf([], [], 1.5))
    np.testing.assert_allclose(cl.tf.b, [1, -2])
    np.testing.assert_allclose(cl.tf.a, [1, -0.5])
    assert nmp_summary(cl.tf).distinct[0] == pytest.approx(2)
    stable_plant = closed_loop(from_coeffs([0, 1], [1, -0.5]), make_tf([], [], 0.0))
    assert stable_plant.tf(np.exp(0.4j)) == pytest.approx(1.0)
    with pytest.raises(ValueError, match="unstable"):
        closed_loop(P, make_tf([], [], 0.0))


def test_json_round_trip_and_unknown_fields():
    tf = make_tf([0.5 + 0.2j, 0.5 - 0.2j], [0.1, -0.3], 2.0)
    back = TransferFunction.from_json(tf.to_json())
    np.testing.assert_allclose(back.b, tf.b)
    np.testing.assert_allclose(back.a, tf.a)
    assert json.loads(tf.to_json())["zeros"][0] == [0.5, 0.2] or json.loads(tf.to_json())["zeros"][0] == [0.5, -0.2]
    with pytest.raises(ValueError, match="unknown"):
        TransferFunction.from_dict({"zeros": [], "poles": [], "gain": 1, "colour": "red"})


def test_natural_response_maps_match_direct_simulation():
    tf = from_coeffs([1.0, -0.4, 0.1], [1.0, -0.5, 0.06])
    n = 12
    C_tilde, C = natural_response_maps(tf, n)
    x0 = np.array([0.7, -1.2])  # (w_{-1}, w_0)
    a, b = tf.a, tf.b
    w = {-1: x0[0], 0: x0[1]}
    y = []
    for k in range(1, n + 1):
        w[k] = -a[1] * w[k - 1] - a[2] * w[k - 2]
        y.append(b[0] * w[k] + b[1] * w[k - 1] + b[2] * w[k - 2])
    N = np.zeros((n, n))
    for i in range(n):
        for j in range(max(0, i - 2), i + 1):
            N[i, j] = b[i - j]
    np.testing.assert_allclose(N @ C_tilde @ x0 + C @ x0, y, atol=1e-12)


# -- property tests ----------------------------------------------------------

stable_mag = st.one_of(st.floats(0.2, 0.9), st.floats(-0.9, -0.2))
any_mag = st.one_of(st.floats(0.2, 0.9), st.floats(1.1, 3.0), st.floats(-3.0, -1.1), st.floats(-0.9, -0.2))


@settings(max_examples=40, deadline=None)
@given(zeros=st.lists(any_mag, min_size=1, max_size=5), data=st.data())
def test_jensen_equals_nmp_log_sum(zeros, data):
    poles = data.draw(st.lists(stable_mag, min_size=len(zeros), max_size=len(zeros)))
    tf = make_tf(zeros, poles, 1.0)
    assert abs(jensen_log_integral(tf).value - nmp_summary(tf).log_sum) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(zeros=st.lists(any_mag, min_size=1, max_size=4), c=st.floats(0.01, 100.0))
def test_gain_scaling_shifts_jensen(zeros, c):
    tf = make_tf(zeros, [0.0] * len(zeros), 1.0)
    assert jensen_log_integral(tf.scaled(c)).value - jensen_log_integral(tf).value == pytest.approx(math.log(c), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.one_of(st.floats(1.1, 4.0), st.floats(-4.0, -1.1)), min_size=1, max_size=4))
def test_blaschke_is_all_pass(poles):
    B = blaschke_product(poles)
    w = 2 * np.pi * np.arange(4096) / 4096
    assert np.max(np.abs(np.abs(B(np.exp(1j * w))) - 1)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(zeros=st.lists(any_mag, min_size=1, max_size=4), data=st.data())
def test_factorize_round_trip(zeros, data):
    poles = data.draw(st.lists(stable_mag, min_size=len(zeros), max_size=len(zeros)))
    tf = make_tf(zeros, poles, 1.7)
    for mode in ("poles_zeros", "mp_nmp"):
        f1, f2 = factorize(tf, mode)
        z = np.exp(2j * np.pi * np.arange(64) / 64)
        np.testing.assert_allclose((f1 * f2)(z), tf(z), rtol=1e-10)


@settings(max_examples=30, deadline=None)
@given(p=st.one_of(st.floats(1.1, 3.0), st.floats(-3.0, -1.1)), c=st.floats(-0.9, 0.9))
def test_closed_loop_keeps_unstable_poles_as_zeros(p, c):
    P = from_coeffs([0, 1], [1, -p])
    T = make_tf([], [], p - c)  # closed-loop pole lands at c
    cl = closed_loop(P, T)
    assert np.min(np.abs(cl.tf.zeros - p)) <= 1e-8
