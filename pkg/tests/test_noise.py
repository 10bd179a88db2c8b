import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhnlab.noise import (AlignmentError, OutOfWindowError, OuTrace, WienerPath, generate_path,
                          ou_direct, ou_evaluate, ou_quadrature, ou_recursive, ou_trace,
                          path_metadata, path_value, refine, replay_path, tempered_radius,
                          theta_shift, truncation_horizon)


def test_small_window_shape_and_origin():
    p = generate_path(7, 0.5, 1.0, 1.0)
    assert p.increments_1.size == p.increments_2.size == 4
    assert path_value(p, 0.0) == (0.0, 0.0)


def test_empty_window():
    p = generate_path(3, 0.1, 0.0, 0.0)
    assert p.increments_1.size == 0
    assert path_value(p, 0.0) == (0.0, 0.0)
    with pytest.raises(OutOfWindowError):
        path_value(p, 0.1)


def test_first_grid_value_and_midpoint():
    p = generate_path(11, 0.25, 1.0, 1.0)
    o = p.origin
    w = path_value(p, 0.25)
    assert w == (p.increments_1[o], p.increments_2[o])
    a, b = path_value(p, 0.5), path_value(p, 0.75)
    mid = path_value(p, 0.625)
    assert mid[0] == pytest.approx(0.5 * (a[0] + b[0]), abs=1e-15)
    assert mid[1] == pytest.approx(0.5 * (a[1] + b[1]), abs=1e-15)


def test_prefix_consistency_when_window_grows():
    a = generate_path(5, 0.01, 1.0, 1.0)
    b = generate_path(5, 0.01, 3.0, 2.0)
    for t in (-1.0, -0.37, 0.0, 0.52, 1.0):
        assert path_value(a, t) == path_value(b, t)


def test_different_seeds_differ():
    assert path_value(generate_path(1, 0.1, 1, 1), 1.0) != path_value(generate_path(2, 0.1, 1, 1), 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(-20, 20), st.integers(-20, 20))
def test_shift_group_property(i, j):
    p = generate_path(9, 0.1, 5.0, 5.0)
    s, t = i * 0.1, j * 0.1
    a = theta_shift(theta_shift(p, s), t)
    b = theta_shift(p, s + t)
    assert a.origin == b.origin
    assert path_value(theta_shift(p, s), 0.0) == (0.0, 0.0)


def test_shift_zero_is_identity_and_shift_formula():
    p = generate_path(2, 0.1, 2.0, 2.0)
    assert theta_shift(p, 0.0).origin == p.origin
    q = theta_shift(p, 0.5)
    for tau in (-1.0, -0.3, 0.4):
        lhs = path_value(q, tau)
        w_ts = path_value(p, tau + 0.5)
        w_s = path_value(p, 0.5)
        assert lhs[0] == pytest.approx(w_ts[0] - w_s[0], abs=1e-12)


def test_misaligned_and_out_of_window_shift():
    p = generate_path(2, 0.1, 1.0, 1.0)
    with pytest.raises(AlignmentError):
        theta_shift(p, 0.05)
    with pytest.raises(OutOfWindowError):
        theta_shift(p, 1.5)


def test_refine_keeps_path_values():
    p = generate_path(4, 0.1, 1.0, 1.0)
    r = refine(p, 4)
    for t in (-1.0, -0.35, 0.0, 0.15, 0.8):
        assert path_value(r, t)[0] == pytest.approx(path_value(p, t)[0], abs=1e-13)


def test_zero_path_gives_zero_ou():
    p = WienerPath.from_increments(np.zeros(4000), np.zeros(4000), 0.01, 2000)
    assert np.all(ou_evaluate(p, 1.0, 1, [0.0, 1.0]) == 0.0)


def test_constant_history_quadrature_closed_form():
    # shifted path equal to c on the whole history window
    rate, dt, c = 1.5, 1e-3, 0.7
    T = truncation_horizon(rate, dt)
    K = int(round(T / dt))
    y = ou_quadrature(np.full(K + 1, c), rate, dt)
    exact = -c * (1 - math.exp(-rate * T))
    assert y == pytest.approx(exact, abs=rate**2 * dt**2 * c)


def test_fft_direct_and_recursive_routes_agree():
    p = generate_path(21, 0.01, 30.0, 5.0)
    ts = np.round(np.arange(0, 5.0, 0.5), 10)
    fft = ou_evaluate(p, 1.0, 1, ts)
    direct = np.array([ou_direct(p, 1.0, 1, t) for t in ts])
    rec = ou_recursive(p, 1.0, 1, ts)
    assert np.max(np.abs(fft - direct)) < 1e-10
    assert np.max(np.abs(fft - rec)) < 1e-4


def test_ou_is_shift_covariant():
    p = generate_path(8, 0.01, 30.0, 5.0)
    a = ou_evaluate(p, 2.0, 2, [1.0, 2.5])
    b = ou_evaluate(theta_shift(p, 1.0), 2.0, 2, [0.0, 1.5])
    assert np.array_equal(a, b)


def test_ou_needs_history():
    p = generate_path(8, 0.01, 1.0, 1.0)
    with pytest.raises(OutOfWindowError):
        ou_evaluate(p, 1.0, 1, [0.0])


def test_ou_component_checked():
    p = generate_path(8, 0.01, 30.0, 1.0)
    with pytest.raises(ValueError):
        ou_evaluate(p, 1.0, 3, [0.0])


def _trace(t, y1, y2):
    t = np.asarray(t, float)
    return OuTrace(1.0, 1.0, t, np.asarray(y1, float), np.asarray(y2, float), 4.0, 1.0, 0.0, 0.0)


def test_tempered_radius_trivial_cases():
    assert tempered_radius(_trace([0, -1], [0, 0], [0, 0]), 4, 1.0) == 0.0
    assert tempered_radius(_trace([0.0], [1.0], [0.0]), 4, 1.0) == 2.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_tempered_radius_brute_force(seed):
    rng = np.random.default_rng(seed)
    t = -np.arange(20) * 0.3
    y1, y2 = rng.standard_normal(20), rng.standard_normal(20)
    brute = max(math.exp(-0.5 * abs(ti)) * (a * a + a**4 + b * b + b**4)
                for ti, a, b in zip(t, np.abs(y1), np.abs(y2)))
    assert tempered_radius(_trace(t, y1, y2), 4, 1.0) == pytest.approx(brute, rel=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_tempered_radius_shift_inequality(seed, k):
    # moving the window by s changes the weight by at most exp(eta s / 2)
    rng = np.random.default_rng(seed)
    dt = 0.1
    t = -np.arange(200) * dt
    y1, y2 = rng.standard_normal(200), rng.standard_normal(200)
    full = tempered_radius(_trace(t, y1, y2), 4, 1.0)
    shifted = tempered_radius(_trace(t[:-k] , y1[k:], y2[k:]), 4, 1.0)
    assert shifted <= math.exp(0.5 * k * dt) * full * (1 + 1e-12)


@pytest.mark.parametrize("p,eta", [(1.5, 1.0), (4, 0.0)])
def test_tempered_radius_rejects_bad_params(p, eta):
    with pytest.raises(ValueError):
        tempered_radius(_trace([0.0], [1.0], [0.0]), p, eta)
    with pytest.raises(ValueError):
        tempered_radius(_trace([], [], []), 4, 1.0)


def test_ou_trace_and_replay():
    p = theta_shift(generate_path(13, 0.01, 25.0, 2.0), 1.0)
    tr = ou_trace(p, 1.0, 2.0, [-1.0, 0.0], 4)
    assert tr.r_hat > 0 and tr.truncation_bound < 1e-6
    q = replay_path(path_metadata(p))
    assert np.array_equal(ou_evaluate(q, 1.0, 1, [0.0]), ou_evaluate(p, 1.0, 1, [0.0]))
