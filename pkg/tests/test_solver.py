import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhnlab.model import Nonlinearity, default_model
from fhnlab.noise import generate_path, theta_shift
from fhnlab.solver import (DivergenceError, SolveConfig, StatePair, assemble_uv, check_alignment,
                           noise_fields, phi, phi_pullback, solve_forward, solve_split, step,
                           trajectory_csv_text, trajectory_rows, weighted_energy)
from fhnlab.spatial import Field, Grid, norm_l2

from oracles import linear_mode_error, sine_mode


@pytest.fixture(scope="module")
def path():
    return generate_path(3, 1e-3, 25.0, 3.0)


def _init(grid, a=1.0, b=0.5):
    return StatePair(sine_mode(grid) * a, sine_mode(grid) * b)


def test_zero_duration_returns_initial(small_model):
    s = _init(small_model.grid)
    out = solve_forward(s, None, small_model, Nonlinearity.cubic(), SolveConfig(1e-3), 0.0)
    assert out == [s]


def test_zero_state_is_fixed(small_model):
    spec = small_model.without_forcing().without_noise()
    z = Field.zeros(spec.grid)
    out = solve_forward(StatePair(z, z), None, spec, Nonlinearity.cubic(), SolveConfig(1e-2), 1.0)
    assert np.all(out[-1].u_tilde.values == 0) and np.all(out[-1].v_tilde.values == 0)


@pytest.mark.parametrize("scheme,order", [("imex-be", 1), ("imex-cn", 2)])
def test_linear_mode_convergence_order(scheme, order):
    e1, e2 = linear_mode_error(scheme, 0.01), linear_mode_error(scheme, 0.005)
    assert e2 < e1
    assert abs(e1 / e2 - 2**order) <= 0.2 * 2**order


def test_diffusion_mode_decay_rate():
    grid = Grid(1, 5.0, 256)
    spec = default_model(grid, alpha=0.0, beta=0.0, g="zero", h="zero", phi1="zero",
                         phi2="zero")
    out = solve_forward(_init(grid), None, spec, Nonlinearity.zero(), SolveConfig(1e-3, "imex-be", 100),
                        1.0)
    rate = -math.log(norm_l2(out[-1].u_tilde) / norm_l2(out[0].u_tilde))
    assert rate == pytest.approx(spec.lam + (math.pi / grid.L) ** 2, rel=0.02)


@pytest.mark.parametrize("scheme", ["imex-be", "imex-cn"])
def test_unforced_energy_nonincreasing(small_model, scheme):
    spec = small_model.without_forcing().without_noise()
    out = solve_forward(_init(spec.grid, 3.0, -2.0), None, spec, Nonlinearity.cubic(),
                        SolveConfig(1e-3, scheme, 20), 2.0)
    E = [weighted_energy(spec, s.u_tilde, s.v_tilde) for s in out]
    assert all(b < a for a, b in zip(E, E[1:]))


def test_runs_are_bit_identical(small_model, path):
    cfg = SolveConfig(1e-3, "imex-be", 50)
    a = solve_forward(_init(small_model.grid), path, small_model, Nonlinearity.cubic(), cfg, 1.0)
    b = solve_forward(_init(small_model.grid), generate_path(3, 1e-3, 25.0, 3.0), small_model,
                      Nonlinearity.cubic(), cfg, 1.0)
    assert all(np.array_equal(x.u_tilde.values, y.u_tilde.values) for x, y in zip(a, b))


@pytest.mark.parametrize("scheme", ["imex-be", "imex-cn"])
@settings(max_examples=8, deadline=None)
@given(st.integers(0, 400), st.integers(1, 400))
def test_cocycle_property(scheme, small_model, path, i, j):
    cfg = SolveConfig(1e-3, scheme)
    s, t = i * 1e-3, j * 1e-3
    u0, v0 = sine_mode(small_model.grid) * 2.0, sine_mode(small_model.grid) * -1.0
    nl = Nonlinearity.cubic()
    whole = phi(s + t, path, u0, v0, small_model, nl, cfg)
    mid = phi(s, path, u0, v0, small_model, nl, cfg)
    two = phi(t, theta_shift(path, s), *mid, small_model, nl, cfg)
    err = math.hypot(norm_l2(whole[0] - two[0]), norm_l2(whole[1] - two[1]))
    assert err <= 1e-10 * (1 + math.hypot(norm_l2(u0), norm_l2(v0)))


def test_phi_zero_time_is_identity(small_model, path):
    u0, v0 = sine_mode(small_model.grid), sine_mode(small_model.grid) * 2
    out = phi(0.0, path, u0, v0, small_model, Nonlinearity.cubic(), SolveConfig(1e-3))
    assert out[0] is u0 and out[1] is v0


def test_pullback_on_zero_path_is_forward(small_model):
    u0, v0 = sine_mode(small_model.grid), sine_mode(small_model.grid) * 2
    cfg = SolveConfig(1e-3)
    a = phi(0.5, None, u0, v0, small_model, Nonlinearity.cubic(), cfg)
    b = phi_pullback(0.5, None, u0, v0, small_model, Nonlinearity.cubic(), cfg)
    assert np.array_equal(a[0].values, b[0].values)


def test_lipschitz_in_initial_data(small_model, path):
    eps = 1e-6
    u0, v0 = sine_mode(small_model.grid) * 2, sine_mode(small_model.grid)
    cfg = SolveConfig(1e-3)
    nl = Nonlinearity.cubic()
    a = phi(1.0, path, u0, v0, small_model, nl, cfg)
    b = phi(1.0, path, u0 + sine_mode(small_model.grid) * eps, v0, small_model, nl, cfg)
    d = norm_l2(a[0] - b[0]) + norm_l2(a[1] - b[1])
    assert 0 < d <= 10 * eps * norm_l2(sine_mode(small_model.grid))


@pytest.mark.parametrize("dt", [2e-3, 5e-4])
def test_dt_and_path_resolution_may_differ(small_model, path, dt):
    out = solve_forward(_init(small_model.grid), path, small_model, Nonlinearity.cubic(),
                        SolveConfig(dt), 0.1)
    assert out[-1].t == pytest.approx(0.1)


def test_alignment_rules():
    assert check_alignment(4e-3, 1e-3) == 2
    assert check_alignment(2.5e-4, 1e-3) == -2
    with pytest.raises(ValueError):
        check_alignment(3e-3, 1e-3)


def test_divergence_raised(small_model):
    with pytest.raises(DivergenceError):
        solve_forward(_init(small_model.grid, 50.0), None, small_model, Nonlinearity.cubic(),
                      SolveConfig(0.5), 20.0)


def test_split_v1_exact_decay(small_model):
    spec = small_model
    v0 = sine_mode(spec.grid) * 3.0
    n = 1000
    u_traj = [np.zeros(spec.grid.size)] * (n + 1)
    out = solve_split(v0, u_traj, None, spec, SolveConfig(1e-3, record_every=n), 1.0)
    ratio = norm_l2(out[-1].v1) / norm_l2(v0)
    assert ratio == pytest.approx(math.exp(-spec.delta), rel=1e-12)


def test_split_zero_sources(small_model):
    spec = small_model.without_forcing().without_noise()
    u_traj = [np.zeros(spec.grid.size)] * 101
    out = solve_split(sine_mode(spec.grid), u_traj, None, spec, SolveConfig(1e-3), 0.1)
    assert all(np.all(s.v2.values == 0) for s in out)


@pytest.mark.parametrize("scheme", ["imex-be", "imex-cn"])
def test_split_superposition(small_model, path, scheme):
    spec, nl = small_model, Nonlinearity.cubic()
    errs = []
    for dt in (2e-3, 1e-3):
        cfg = SolveConfig(dt, scheme)
        init = _init(spec.grid, 1.0, 2.0)
        traj = solve_forward(init, path, spec, nl, cfg, 1.0)
        split = solve_split(init.v_tilde, [s.u_tilde for s in traj], path, spec, cfg, 1.0)
        errs.append(max(norm_l2(a.v1 + a.v2 - b.v_tilde) for a, b in zip(split, traj)))
    if scheme == "imex-be":
        assert max(errs) < 1e-12
    else:
        assert errs[1] < 0.6 * errs[0]


def test_step_matches_solver(small_model):
    spec, nl = small_model, Nonlinearity.cubic()
    init = _init(spec.grid)
    z1, z2 = noise_fields(spec, 0.2, -0.1)
    a = step(init, spec, nl, z1, z2, SolveConfig(1e-3))
    assert a.t == pytest.approx(1e-3)
    with pytest.raises(ValueError):
        step(init, spec, nl, sine_mode(spec.grid), z2, SolveConfig(1e-3))


def test_assemble_round_trip(small_model):
    st_ = _init(small_model.grid)
    z1, z2 = noise_fields(small_model, 0.0, 0.0)
    u, v = assemble_uv(st_, z1, z2)
    assert np.array_equal(u.values, st_.u_tilde.values)
    # subtract then assemble: exact up to rounding of the two operations
    u_phys = sine_mode(small_model.grid) * 1.3
    z1, z2 = noise_fields(small_model, 0.7, -0.4)
    shifted = StatePair(u_phys - z1, st_.v_tilde)
    u, v = assemble_uv(shifted, z1, z2)
    scale = np.abs(u_phys.values) + np.abs(z1.values)
    assert np.all(np.abs(u.values - u_phys.values) <= 2 * np.spacing(scale))
    zero = StatePair(Field.zeros(small_model.grid), Field.zeros(small_model.grid))
    u, v = assemble_uv(zero, z1, z2)
    assert np.array_equal(u.values, z1.values) and np.array_equal(v.values, z2.values)


def test_trajectory_rows_and_csv(small_model, path):
    out = solve_forward(_init(small_model.grid), path, small_model, Nonlinearity.cubic(),
                        SolveConfig(1e-3, record_every=100), 0.5)
    rows = trajectory_rows(out, small_model, [2.0, 4.0])
    text = trajectory_csv_text(rows)
    assert text.splitlines()[0].startswith("t,energy")
    assert len(text.splitlines()) == len(out) + 1
    assert all(r["tail_u_2"] >= r["tail_u_4"] for r in rows)


def test_bad_config_rejected():
    with pytest.raises(ValueError):
        SolveConfig(0.0)
    with pytest.raises(ValueError):
        SolveConfig(1e-3, "rk4")
