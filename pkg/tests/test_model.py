import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhnlab.model import (ModelSpec, Nonlinearity, bistable_model, certify_f, default_model, f_ds,
                          f_dx, f_eval, gaussian_bump, parse_field)
from fhnlab.spatial import Field, Grid, write_field_csv


def test_cubic_values():
    nl = Nonlinearity.cubic()
    assert f_eval(nl, 0.3, 0.0) == 0.0
    assert f_eval(nl, 1.0, 2.0) == -8.0
    assert f_ds(nl, 1.0, 2.0) == -12.0
    assert f_dx(nl, 1.0, 2.0) == 0.0


def test_bump_at_center():
    nl = Nonlinearity.with_bump(1.0, width=2.0)
    assert f_eval(nl, 0.0, 1.0) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-3, 3))
def test_bump_derivatives_match_finite_differences(x, s):
    nl = Nonlinearity.with_bump(2.0, width=1.5)
    h = 1e-6
    fd_s = (f_eval(nl, x, s + h) - f_eval(nl, x, s - h)) / (2 * h)
    fd_x = (f_eval(nl, x + h, s) - f_eval(nl, x - h, s)) / (2 * h)
    assert f_ds(nl, x, s) == pytest.approx(fd_s, abs=1e-5)
    assert f_dx(nl, x, s) == pytest.approx(abs(fd_x), abs=1e-5)


def test_bind_matches_pointwise(small_grid):
    nl = Nonlinearity.with_bump(3.0, width=2.0)
    s = np.linspace(-2, 2, small_grid.size)
    bound = nl.bind(small_grid)(s)
    point = np.array([f_eval(nl, x, si) for x, si in zip(small_grid.coords[:, 0], s)])
    assert np.allclose(bound, point, rtol=1e-14, atol=1e-14)
    both = nl.bind(small_grid)(np.column_stack([s, 2 * s]))
    assert np.allclose(both[:, 0], bound)


def test_table_interpolates():
    nl = Nonlinearity.table([-1.0, 0.0, 1.0], [2.0, 0.0, -2.0])
    assert f_eval(nl, 0.0, 0.5) == pytest.approx(-1.0)
    assert f_ds(nl, 0.0, 0.5) == pytest.approx(-2.0)


def test_default_cubic_certifies(small_model):
    rep = certify_f(Nonlinearity.cubic(), small_model)
    assert rep.passed
    assert all(m >= -1e-10 for m in rep.margins.values())
    # equality cases in the first two conditions
    assert rep.margins["f1"] == pytest.approx(0.0, abs=1e-10)
    assert rep.margins["f2"] == pytest.approx(0.0, abs=1e-10)


def test_alpha1_two_fails_f1(small_model):
    rep = certify_f(Nonlinearity.cubic(), small_model.replace(alpha1=2.0))
    assert rep.failed_conditions == ["f1"]
    assert rep.worst_at["f1"][1] != 0.0


@pytest.mark.parametrize("nl", [Nonlinearity.cubic(scale=-1.0),
                                Nonlinearity.table(np.linspace(-10, 10, 2001),
                                                   np.linspace(-10, 10, 2001) ** 3)])
def test_reversed_cubic_fails_f1_and_f3(small_model, nl):
    rep = certify_f(nl, small_model)
    assert "f1" in rep.failed_conditions and "f3" in rep.failed_conditions


def test_bistable_model_certifies_on_its_box():
    grid = Grid(1, 10.0, 128)
    spec, nl = bistable_model(grid, s_max=10.0)
    assert certify_f(nl, spec, {"s": (-10.0, 10.0)}).passed
    assert not certify_f(nl, spec, {"s": (-20.0, 20.0)}).passed  # psi3 only covers |s| <= 10


def test_bump_without_envelopes_fails(small_grid):
    spec = default_model(small_grid)
    rep = certify_f(Nonlinearity.with_bump(2.0), spec)
    assert {"f1", "f4"} <= set(rep.failed_conditions)


def test_spec_validation(small_grid):
    with pytest.raises(ValueError):
        default_model(small_grid, lam=0.0)
    with pytest.raises(ValueError):
        default_model(small_grid, p=1.5)
    with pytest.raises(ValueError):
        default_model(small_grid, h=Field.zeros(Grid(1, 10.0, 32)))
    assert default_model(small_grid, alpha=0.0, beta=0.0).alpha == 0.0


def test_eta_and_q(small_model):
    spec = small_model.replace(lam=2.0, delta=0.5)
    assert spec.eta == 0.5
    assert spec.q == pytest.approx(4 / 3)


def test_parse_field_shapes(small_grid, tmp_path):
    assert np.all(parse_field("zero", small_grid).values == 0)
    assert np.all(parse_field("constant(value=2.5)", small_grid).values == 2.5)
    g = parse_field("gaussian(amplitude=2, width=1.5, center=1)", small_grid)
    assert np.array_equal(g.values, gaussian_bump(small_grid, 2, 1.5, 1).values)
    write_field_csv(g, tmp_path / "g.csv")
    assert np.array_equal(parse_field("csv:g.csv", small_grid, tmp_path).values, g.values)
    with pytest.raises(ValueError):
        parse_field("sawtooth(1)", small_grid)
    with pytest.raises(ValueError):
        parse_field(f"csv:{tmp_path / 'g.csv'}", Grid(1, 10.0, 32))


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        Nonlinearity("quartic")
    with pytest.raises(ValueError):
        Nonlinearity.table([0.0, 0.0], [1.0, 2.0])


def test_without_noise_and_forcing(small_model):
    s = small_model.without_noise().without_forcing()
    for name in ("g", "h", "phi1", "phi2"):
        assert np.all(getattr(s, name).values == 0)
    assert isinstance(s, ModelSpec)
