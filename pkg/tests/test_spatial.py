import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from fhnlab.spatial import (Field, Grid, GridMismatchError, NonFiniteFieldError, cutoff_rho,
                            cutoff_rho_prime, field_csv_text, gradient_energy, inner_product,
                            laplacian, norm_h1, norm_l2, norm_lp, read_field_csv, tail_mass,
                            write_field_csv)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_constant_field_periodic_laplacian_is_zero():
    g = Grid(1, 3.0, 40, "periodic")
    assert np.allclose(laplacian(Field.constant(g, 2.5)).values, 0.0, atol=1e-12)


def test_spike_reproduces_stencil_row():
    g = Grid(1, 1.0, 11)
    v = np.zeros(11)
    v[5] = 1.0
    out = laplacian(Field(g, v)).values * g.h**2
    assert np.allclose(out[3:8], [0, 1, -2, 1, 0])


def test_sine_mode_eigenfunction_second_order():
    errs = []
    for n in (64, 128, 256):
        g = Grid(1, 5.0, n)
        f = Field.from_function(g, lambda x: np.sin(np.pi * x[:, 0] / g.L))
        exact = -(np.pi / g.L) ** 2 * f.values
        errs.append(np.max(np.abs(laplacian(f).values - exact)) / np.max(np.abs(exact)))
    for a, b in zip(errs, errs[1:]):
        assert 3.6 < a / b < 4.4


def test_laplacian_2d_matches_sum_of_axes():
    g = Grid(2, 4.0, 32)
    f = Field.from_function(g, lambda x: np.sin(np.pi * x[:, 0] / 4.0) * np.sin(np.pi * x[:, 1] / 4.0))
    lap = laplacian(f).values
    lam = -2 * (np.pi / 4.0) ** 2
    assert np.max(np.abs(lap - lam * f.values)) < 0.01 * abs(lam)


def test_unit_field_l2_norm_is_riemann_sum():
    g = Grid(1, 1.0, 100)
    assert norm_l2(Field.constant(g, 1.0)) ** 2 == pytest.approx(2.0, rel=1e-14)


def test_zero_field_norms_vanish():
    g = Grid(1, 2.0, 20)
    z = Field.zeros(g)
    assert norm_l2(z) == norm_lp(z, 4) == gradient_energy(z) == norm_h1(z) == 0.0


@settings(max_examples=30, deadline=None)
@given(arrays(float, 24, elements=finite), arrays(float, 24, elements=finite))
def test_inner_product_properties(a, b):
    g = Grid(1, 2.0, 24)
    f, h = Field(g, a), Field(g, b)
    assert inner_product(f, h) == pytest.approx(inner_product(h, f), rel=1e-12, abs=1e-9)
    assert inner_product(f, Field.zeros(g)) == 0.0
    brute = sum(x * x for x in a) * g.h
    assert norm_l2(f) ** 2 == pytest.approx(brute, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("boundary", ["dirichlet", "periodic"])
@settings(max_examples=25, deadline=None)
@given(a=arrays(float, 30, elements=st.floats(-10, 10)))
def test_summation_by_parts(boundary, a):
    g = Grid(1, 3.0, 30, boundary)
    f = Field(g, a)
    lhs = -inner_product(laplacian(f), f)
    assert lhs == pytest.approx(gradient_energy(f), rel=1e-10, abs=1e-9)


def test_norm_lp_rejects_p_below_one():
    with pytest.raises(ValueError):
        norm_lp(Field.zeros(Grid(1, 1.0, 4)), 0.5)


def test_cutoff_plateaus():
    # plateaus of the cut-off: zero on [0, 1], one from 2 on
    assert cutoff_rho(0.5) == 0.0
    assert cutoff_rho(3.0) == 1.0
    assert cutoff_rho(1.5) == pytest.approx(0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 10))
def test_cutoff_bounds_and_derivative(s):
    r = cutoff_rho(s)
    assert 0.0 <= r <= 1.0
    assert abs(cutoff_rho_prime(s)) <= 15 / 8 + 1e-12
    h = 1e-6
    if 1e-5 < s:
        fd = (cutoff_rho(s + h) - cutoff_rho(s - h)) / (2 * h)
        assert fd == pytest.approx(cutoff_rho_prime(s), abs=1e-5)


def test_cutoff_rejects_negative():
    with pytest.raises(ValueError):
        cutoff_rho(-0.1)


def test_tail_mass_of_compact_field_is_zero():
    g = Grid(1, 10.0, 200)
    f = Field.from_function(g, lambda x: np.where(np.abs(x[:, 0]) <= 3.0, 1.0, 0.0))
    assert tail_mass(f, 3.0) == 0.0
    assert tail_mass(f, 1.0) > 0.0


@settings(max_examples=30, deadline=None)
@given(arrays(float, 50, elements=finite))
def test_tail_mass_nonincreasing_in_radius(a):
    g = Grid(1, 10.0, 50)
    f = Field(g, a)
    tails = [tail_mass(f, k) for k in np.linspace(0.5, 9.5, 10)]
    assert all(b <= t + 1e-12 for t, b in zip(tails, tails[1:]))


def test_field_rejects_nan_and_is_readonly():
    g = Grid(1, 1.0, 4)
    with pytest.raises(NonFiniteFieldError):
        Field(g, [0.0, math.nan, 0.0, 0.0])
    f = Field.zeros(g)
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_grid_mismatch_raises():
    a = Field.zeros(Grid(1, 1.0, 4))
    b = Field.zeros(Grid(1, 1.0, 8))
    with pytest.raises(GridMismatchError):
        a + b


def test_csv_round_trip_is_exact(tmp_path):
    g = Grid(2, 3.0, 8, "periodic")
    f = Field(g, np.random.default_rng(1).standard_normal(64) / 3)
    write_field_csv(f, tmp_path / "f.csv")
    back = read_field_csv(tmp_path / "f.csv")
    assert back.grid == g
    assert np.array_equal(back.values, f.values)
    assert field_csv_text(back) == (tmp_path / "f.csv").read_text()


@pytest.mark.parametrize("args", [(3, 1.0, 8), (1, -1.0, 8), (1, 1.0, 2), (1, 1.0, 8, "neumann")])
def test_bad_grids_rejected(args):
    with pytest.raises(ValueError):
        Grid(*args)
