import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dscatter.errors import ConfigurationError
from dscatter.norms import (
    WeightedNormSpec,
    check_admissible,
    exponent_window,
    gp_energy,
    log_time_grid,
    lower_threshold,
    lp_norm_x,
    scaling_map,
    sobolev_norm,
    strauss_exponent,
    weighted_norm_profile,
    weighted_spacetime_norm,
)
from dscatter.spectral import Grid, SpectralField, Trajectory

from conftest import smooth_random_field


@pytest.mark.parametrize("r", [1, 2, 3.5, math.inf])
def test_lp_norm_of_constant(grid2, r):
    f = SpectralField(grid2, np.full((2,) + grid2.shape, 3.0 + 4.0j) / math.sqrt(2))
    expected = 5.0 if math.isinf(r) else 5.0 * grid2.volume ** (1 / r)
    assert lp_norm_x(f, r) == pytest.approx(expected, rel=1e-13)


def test_lp_rejects_bad_exponent(grid1):
    with pytest.raises(ConfigurationError):
        lp_norm_x(SpectralField.zeros(grid1), 0)


@pytest.mark.parametrize("s", [0.0, 0.5, 1.0, -1.0])
def test_sobolev_norm_of_sine(grid1, s):
    k = 2 * math.pi * 5 / grid1.length
    f = SpectralField(grid1, np.sin(k * grid1.coords[0]))
    assert sobolev_norm(f, s) == pytest.approx(k**s * math.sqrt(grid1.length / 2), rel=1e-12)
    assert sobolev_norm(f, s, homogeneous=False) == pytest.approx(
        (2 + k**2) ** (s / 2) * math.sqrt(grid1.length / 2), rel=1e-12)


def test_negative_homogeneous_drops_zero_mode(grid1):
    f = SpectralField(grid1, np.ones(grid1.shape))
    assert sobolev_norm(f, -1.0) == 0.0
    assert sobolev_norm(f, 0.0) == pytest.approx(math.sqrt(grid1.length))


@pytest.mark.parametrize("q,eps,a", [(2, 0.25, 1.0), (4, 0.3, 0.75), (3, 0.0, 0.5)])
def test_weighted_norm_of_power_law(q, eps, a):
    T, Tm = 1.0, 50.0
    t = log_time_grid(T, Tm, 257)
    res = weighted_norm_profile(t, t**-a, q, eps)
    c = q * (eps - a) + 1
    exact = ((Tm**c - T**c) / c) ** (1 / q)
    assert res.value == pytest.approx(exact, rel=1e-8)
    assert res.error < 1e-6 * exact


def test_weighted_norm_sup():
    t = log_time_grid(1.0, 10.0, 33)
    assert weighted_norm_profile(t, t**-1.0, math.inf, 0.5).value == pytest.approx(1.0)
    assert weighted_norm_profile(t, t**-1.0, math.inf, 0.5, T=2.0).value == pytest.approx(t[t >= 2][0] ** -0.5)


def test_weighted_norm_off_node_head():
    t = log_time_grid(1.0, 20.0, 129)
    T = 0.5 * (t[10] + t[11])
    res = weighted_norm_profile(t, t**-1.0, 2, 0.25, T=T).value
    exact = math.sqrt((20**-0.5 - T**-0.5) / -0.5)
    assert res == pytest.approx(exact, rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(T1=st.floats(1.0, 30.0), dT=st.floats(0.0, 10.0))
def test_weighted_norm_monotone_in_T(T1, dT):
    t = log_time_grid(1.0, 50.0, 65)
    y = (1 + 0.3 * np.sin(2 * np.log(t))) * t**-0.8
    a = weighted_norm_profile(t, y, 2, 0.3, T=T1).value
    b = weighted_norm_profile(t, y, 2, 0.3, T=T1 + dT).value
    assert b <= a + 1e-12


def test_weighted_norm_errors():
    with pytest.raises(ConfigurationError):
        weighted_norm_profile([], [], 2, 0.1)
    with pytest.raises(ConfigurationError):
        weighted_norm_profile([1.0, 2.0], [1.0, 1.0], 2, 0.1, T=3.0)
    with pytest.raises(ConfigurationError):
        log_time_grid(2.0, 1.0)
    with pytest.raises(ConfigurationError):
        WeightedNormSpec(2, 2, -0.1, 1.0)


def test_spacetime_norm_matches_profile(grid1):
    spec = WeightedNormSpec.log_spaced(4, 4, 0.2, 1.0, 8.0, 33)
    data = np.ones((33, 1) + grid1.shape) * (spec.time_grid ** -0.5)[:, None, None]
    tr = Trajectory(grid1, spec.time_grid, data)
    expected = weighted_norm_profile(spec.time_grid, spec.time_grid**-0.5 * grid1.length**0.25, 4, 0.2).value
    assert weighted_spacetime_norm(tr, spec) == pytest.approx(expected, rel=1e-12)
    bad = WeightedNormSpec.log_spaced(4, 4, 0.2, 1.0, 9.0, 33)
    with pytest.raises(ConfigurationError):
        weighted_spacetime_norm(tr, bad)


def test_strauss_and_threshold_d3():
    assert strauss_exponent(3) == pytest.approx(1.0)
    assert lower_threshold(3) == pytest.approx((1 + math.sqrt(97)) / 12)
    for d in (1, 2, 3):
        p0 = strauss_exponent(d)
        assert d * p0**2 + (d - 2) * p0 - 4 == pytest.approx(0, abs=1e-12)


def test_window_d3_p1():
    w = exponent_window(3, 1.0)
    assert (w.lower, w.upper) == (pytest.approx(0.25), pytest.approx(0.375))
    assert w.contains(0.3) and not w.contains(0.4)
    assert w.q0 == pytest.approx(8 / 3) and w.r0 == 4


@settings(max_examples=200)
@given(d=st.integers(1, 3), p=st.floats(0.05, 6.0))
def test_window_nonempty_iff_above_threshold(d, p):
    w = exponent_window(d, p)
    p1 = lower_threshold(d)
    if abs(p - p1) > 1e-9:
        assert w.nonempty == (p > p1)


@settings(max_examples=200)
@given(d=st.integers(1, 3), p=st.floats(0.2, 6.0))
def test_maximizing_pair_is_admissible(d, p):
    w = exponent_window(d, p)
    res = check_admissible(d, w.q0, w.r0, p)
    assert abs(res.residual) < 1e-12
    assert bool(res) == (w.q0 >= 2 and w.r0 >= 2 and not (d == 2 and w.q0 == 2))
    assert res.ratio == pytest.approx(2.0)


@pytest.mark.parametrize(
    "d,q,r,ok",
    [(3, 2, 6, True), (3, math.inf, 2, True), (1, 4, math.inf, True), (2, 2, math.inf, False),
     (3, 4, 4, False), (1, 1, 2, False), (3, 8 / 3, 4, True)],
)
def test_admissibility_cases(d, q, r, ok):
    assert bool(check_admissible(d, q, r)) == ok


def test_uniqueness_range():
    assert check_admissible(3, 8 / 3, 4, p=1.0).uniqueness
    assert not check_admissible(2, 4, 4, p=3.0).uniqueness  # r/(p+1) = 1 excluded in d=2
    assert not check_admissible(3, 2, 6, p=1.0).uniqueness  # ratio 3 > 2


def test_gp_energy_two_routes_agree(grid3, rng):
    u = smooth_random_field(grid3, rng, width=0.5) * 0.3
    pair = gp_energy(u)
    assert pair.relative_gap < 1e-10
    assert pair.direct > 0


def test_gp_energy_of_constant_phase_shift(grid1):
    # u = e^{i theta} - 1 has |psi| = 1, so the energy vanishes
    u = SpectralField(grid1, np.full(grid1.shape, np.exp(0.7j) - 1))
    pair = gp_energy(u)
    assert abs(pair.direct) < 1e-12 and abs(pair.transformed) < 1e-12


def test_scaling_map_preserves_samples(grid1):
    t = np.array([1.0, 2.0, 4.0])
    tr = Trajectory(grid1, t, np.ones((3, 1) + grid1.shape))
    out = scaling_map(tr, 2.0, 3.0)
    assert out.grid.length == pytest.approx(grid1.length / 2)
    assert np.allclose(out.times, t / 4)
    assert np.allclose(out.data, 2 ** (2 / 3))
    with pytest.raises(ConfigurationError):
        scaling_map(tr, 0.0, 3.0)
