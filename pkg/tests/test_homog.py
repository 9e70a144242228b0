import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasefield.homog import (
    calibrate_nu,
    corrector_phi_1d,
    fit_line,
    h_minus_one_norm,
    h_minus_one_norm_cells,
    h_minus_one_norm_cells_exact,
    homogenized_constants_1d,
    osc_quantity,
    radius_grid,
    sub_quantity,
    tail_probability,
    wilson_interval,
)
from phasefield.media import CellLaw, constant_medium, sample_checkerboard

LAW = CellLaw.four_point(1.0, 4.0, 1.0, 2.0)


def test_h_minus_one_of_sine():
    val = h_minus_one_norm(lambda x: np.sin(np.pi * x), (0.0, 1.0), n=4096)
    assert val == pytest.approx(1.0 / (math.pi * math.sqrt(2.0)), abs=1e-6)


def test_h_minus_one_of_constant():
    # w = x (1 - x) / 2, norm^2 = int w = 1/12
    assert h_minus_one_norm(lambda x: np.ones_like(x), (0.0, 1.0), n=1024) == pytest.approx(1 / math.sqrt(12), abs=1e-6)


def test_h_minus_one_2d_separable_mode():
    # f = sin(pi x) sin(pi y): norm^2 = avg f^2 / (2 pi^2) = 1 / (8 pi^2)
    val = h_minus_one_norm(lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y), ((0, 1), (0, 1)), d=2, n=128)
    assert val == pytest.approx(1 / (math.sqrt(8) * math.pi), rel=1e-3)


@settings(max_examples=30, deadline=None)
@given(vals=st.lists(st.floats(-3, 3), min_size=1, max_size=12))
def test_cell_norm_within_galerkin_bound_of_closed_form(vals):
    breaks = np.arange(len(vals) + 1, dtype=float)
    f = np.array(vals)
    fe = float(h_minus_one_norm_cells(breaks, f, per_unit=8))
    ex = float(h_minus_one_norm_cells_exact(breaks, f))
    # Galerkin: fe^2 = ex^2 - |w - w_h|^2 / L with |w - w_h|^2 / L <= (h / pi)^2 avg f^2
    h = 1.0 / 8.0
    assert fe <= ex + 1e-12
    assert ex**2 - fe**2 <= (h / math.pi) ** 2 * float(np.mean(f**2)) + 1e-12


def test_constants_from_law_and_sample():
    hc = homogenized_constants_1d(LAW)
    assert (hc.a_bar, hc.theta_bar) == pytest.approx((1.6, 1.5))
    with pytest.raises(ValueError):
        homogenized_constants_1d(sample_checkerboard(0, (0, 99), LAW))


def test_corrector_slope_and_zero_mean_flux():
    m = sample_checkerboard(4, (-40, 40), LAW)
    phi = corrector_phi_1d(m, (-30.0, 30.0), 1.6)
    y = np.linspace(-29.5, 29.5, 200)
    assert np.allclose(phi.flux(y), 1.6)
    assert phi(0.0) == pytest.approx(0.0, abs=1e-14)
    assert phi.sigma == 0.0


def test_sub_and_osc_vanish_on_constant_medium():
    m = constant_medium(1.6, 1.5, (-100, 100))
    assert sub_quantity(m, 0.0, 4.0, 32.0, 1.6) == pytest.approx(0.0, abs=1e-14)
    assert osc_quantity(m, 0.0, 4.0, 32.0, 1.5) == pytest.approx(0.0, abs=1e-14)


def test_radius_grid_contains_dyadics():
    R = radius_grid(3.0, 24.0)
    assert {3.0, 6.0, 12.0, 24.0} <= set(R) and R.min() == 3.0 and R.max() == 24.0


def test_wilson_interval_zero_hits():
    lo, hi = wilson_interval(0, 10)
    assert lo == pytest.approx(0.0, abs=1e-12)
    assert hi == pytest.approx(1.96**2 / (10 + 1.96**2), abs=2e-4)


def test_tail_probability_is_deterministic():
    a = tail_probability("osc", 4.0, 0.1, 200, LAW, seed0=5)
    b = tail_probability("osc", 4.0, 0.1, 200, LAW, seed0=5)
    assert a.row() == b.row()
    assert a.ci_lo <= a.p_hat <= a.ci_hi


def test_calibrate_nu_range():
    rng = np.random.default_rng(0)
    vals = {8.0: rng.exponential(1.0, 5000), 16.0: rng.exponential(0.7, 5000)}
    nu = calibrate_nu(vals)
    for v in vals.values():
        assert 1e-3 <= np.mean(v > nu) <= 0.5


def test_fit_line_exact():
    f = fit_line([1, 2, 3], [2, 4, 6])
    assert (f.slope, f.intercept, f.r2) == pytest.approx((2.0, 0.0, 1.0))
