import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasefield.media import (
    CellLaw,
    Medium1D,
    build_liouville_stripe,
    constant_medium,
    cycle_length,
    excursion_time,
    lamp_pmf,
    lamp_range_tail,
    liouville_bracket,
    liouville_convergent,
    periodic_medium,
    run_length_tail,
    sample_checkerboard,
    strip_spacing,
)

LAW = CellLaw.four_point(1.0, 4.0, 1.0, 2.0)

# T_N from 30-digit arithmetic with lambda = sum 2^-k!
T1, T2 = 0.7902348466421655, 2.2389906934989108


def test_four_point_law_constants():
    assert LAW.a_bar() == pytest.approx(1.6)
    assert LAW.theta_bar() == pytest.approx(1.5)
    assert LAW.prob_of((1.0, 1.0)) == pytest.approx(0.25)
    b = LAW.bounds()
    assert (b.lam, b.Lam, b.th_lo, b.th_hi) == (1.0, 4.0, 1.0, 2.0)


def test_law_roundtrip():
    assert CellLaw.from_dict(LAW.to_dict()) == LAW


def test_law_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        CellLaw(((1.0, 1.0), (2.0, 2.0)), (0.7, 0.7))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), z0=st.integers(-500, 500), n=st.integers(1, 200), shift=st.integers(0, 50))
def test_checkerboard_cells_are_window_independent(seed, z0, n, shift):
    big = sample_checkerboard(seed, (z0 - shift, z0 + n + shift), LAW)
    small = sample_checkerboard(seed, (z0, z0 + n), LAW)
    i = z0 - big.z_min
    assert np.array_equal(big.a_cells[i:i + n + 1], small.a_cells)
    assert np.array_equal(big.theta_cells[i:i + n + 1], small.theta_cells)


def test_medium_json_roundtrip():
    m = sample_checkerboard(9, (-20, 20), LAW)
    back = Medium1D.from_dict(m.to_dict())
    assert np.array_equal(back.a_cells, m.a_cells) and np.array_equal(back.theta_cells, m.theta_cells)
    p = m.planted(-3, 3, 1.0, 1.0)
    back = Medium1D.from_dict(p.to_dict())
    assert np.array_equal(back.a_cells, p.a_cells)


def test_planted_stretch():
    m = sample_checkerboard(1, (-50, 50), LAW).planted(-4, 4, 1.0, 1.0)
    assert np.all(m.a(np.linspace(-4.4, 4.4, 50)) == 1.0)
    assert np.all(m.theta(np.linspace(-4.4, 4.4, 50)) == 1.0)


def test_cells_centered_at_integers():
    m = constant_medium(1.0, 1.0, (-3, 3))
    assert m.lo == -3.5 and m.hi == 3.5
    assert list(m.cell_index(np.array([-0.49, 0.49, 0.5]))) == [0, 0, 1]


def test_periodic_medium_pattern():
    m = periodic_medium([1.0, 4.0], [1.0, 2.0], 0.5, (0, 5))
    assert list(m.a_cells) == [1.0, 4.0, 1.0, 4.0, 1.0, 4.0]


def test_lamp_pmf_normalized_and_tail_consistent():
    k = np.arange(1, 200_001)
    pmf = lamp_pmf(1.0, k)
    assert 2 * pmf.sum() == pytest.approx(1.0, abs=1e-9)
    assert lamp_range_tail(1.0, 1) == pytest.approx(0.5)
    assert lamp_range_tail(1.0, 5) == pytest.approx(0.5 - pmf[:4].sum(), rel=1e-9)
    assert lamp_pmf(1.0, 0) == 0.0


def test_run_length_tail_on_known_field():
    field = np.array([1, 1, 1, 1, 1, 2, 1, 1, 1, 2])
    t = run_length_tail([field, field], lambda v: v == 1, [1, 2])
    # 8 windows of 3 sites, lit ones centered at 1, 2, 3, 7
    assert t.p_hat[0] == pytest.approx(4 / 8)
    # 6 windows of 5 sites, lit one centered at 2
    assert t.p_hat[1] == pytest.approx(1 / 6)
    assert t.stderr[0] == 0.0


def test_liouville_convergents_and_bracket():
    assert liouville_convergent(1) == (1, 2)
    assert liouville_convergent(2) == (3, 4)
    assert liouville_convergent(3) == (49, 64)
    lo, hi = liouville_bracket(6)
    for N in range(1, 5):
        p, q = liouville_convergent(N)
        assert 0 < lo - Fraction(p, q) and hi - Fraction(p, q) < Fraction(1, q**N)


def test_cycle_length_and_spacing():
    assert cycle_length(5, 6) == 6
    g, (k1, k2) = strip_spacing(5, 6)
    assert g == 1 and -5 * k1 + 6 * k2 == 1


def test_excursion_times_frozen():
    st_ = build_liouville_stripe(3)
    assert float(excursion_time(st_, 1)) == pytest.approx(T1, rel=1e-12)
    assert float(excursion_time(st_, 2)) == pytest.approx(T2, rel=1e-12)


def test_strip_measures_are_powers_of_three():
    st_ = build_liouville_stripe(4)
    assert [st_.strip_measure(n) for n in range(1, 5)] == [Fraction(1, 3**n) for n in range(1, 5)]
    assert sum(st_.strip_measure(n) for n in range(1, 5)) == Fraction(40, 81)
