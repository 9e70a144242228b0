import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasefield.wells import adaptive_quad, optimal_profile, perturbed_well, quartic_well, sigma_w, well_from_name

SIGMA_QUARTIC = 4.0 * math.sqrt(2.0) / 3.0
# integral of (1 - u^2) sqrt(2 (1 + 0.3 u + 0.2 u^2)) over [-1, 1], 30-digit quadrature
SIGMA_PERTURBED = 1.9187642694544353


def test_quartic_equipartition_closed_form():
    assert sigma_w(quartic_well()) == pytest.approx(SIGMA_QUARTIC, abs=1e-12)


def test_perturbed_equipartition_frozen():
    assert sigma_w(perturbed_well()) == pytest.approx(SIGMA_PERTURBED, abs=1e-10)


def test_variational_matches_equipartition_for_asymmetric_well():
    w = perturbed_well()
    assert sigma_w(w, "variational") == pytest.approx(SIGMA_PERTURBED, abs=1e-3)


def test_optimal_profile_is_tanh():
    prof = optimal_profile(quartic_well(), n=20000)
    s = np.linspace(-8.0, 8.0, 801)
    assert np.max(np.abs(prof(s) - np.tanh(math.sqrt(2.0) * s))) < 1e-4
    assert prof(0.0) == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("name", ["quartic", "perturbed"])
def test_derivatives_match_finite_differences(name):
    w = well_from_name(name)
    u = np.linspace(-1.5, 1.5, 61)
    h = 1e-6
    assert np.allclose(w.d1(u), (w(u + h) - w(u - h)) / (2 * h), atol=1e-6)
    assert np.allclose(w.d2(u), (w.d1(u + h) - w.d1(u - h)) / (2 * h), atol=1e-6)


def test_wells_vanish_only_at_plus_minus_one():
    for w in (quartic_well(), perturbed_well()):
        assert w(np.array([-1.0, 1.0])) == pytest.approx([0.0, 0.0], abs=1e-15)
        u = np.linspace(-0.999, 0.999, 999)
        assert np.all(w(u) > 0)


def test_unknown_well_raises():
    with pytest.raises(ValueError, match="unknown well"):
        well_from_name("sextic")


def test_reflection_preserves_sigma():
    w = perturbed_well()
    assert sigma_w(well_from_name("perturbed-reflected")) == pytest.approx(sigma_w(w), rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.1, 10.0), t=st.floats(0.1, 10.0))
def test_sigma_scales_like_geometric_mean(a, t):
    w = quartic_well()
    assert sigma_w(w, grad_coeff=a, well_coeff=t) == pytest.approx(SIGMA_QUARTIC * math.sqrt(a * t), rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(0, 8))
def test_adaptive_quad_on_monomials(k):
    assert adaptive_quad(lambda x: x**k, 0.0, 1.0) == pytest.approx(1.0 / (k + 1), rel=1e-10)
