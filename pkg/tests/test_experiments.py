import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from phasefield.experiments import (
    EpsRule,
    RegimeSweepConfig,
    ScalingRule,
    block_count_experiment,
    count_favorable_blocks,
    eps_threshold,
    expected_block_count,
    lamp_experiment,
    ld_rate_machinery,
    legendre_at,
    liouville_excursion_experiment,
    log_mgf_theta,
    regime_sweep,
    regime_verdict,
    sample_quantity_parallel,
    sample_window_energies,
    scaled_cumulant,
    tilted_window_probability,
    window_cell_weights,
)
from phasefield.media import CellLaw, build_liouville_stripe, constant_medium, sample_checkerboard

LAW = CellLaw.four_point(1.0, 4.0, 1.0, 2.0)
SQRT2 = math.sqrt(2.0)
# int_{-5}^{5} log cosh(sech^4(sqrt2 s) / 2) ds, 30-digit quadrature
L_AT_ONE_R5 = 0.07858717895406640


def test_scaling_rules():
    assert ScalingRule("power", 3.0)(0.1) == pytest.approx(1e-3)
    assert ScalingRule("eps_over_g", g="log", c=2.0)(0.1) == pytest.approx(0.1 / (2 * math.log(10)))
    with pytest.raises(ValueError):
        ScalingRule("cubic")


def test_sweep_config_validation_and_roundtrip():
    cfg = RegimeSweepConfig(LAW, eps_grid=(0.2, 0.1), n_samples=8)
    assert RegimeSweepConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        RegimeSweepConfig(LAW, eps_grid=(0.1, 0.2))
    with pytest.raises(ValueError):
        RegimeSweepConfig(LAW, n_samples=4)


def test_small_sweep_is_job_independent():
    cfg = RegimeSweepConfig(LAW, eps_grid=(0.2, 0.1), n_samples=8, seed0=4)
    a = regime_sweep(cfg, jobs=1)
    b = regime_sweep(cfg, jobs=2)
    assert [s.row() for s in a.samples] == [s.row() for s in b.samples]
    assert all(s.invariants_ok for s in a.summary) and not a.failed


def test_regime_verdicts():
    assert regime_verdict([0.1, 0.05, 0.01], [0.5, 0.5, 0.5]) == "homogenization trend"
    assert regime_verdict([0.5, 0.5, 0.5], [0.1, 0.05, 0.01]) == "rare-events trend"
    assert regime_verdict([0.3, 0.3, 0.3], [0.3, 0.3, 0.3]) == "inconclusive"


def test_block_count_on_constant_target_medium():
    m = constant_medium(1.0, 1.0, (-200, 200))
    bc = count_favorable_blocks(m, 50.0, 1.0, 1.0)
    assert bc.X == bc.n_blocks == 49 and bc.cells_per_block == 2


def test_block_alignment_violation():
    m = constant_medium(1.0, 1.0, (-200, 200))
    with pytest.raises(ValueError, match="alignment"):
        count_favorable_blocks(m, 50.0, 1.0, 0.3)


def test_expected_block_count_closed_form():
    assert expected_block_count(50.0, 1.0, 1.0) == pytest.approx(49 / 16)


def test_block_count_experiment_unbiased():
    rep = block_count_experiment(LAW, 20.0, 1.0, 1.0, 500, seed0=1)
    assert rep.n_blocks == 19 and abs(rep.z_score) < 4.0


@settings(max_examples=20, deadline=None)
@given(gamma=st.sampled_from([0.5, 0.25, 0.2, 0.1]), r=st.floats(0.5, 5.0))
def test_window_weights_sum_to_potential_integral(gamma, r):
    _, w, grad = window_cell_weights(gamma, r)
    t = math.tanh(SQRT2 * r)
    exact = 2.0 * (t - t**3 / 3.0) / SQRT2
    assert w.sum() == pytest.approx(exact, rel=1e-12)
    # equipartition: the gradient term equals the potential term for q_*
    assert grad == pytest.approx(exact, rel=1e-12)
    assert np.all(w > 0)


def test_window_energy_mean_matches_samples():
    Z, mean = sample_window_energies(LAW, 0.25, 3.0, 4000, seed0=0)
    assert abs(Z.mean() - mean) < 5 * Z.std() / math.sqrt(Z.size)


def test_log_mgf_closed_form_and_hoeffding():
    L = log_mgf_theta([1.0, 2.0], [0.5, 0.5])
    xi = np.linspace(-50, 50, 101)
    assert np.allclose(L(xi), np.log(np.cosh(xi / 2)), rtol=1e-12)
    assert np.all(L(xi) <= xi**2 / 8 + 1e-15)
    # general branch agrees with the closed form
    G = log_mgf_theta([1.0, 2.0, 2.0], [0.5, 0.25, 0.25])
    assert np.allclose(G(xi), np.log(np.cosh(xi / 2)), rtol=1e-10)


def test_scaled_cumulant_frozen():
    L = scaled_cumulant(log_mgf_theta([1.0, 2.0], [0.5, 0.5]), 5.0)
    assert float(L(1.0)) == pytest.approx(L_AT_ONE_R5, rel=1e-10)


def test_legendre_of_quadratic():
    rate, xi = legendre_at(lambda x: 0.5 * x**2, -0.3)
    assert rate == pytest.approx(0.045, abs=1e-10) and xi == pytest.approx(-0.3, abs=1e-6)


def test_ld_machinery_checks():
    ld = ld_rate_machinery(LAW, r=5.0, lambdas=[0.1, 0.3])
    assert ld.hoeffding_ok and ld.convex_ok
    assert 0 < ld.rates[0.1] < ld.rates[0.3]


def test_tilted_estimator_agrees_with_naive_at_moderate_deviation():
    Z, mean = sample_window_energies(LAW, 0.1, 5.0, 20000, seed0=2)
    lam = float(np.quantile(mean - Z, 0.95))
    p_naive = float(np.mean(Z <= mean - lam))
    te = tilted_window_probability(LAW, 0.1, 5.0, lam, 20000, seed0=3)
    assert abs(te.p_hat - p_naive) < 4 * math.hypot(te.stderr, math.sqrt(p_naive * (1 - p_naive) / Z.size))


def test_tail_sampling_independent_of_jobs():
    a = sample_quantity_parallel("osc", 4.0, 1200, LAW, 0, 16.0, jobs=1)
    b = sample_quantity_parallel("osc", 4.0, 1200, LAW, 0, 16.0, jobs=3)
    assert np.array_equal(a, b)


def test_eps_threshold_rule():
    rule = EpsRule("liouville", T=2.0)
    # M eps / delta = M T / (2 log2(1/eps)) <= 1 once log2(1/eps) >= M
    assert eps_threshold(rule, 4.0, 1.0) == 2.0**-4
    with pytest.raises(ValueError):
        EpsRule("cubic")


def test_excursion_thresholds_decrease_with_M():
    rows = liouville_excursion_experiment(build_liouville_stripe(4), [1, 2, 4, 8])
    thr = [r.threshold for r in rows]
    assert all(r.found for r in rows) and all(b < a for a, b in zip(thr, thr[1:]))
    assert liouville_excursion_experiment(None, [2])[0].threshold == math.inf


def test_lamp_bound_and_iid_control():
    ex = lamp_experiment(1.0, (2, 4, 8), n_fields=8, n_sites=20000, seed0=1)
    assert ex.lower_bound_ok
    assert ex.semilog_fit_iid.slope < 0
    assert ex.slope_target == -2.0


@pytest.mark.parametrize("scaling", [ScalingRule("power", 3.0), ScalingRule("eps_over_g", g="log", c=4.0)])
def test_constant_medium_sweep_gives_sigma_w(scaling):
    cfg = RegimeSweepConfig(CellLaw.point(1.0, 1.0), eps_grid=(0.1, 0.05), scaling=scaling, n_samples=8)
    res = regime_sweep(cfg)
    sw = 4.0 * math.sqrt(2.0) / 3.0
    assert all(abs(s.median / sw - 1) <= 0.02 for s in res.summary)


def test_boundary_case_median_between_references():
    cfg = RegimeSweepConfig(LAW, eps_grid=(0.1, 0.05), scaling=ScalingRule("power", 1.0), n_samples=8)
    res = regime_sweep(cfg)
    assert all(res.sigma_rare < s.median < res.sigma_bar for s in res.summary)
