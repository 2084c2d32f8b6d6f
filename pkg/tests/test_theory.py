import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles as O
from twinbeam import theory
from twinbeam.frames import OpticsConstants
from twinbeam.theory import ModeGeometry, NoiseBudget, SchemeNoiseInputs

TOL = 1e-9


def test_var_after_absorption():
    assert theory.var_after_absorption(alpha=0.01, mean_n=1e3, fano=1) == pytest.approx(O.VAR_AFTER_ABSORPTION, abs=TOL)
    assert theory.var_after_absorption(alpha=0.3, mean_n=50, fano=1) == pytest.approx(0.7 * 50, abs=TOL)
    assert theory.var_after_absorption(alpha=0.0, mean_n=50, fano=1.7) == pytest.approx(1.7 * 50, abs=TOL)


def test_delta_alpha_dr():
    assert theory.delta_alpha_dr(alpha=0.01, mean_n=1e3, fano=1) == pytest.approx(O.DELTA_ALPHA_DR, abs=TOL)
    assert theory.delta_alpha_dr(alpha=0.0, mean_n=1e3, fano=0.5) == pytest.approx(O.DELTA_ALPHA_DR_SUBSHOT, abs=TOL)
    assert theory.delta_alpha_dr(alpha=0, mean_n=400, fano=1) == pytest.approx(1 / 20, abs=TOL)
    for key, val in (("delta_alpha_dr", O.DELTA_ALPHA_DR), ("delta_alpha_dr_subshot", O.DELTA_ALPHA_DR_SUBSHOT)):
        printed, tol = O.PRINTED[key]
        assert abs(val - printed) <= tol
    with pytest.raises(ValueError):
        theory.delta_alpha_dr(alpha=0, mean_n=0)


def test_fano_with_losses():
    assert theory.fano_with_losses(0.2, 0.5) == pytest.approx(O.FANO_WITH_LOSSES, abs=TOL)
    assert theory.fano_with_losses(0.3, 1.0) == pytest.approx(0.3, abs=TOL)
    assert theory.fano_with_losses(0.0, 0.81) == pytest.approx(0.19, abs=TOL)


def test_diff_variance_and_df():
    assert theory.diff_variance(alpha=0.01, mean_n=1e3, fano=1, nrf=0.8) == pytest.approx(O.DIFF_VARIANCE, abs=TOL)
    assert theory.diff_variance(alpha=0, mean_n=1e3, nrf=0) == pytest.approx(0, abs=TOL)
    assert theory.diff_variance(alpha=0, mean_n=1e3, nrf=1) == pytest.approx(2e3, abs=TOL)
    assert theory.delta_alpha_df(alpha=0.01, mean_n=1e3, nrf=0.8) == pytest.approx(O.DELTA_ALPHA_DF, abs=TOL)
    assert theory.delta_alpha_df(alpha=0, mean_n=1e3, nrf=0) == pytest.approx(0, abs=TOL)
    assert abs(O.DELTA_ALPHA_DF - O.PRINTED["delta_alpha_df"][0]) <= O.PRINTED["delta_alpha_df"][1]
    inputs = SchemeNoiseInputs(0.01, 1e3, 1.0, 0.8)
    assert theory.delta_alpha_df(inputs) == theory.delta_alpha_df(alpha=0.01, mean_n=1e3, fano=1.0, nrf=0.8)
    with pytest.raises(TypeError):
        theory.delta_alpha_df(inputs, alpha=0.1)


def test_enhancement_ratios():
    dc, dr = theory.enhancement_ratios(0.01, 0.8)
    assert dc == pytest.approx(O.RATIO_SSN_DC, abs=TOL)
    assert dr == pytest.approx(O.RATIO_SSN_DR, abs=TOL)
    assert abs(dc - O.PRINTED["ratio_ssn_dc"][0]) <= O.PRINTED["ratio_ssn_dc"][1]
    assert abs(dc - math.sqrt(0.8)) < 1e-3
    assert theory.enhancement_ratios(0.0, 0.5)[1] == pytest.approx(1.0, abs=TOL)
    assert theory.enhancement_ratios(0.0, 1.0)[0] == pytest.approx(1.0, abs=TOL)


def test_mode_counts():
    m_u, m_c, m_b = theory.mode_counts(ModeGeometry(L=2.0 + 1e-12, r=1.0, delta=0.0))
    assert (m_u, m_c, m_b) == pytest.approx((0.0, 0.0, 4.0), abs=TOL)
    m_u, m_c, m_b = theory.mode_counts(ModeGeometry(L=10.0, r=1.0))
    assert m_c == pytest.approx(O.MODES_L10R_MC, abs=TOL)
    assert m_b == pytest.approx(O.MODES_L10R_MB, abs=TOL)
    with pytest.warns(UserWarning, match="clamped"):
        _, m_c, _ = theory.mode_counts(ModeGeometry(L=3.0, r=1.0, delta=1.0))
    assert m_c == 0.0


def test_eta_coll():
    assert theory.eta_coll_xd(1, 0) == pytest.approx(O.ETA_COLL_X1, abs=TOL)
    assert theory.eta_coll_xd(5, 0) == pytest.approx(O.ETA_COLL_X5, abs=TOL)
    assert theory.eta_coll_xd(5, 0.2) == pytest.approx(O.ETA_COLL_X5_D02, abs=TOL)
    assert abs(O.ETA_COLL_X5 - O.PRINTED["eta_coll_x5"][0]) <= O.PRINTED["eta_coll_x5"][1]
    assert theory.eta_coll(ModeGeometry(L=2e3, r=1.0)) == pytest.approx(1.0, abs=1e-2)
    # the closed form agrees with a transcription from the mode-count ratio
    for X, D in ((1, 0), (5, 0), (5, 0.2), (12.5, 0.3)):
        assert theory.eta_coll_xd(X, D) == pytest.approx(O.eta_coll_hand(X, D), abs=1e-12)


def test_sigma_model_and_eff():
    g = ModeGeometry(L=10.0, r=1.0, eta0=0.81)
    assert theory.sigma_model(g) == pytest.approx(O.SIGMA_MODEL_X5, abs=TOL)
    assert abs(O.SIGMA_MODEL_X5 - O.PRINTED["sigma_model_x5"][0]) <= O.PRINTED["sigma_model_x5"][1]
    assert theory.sigma_model(ModeGeometry(L=10.0, r=1.0, eta0=0.0, gamma=1.4)) == pytest.approx(1.2, abs=TOL)
    assert theory.sigma_eff(0.2, NoiseBudget.from_fraction(1e3, 0.038)) == pytest.approx(O.SIGMA_EFF_STRAY, abs=TOL)
    assert theory.sigma_eff(0.2, NoiseBudget(1e3, 38.0, 4.9)) == pytest.approx(O.SIGMA_EFF_FULL, abs=TOL)
    assert theory.sigma_eff(0.37, NoiseBudget(1e3)) == pytest.approx(0.37, abs=TOL)
    b = NoiseBudget(1e3, 38.0, 4.9)
    assert b.f_twb + b.stray_n / b.total_n == pytest.approx(1.0, abs=1e-15)


def test_asymptotic_sigma():
    # eta_coll -> 1, sigma -> 1 - eta0
    g = ModeGeometry(L=1e5, r=1.0, eta0=0.81)
    assert theory.sigma_model(g) == pytest.approx(0.19, abs=1e-4)


def test_mode_count_consistency_random():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10_000):
        r = rng.uniform(0.5, 5)
        L = r * rng.uniform(2.5, 50)
        delta = rng.uniform(0, 0.2) * (L - 2 * r) ** 2 / (2 * L)
        g = ModeGeometry(L=L, r=r, delta=delta, beta=rng.uniform(0, 1), mu=rng.uniform(0, 2))
        worst = max(worst, abs(theory.eta_coll_from_modes(g) - theory.eta_coll_xd(g.X, g.D, g.beta, g.mu)))
        assert theory.mode_count_consistency(g)
    assert worst < 1e-12


def test_geometry_validity_warnings():
    with pytest.warns(UserWarning, match="L > r"):
        ModeGeometry(L=1.0, r=2.0)
    with pytest.warns(UserWarning, match="delta << L"):
        ModeGeometry(L=10.0, r=1.0, delta=6.0)
    with pytest.raises(ValueError):
        ModeGeometry(L=10.0, r=1.0, gamma=0.5)


def test_coherence_radius():
    optics = OpticsConstants(pump_waist_um=O.PUMP_WAIST_FWHM_5P6)
    assert 2 * theory.coherence_radius(optics, "object") == pytest.approx(5.6, abs=TOL)
    assert theory.coherence_radius(optics) == pytest.approx(2.8 * 7.8, abs=TOL)
    assert theory.pump_waist_for_radius(2.8, optics) == pytest.approx(O.PUMP_WAIST_FWHM_5P6, abs=TOL)
    assert abs(O.PUMP_WAIST_FWHM_5P6 - O.PRINTED["pump_waist"][0]) <= O.PRINTED["pump_waist"][1]
    doubled = OpticsConstants(pump_waist_um=2 * O.PUMP_WAIST_FWHM_5P6)
    assert theory.coherence_radius(doubled) == pytest.approx(theory.coherence_radius(optics) / 2, rel=1e-12)
    with pytest.raises(ValueError):
        OpticsConstants(pump_waist_um=0.0)
    assert OpticsConstants().degenerate_wavelength_nm == pytest.approx(2 * OpticsConstants().pump_wavelength_nm)


@settings(max_examples=200, deadline=None)
@given(alpha=st.floats(0, 0.99), n=st.floats(1, 1e6))
def test_df_dominates_dr(alpha, n):
    assert theory.delta_alpha_df(alpha=alpha, mean_n=n, nrf=1.0) >= theory.delta_alpha_dr(alpha=alpha, mean_n=n) - 1e-15


@settings(max_examples=200, deadline=None)
@given(alpha=st.floats(0, 0.9), s1=st.floats(0, 2), s2=st.floats(0, 2))
def test_ratios_monotone_in_sigma(alpha, s1, s2):
    lo, hi = sorted((s1, s2))
    a = theory.enhancement_ratios(alpha, lo)
    b = theory.enhancement_ratios(alpha, hi)
    assert a[0] <= b[0] + 1e-15 and a[1] <= b[1] + 1e-15


def test_sigma_model_decreasing_in_X():
    X = np.linspace(1, 100, 500)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s = [theory.sigma_model(ModeGeometry(L=2 * x, r=1.0, delta=0.05)) for x in X]
    assert np.all(np.diff(s) <= 1e-15)


def test_gaussian_collection_matches_monte_carlo():
    rng = np.random.default_rng(3)
    L, r, delta = 39.0, 20.59, 4.914
    sx = 2 * r / theory.FWHM_PER_SIGMA / L
    mc = O.gauss_cell_overlap_mc(sx, delta / L, 2_000_000, rng) * O.gauss_cell_overlap_mc(sx, 0.0, 2_000_000, rng)
    assert theory.gaussian_collection(L, r, delta) == pytest.approx(mc, abs=2e-3)
    assert theory.gaussian_collection(1e6, r, delta) == pytest.approx(1.0, abs=1e-4)
