import numpy as np
import pytest

from twinbeam import estimators, theory
from twinbeam.frames import RegionPair
from twinbeam.sim import (Geometry, SampleMask, TwinBeamParams, apply_sample, generate_pair_poisson,
                          generate_pair_thermal, pair_kernel, sever_correlations)

GEO = Geometry(40, 40, 39.0)


def test_perfect_correlation_limit():
    p = TwinBeamParams(mean_photons=200, coherence_radius=1e-9, eta1=1.0, eta2=1.0, seed=1)
    for engine in ("pixel", "photon"):
        s = generate_pair_poisson(p, Geometry(16, 16), 3, engine=engine)
        assert np.array_equal(s.beam1, s.beam2[:, ::-1, ::-1])
        assert estimators.nrf_spatial(s).mean == 0.0


def test_large_pixels_reach_one_minus_eta():
    p = TwinBeamParams(mean_photons=1000, coherence_radius=0.5, eta1=0.81, eta2=0.81, seed=2)
    s = generate_pair_poisson(p, GEO, 100)
    res = estimators.nrf_spatial(s, d=4)
    expect = 1 - 0.81 * theory.gaussian_collection(4 * 39.0, 0.5)
    assert abs(res.mean - expect) < 3 * res.standard_error + 1e-3
    assert res.mean == pytest.approx(0.19, abs=0.01)


def test_severed_correlations():
    p = TwinBeamParams(mean_photons=1000, coherence_radius=20.6, seed=3)
    s = generate_pair_poisson(p, GEO, 120)
    other = generate_pair_poisson(p, GEO, 120, stream=9)
    cut = sever_correlations(s, other)
    nrf = estimators.nrf_spatial(cut)
    f = estimators.fano(cut)
    assert abs(nrf.mean - 1) < 3 * nrf.standard_error
    assert abs(f.mean - 1) < 3 * f.standard_error


def test_deterministic_and_thread_invariant(monkeypatch):
    p = TwinBeamParams(read_noise=4.9, stray_fraction=0.038, misalignment=4.9, seed=11)
    a = generate_pair_poisson(p, Geometry(20, 20), 6, workers=1)
    b = generate_pair_poisson(p, Geometry(20, 20), 6, workers=3)
    monkeypatch.setenv("TWINBEAM_THREADS", "2")
    c = generate_pair_poisson(p, Geometry(20, 20), 6)
    assert a == b == c
    d = generate_pair_poisson(p.with_(seed=12), Geometry(20, 20), 6)
    assert a != d


def test_engines_agree_in_distribution():
    p = TwinBeamParams(mean_photons=300, coherence_radius=20.6, misalignment=4.9, seed=5)
    geo = Geometry(24, 24)
    r = {e: estimators.nrf_spatial(generate_pair_poisson(p, geo, 60, engine=e)) for e in ("pixel", "photon")}
    diff = abs(r["pixel"].mean - r["photon"].mean)
    assert diff < 3 * np.hypot(r["pixel"].standard_error, r["photon"].standard_error)
    expect = 1 - 0.81 * theory.gaussian_collection(39.0, 20.6, 4.9)
    assert abs(r["photon"].mean - expect) < 3 * r["photon"].standard_error


def test_chromatic_shear_requires_photon_engine():
    p = TwinBeamParams(mean_photons=50, chromatic_shear=0.01, seed=1)
    with pytest.raises(ValueError, match="photon"):
        generate_pair_poisson(p, Geometry(8, 8), 1, engine="pixel")
    s = generate_pair_poisson(p, Geometry(8, 8), 2)
    assert s.n_shots == 2


def test_pair_kernel_sums_to_one():
    k = pair_kernel(TwinBeamParams(coherence_radius=20.6, misalignment=4.9), 39.0)
    total = k[1].sum() * k[3].sum()
    assert total == pytest.approx(1.0, abs=1e-9)


def test_param_validation():
    with pytest.raises(ValueError):
        TwinBeamParams(eta1=1.2)
    with pytest.raises(ValueError):
        TwinBeamParams(stray_fraction=1.0)
    with pytest.raises(ValueError):
        TwinBeamParams(misalignment=-1)
    with pytest.raises(ValueError):
        Geometry(0, 4)
    with pytest.raises(ValueError):
        SampleMask(np.full((2, 2), 1.5))


def test_apply_sample_limits_and_mean():
    p = TwinBeamParams(mean_photons=1000, seed=4)
    s = generate_pair_poisson(p, Geometry(10, 10), 300)
    same = apply_sample(s, SampleMask.uniform((10, 10), 0.0))
    assert np.array_equal(same.beam1, s.beam1)
    gone = apply_sample(s, SampleMask.uniform((10, 10), 1.0), beam=2)
    assert gone.beam2.max() == 0 and np.array_equal(gone.beam1, s.beam1)
    thin = apply_sample(s, SampleMask.uniform((10, 10), 0.01), seed=1)
    per_pixel = thin.beam1.mean(axis=0)
    se = per_pixel.std(ddof=0) / np.sqrt(per_pixel.size) + np.sqrt(990 / 300 / 100)
    assert abs(per_pixel.mean() - 990) < 3 * se
    assert np.all(np.abs(per_pixel - 990) < 2 + 3 * np.sqrt(990 / 300) * 2)
    with pytest.raises(ValueError, match="grid"):
        apply_sample(s, SampleMask.uniform((5, 5), 0.1))


def test_generator_sample_thinning():
    p = TwinBeamParams(mean_photons=1000, seed=8)
    s = generate_pair_poisson(p, Geometry(10, 10), 300, mask=SampleMask.uniform((10, 10), 0.01))
    m = s.beam1.mean()
    assert abs(m - 990) < 3 * np.sqrt(990 / s.beam1.size)
    assert abs(s.beam2.mean() - 1000) < 3 * np.sqrt(1000 / s.beam2.size)


def test_stray_and_read_noise_budget():
    p = TwinBeamParams(mean_photons=1000, stray_fraction=0.038, read_noise=4.9, seed=9)
    s = generate_pair_poisson(p, Geometry(30, 30), 40)
    total = 1000 / (1 - 0.038)
    assert s.beam1.mean() == pytest.approx(total, rel=2e-3)
    f = estimators.fano(s)
    assert f.mean == pytest.approx(1 + 4.9 ** 2 / total, abs=3 * f.standard_error + 2e-3)


def test_thermal_moments():
    mu, m_c, eta = 0.5, 40, 0.8
    p = TwinBeamParams(mu=mu, eta1=eta, eta2=eta, seed=13)
    s = generate_pair_thermal(p, Geometry(30, 30), 200, modes=(0, m_c, 0))
    n1 = s.beam1.reshape(200, -1).astype(float)
    n2 = s.beam2[:, ::-1, ::-1].reshape(200, -1).astype(float)
    mean = m_c * eta * mu
    var = m_c * eta * mu * (1 + eta * mu)
    cov = eta * eta * mu * (mu + 1) * m_c
    n = n1.size
    assert abs(n1.mean() - mean) < 4 * np.sqrt(var / n)
    assert n1.var() == pytest.approx(var, rel=0.03)
    c = np.mean((n1 - n1.mean()) * (n2 - n2.mean()))
    assert c == pytest.approx(cov, rel=0.05)


def test_thermal_validation():
    with pytest.raises(ValueError):
        generate_pair_thermal(TwinBeamParams(mu=0.0), Geometry(4, 4), 1, modes=(0, 1, 0))
    with pytest.raises(ValueError):
        generate_pair_thermal(TwinBeamParams(mu=1.0), Geometry(4, 4), 1, modes=(0, -1, 0))


def test_nrf_tracks_gaussian_collection_across_binning():
    p = TwinBeamParams(mean_photons=1000, coherence_radius=20.59, misalignment=4.914, stray_fraction=0.038,
                       read_noise=4.9, seed=21)
    s = generate_pair_poisson(p, Geometry(60, 60), 60)
    budget = theory.NoiseBudget.from_fraction(s.beam1.mean(), 0.038, 4.9)
    for d in (1, 2, 4, 5):
        res = estimators.nrf_spatial(s, RegionPair.whole_frame(s.shape), d)
        expect = theory.sigma_eff(1 - 0.81 * theory.gaussian_collection(39.0 * d, 20.59, 4.914), budget)
        assert abs(res.mean - expect) < 3 * res.standard_error + 2e-3, d
