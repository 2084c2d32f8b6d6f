import warnings

import numpy as np
import pytest

from twinbeam import estimators, pipeline, theory
from twinbeam.frames import FramePairStack, RegionPair
from twinbeam.pipeline import AlphaMap, alpha_dc, alpha_direct, alpha_ssn, build_flat_field, qe_filter
from twinbeam.sim import Geometry, SampleMask, TwinBeamParams, generate_pair_poisson


def _flat(b1, b2=None):
    b1 = np.asarray(b1)
    return build_flat_field(FramePairStack(b1, b1 if b2 is None else np.asarray(b2)))


def test_flat_uniform():
    f = _flat(np.full((3, 4, 4), 700, dtype=np.uint32))
    assert np.all(f.gain1 == 1.0) and np.all(f.mean1 == 700)


def test_flat_two_level():
    v = 300
    frame = np.full((4, 6), v, dtype=np.uint32)
    frame[:, :3] = 2 * v
    f = _flat(np.stack([frame, frame]))
    assert np.allclose(f.gain1[:, :3], 4 / 3) and np.allclose(f.gain1[:, 3:], 2 / 3)
    assert f.gain1.mean() == pytest.approx(1.0, abs=1e-12)
    corrected = f.correct(frame, 1)
    assert np.allclose(corrected, corrected[0, 0])


def test_flat_dead_pixel():
    a = np.full((3, 4, 4), 10, dtype=np.uint32)
    a[:, 2, 1] = 0
    with pytest.raises(ValueError, match=r"pixel \(2, 1\) of beam 1"):
        _flat(a)


def test_alpha_direct_arithmetic():
    f = _flat(np.full((2, 4, 4), 1000, dtype=np.uint32))
    assert np.all(alpha_direct(np.full((4, 4), 1000), f).values == 0.0)
    assert np.allclose(alpha_direct(np.full((4, 4), 990), f).values, 0.01)
    with pytest.raises(ValueError, match="flat field"):
        alpha_direct(np.full((3, 3), 990), f)


def test_alpha_ssn_identical_beams():
    rng = np.random.default_rng(0)
    b1 = rng.poisson(1000, (3, 8, 8)).astype(np.uint32)
    b2 = b1[:, ::-1, ::-1]
    f = _flat(b1, b2)
    m = alpha_ssn(b1, b2, f)
    assert np.all(m.values == 0.0)


def test_alpha_dc_shift_precondition():
    f = _flat(np.full((2, 8, 8), 100, dtype=np.uint32))
    with pytest.raises(ValueError, match="correlation"):
        alpha_dc(np.ones((8, 8)), np.ones((8, 8)), f, shift=(0, 0))
    with pytest.raises(ValueError):
        alpha_dc(np.ones((8, 8)), np.ones((8, 8)), f, shift=(0, 1), coherence_px=1.0)


def test_qe_filter_examples():
    assert qe_filter(np.array([[1.0, 3.0], [5.0, 7.0]]), 2).tolist() == [[4.0]]
    a = np.arange(12.0).reshape(3, 4)
    assert np.array_equal(qe_filter(a, 1), a)
    assert np.array_equal(qe_filter(a, 1, "sliding"), a)
    with pytest.raises(ValueError):
        qe_filter(a, 0)
    with pytest.raises(ValueError, match="divide"):
        qe_filter(a, 2)
    s = qe_filter(np.ones((5, 5)), 3, "sliding")
    assert np.allclose(s, 1.0)   # truncated edges still average to the constant
    m = qe_filter(AlphaMap(np.zeros((4, 4)), "DR"), 2)
    assert isinstance(m, AlphaMap) and m.d == 2 and m.values.shape == (2, 2)


def test_qe_filter_reduces_white_noise_variance():
    rng = np.random.default_rng(1)
    noise = rng.normal(0, 1, (200, 40, 40))
    for d in (2, 4, 5):
        v = qe_filter(noise, d).var(axis=(1, 2), ddof=1)
        ratio = v.mean() * d * d
        se = np.sqrt(2 / (1600 / d ** 2 - 1) / 200)
        assert abs(ratio - 1) < 3 * se


def test_filtered_nrf_matches_binned_nrf():
    p = TwinBeamParams(seed=3, misalignment=4.9)
    s = generate_pair_poisson(p, Geometry(20, 20), 5)
    pair = RegionPair.whole_frame(s.shape)
    for d in (2, 4, 5):
        direct = estimators.nrf_spatial(s, pair, d).per_shot
        a, b = pair.extract(s.beam1, s.beam2)
        via_filter = estimators.nrf_per_shot(qe_filter(a.astype(float), d) * d * d,
                                             qe_filter(b.astype(float), d) * d * d)
        assert np.allclose(direct, via_filter, rtol=1e-12)


def test_snr_stripe():
    rng = np.random.default_rng(2)
    maps = rng.normal(0.01, 0.04, (300, 10, 10))
    snr = pipeline.snr_stripe(maps, (0, 0, 10, 10))
    assert abs(snr - 0.25) < 3 * np.sqrt((1 + 0.25 ** 2 / 2) / 300) / 10 + 0.01
    with pytest.warns(RuntimeWarning, match="zero-variance"):
        out = pipeline.snr_stripe([np.full((3, 3), 0.01)] * 4, (0, 0, 3, 3))
    assert np.isnan(out)
    with pytest.raises(ValueError, match="outside"):
        pipeline.snr_stripe(maps, (5, 5, 10, 10))


@pytest.fixture(scope="module")
def uniform_session():
    p = TwinBeamParams(mean_photons=1000, coherence_radius=20.59, seed=17)
    geo = Geometry(30, 30)
    sample = generate_pair_poisson(p, geo, 300, mask=SampleMask.uniform((30, 30), 0.01), stream=1)
    ref = generate_pair_poisson(p, geo, 300, stream=0)
    return sample, ref, build_flat_field(ref)


def test_dc_and_ssn_unbiased_and_variance_ratios(uniform_session):
    sample, ref, flat = uniform_session
    dr = alpha_direct(sample.beam1, flat).values
    dc = alpha_dc(sample.beam1, sample.beam2, flat, shift=(0, 12), coherence_px=2 * 20.59 / 39).values
    ssn = alpha_ssn(sample.beam1, sample.beam2, flat).values
    for m in (dr, dc, ssn):
        se = m.std(ddof=1) / np.sqrt(m.size) * 3
        assert abs(m.mean() - 0.01) < 3 * se
    assert abs(dc.mean() - ssn.mean()) < 3 * np.hypot(dc.std() / np.sqrt(dc.size), ssn.std() / np.sqrt(ssn.size)) * 3
    ratio = dc.var(axis=0, ddof=1).mean() / dr.var(axis=0, ddof=1).mean()
    assert ratio == pytest.approx((2 - 0.01) / (1 - 0.01), rel=0.05)


def test_ssn_noise_matches_variance_model(uniform_session):
    sample, ref, flat = uniform_session
    sigma = estimators.nrf_spatial(ref).mean
    ssn = alpha_ssn(sample.beam1, sample.beam2, flat).values
    std = np.sqrt(ssn.var(axis=0, ddof=1).mean())
    expect = theory.delta_alpha_df(alpha=0.01, mean_n=flat.mean1.mean(), nrf=sigma)
    assert std == pytest.approx(expect, rel=0.03)


def test_ssn_sigma_point_eight_single_shot_noise():
    # sigma = 0.8 from a weakly correlated source: per-pixel std ~ sqrt(2 sigma / N) = 0.040
    assert np.sqrt(theory.diff_variance(alpha=0.01, mean_n=1e3, nrf=0.8)) / 1e3 == pytest.approx(0.0399, abs=1e-4)


def test_sample_beam_switch(uniform_session):
    sample, ref, flat = uniform_session
    swapped = FramePairStack(sample.beam2, sample.beam1)
    m2 = alpha_ssn(swapped.beam2, swapped.beam1, flat, sample_beam=2).values
    m1 = alpha_ssn(sample.beam1, sample.beam2, flat, sample_beam=1).values
    assert abs(m2.mean() - m1.mean()) < 1e-3
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pipeline.snr_stripe(m1, (0, 0, 5, 5))
