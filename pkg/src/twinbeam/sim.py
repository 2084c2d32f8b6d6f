"""Monte Carlo generation of far-field twin-beam frame pairs.

Pixel (i, j) of beam 1 is point-symmetric to pixel (H-1-i, W-1-j) of beam 2.
A pair born at beam-1 position x1 (relative to the symmetry centre) puts its
partner at -x1 + jitter + delta, the jitter being an isotropic or
axis-aligned Gaussian of FWHM 2r.

Two engines produce the same distribution. ``photon`` follows every pair
explicitly. ``pixel`` uses Poisson splitting: the pairs of one source pixel
that end up in a given (landing pixel, detected-in-beam-1, detected-in-beam-2)
class are independent Poisson variables whose rates follow from the jitter
kernel integrated over pixels, so a shot costs O(pixels x kernel) draws
instead of O(photons). Chromatic shear makes the kernel position dependent
and is only available in the photon engine.

Each shot draws from its own substream keyed on (seed, stream, shot), so
serial and threaded generation are bit-identical.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .frames import DEFAULT_PITCH_UM, FramePairStack
from .theory import FWHM_PER_SIGMA, _box_gauss_overlap

KERNEL_TAIL_SIGMAS = 7.0


@dataclass(frozen=True)
class TwinBeamParams:
    mean_photons: float = 1000.0          # detected twin-beam photons per pixel per beam
    coherence_radius: float = 20.6        # r, um, detection plane (x axis when anisotropic)
    coherence_radius_y: float | None = None
    misalignment: float = 0.0             # delta, um, rigid shift of beam 2 along x
    misalignment_y: float = 0.0
    eta1: float = 0.81
    eta2: float = 0.81
    mu: float = 0.0                       # photons per mode, thermal generator only
    stray_fraction: float = 0.0           # N_st / N_tot
    read_noise: float = 0.0               # electrons rms per pixel per frame
    chromatic_shear: float = 0.0          # max |2 dlambda / lambda_d|, uniform band
    beam_offset: float = 0.0              # um, x position of the frame centres from the pump axis
    envelope_waist: float | None = None   # um, Gaussian intensity envelope; None = uniform
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.eta1 <= 1 and 0 <= self.eta2 <= 1):
            raise ValueError("detection efficiencies must lie in [0, 1]")
        if not self.coherence_radius > 0:
            raise ValueError("coherence radius must be positive")
        if self.coherence_radius_y is not None and not self.coherence_radius_y > 0:
            raise ValueError("coherence radius must be positive")
        if self.misalignment < 0 or self.misalignment_y < 0:
            raise ValueError("misalignment must be non-negative")
        if self.mu < 0 or self.mean_photons < 0:
            raise ValueError("mu and mean photon number must be non-negative")
        if not 0 <= self.stray_fraction < 1:
            raise ValueError("stray fraction must lie in [0, 1)")
        if self.read_noise < 0:
            raise ValueError("read noise must be non-negative")
        if self.chromatic_shear < 0:
            raise ValueError("chromatic shear must be non-negative")
        if self.envelope_waist is not None and not self.envelope_waist > 0:
            raise ValueError("envelope waist must be positive")

    @property
    def r_xy(self) -> tuple[float, float]:
        ry = self.coherence_radius if self.coherence_radius_y is None else self.coherence_radius_y
        return self.coherence_radius, ry

    @property
    def stray_mean(self) -> float:
        f = self.stray_fraction
        return self.mean_photons * f / (1 - f)

    def with_(self, **kw) -> "TwinBeamParams":
        return replace(self, **kw)


@dataclass(frozen=True)
class Geometry:
    width: int
    height: int
    pitch: float = DEFAULT_PITCH_UM

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"geometry {self.width}x{self.height} cannot hold a region pair")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width


@dataclass(frozen=True, eq=False)
class SampleMask:
    """Per-pixel absorption on the frame grid of the beam that carries the sample."""

    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64)
        if a.ndim != 2:
            raise ValueError("mask must be 2-D")
        if not np.all((a >= 0) & (a <= 1)):
            raise ValueError("absorption must lie in [0, 1] everywhere")
        a.setflags(write=False)
        object.__setattr__(self, "alpha", a)

    @classmethod
    def uniform(cls, shape, alpha: float) -> "SampleMask":
        return cls(np.full(shape, float(alpha)))


def shot_rng(seed: int, shot: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        [int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream), int(shot)])))


def _workers(workers: int | None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("TWINBEAM_THREADS")
    return max(1, int(env)) if env else 1


def _run_shots(fn, shots: int, workers: int | None):
    n = _workers(workers)
    if n == 1 or shots == 1:
        return [fn(k) for k in range(shots)]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, range(shots)))


def _envelope(params: TwinBeamParams, geometry: Geometry, pad: int) -> np.ndarray:
    """Relative pair rate per source pixel on the padded beam-1 grid."""
    h, w = geometry.height + 2 * pad, geometry.width + 2 * pad
    if params.envelope_waist is None:
        return np.ones((h, w))
    p = geometry.pitch
    y = (np.arange(h) - pad + 0.5 - geometry.height / 2) * p
    x = (np.arange(w) - pad + 0.5 - geometry.width / 2) * p
    rr = y[:, None] ** 2 + x[None, :] ** 2
    return np.exp(-2 * rr / params.envelope_waist ** 2)


def _pair_rate(params: TwinBeamParams) -> float:
    eta = 0.5 * (params.eta1 + params.eta2)
    if params.mean_photons == 0:
        return 0.0
    if eta == 0:
        raise ValueError("at least one detector needs a non-zero efficiency")
    return params.mean_photons / eta


def _axis_kernel(sigma_px: float, shift_px: float) -> tuple[np.ndarray, np.ndarray]:
    """Offsets k and P(partner lands k cells from the mirror cell) along one axis."""
    reach = int(math.ceil(abs(shift_px) + KERNEL_TAIL_SIGMAS * sigma_px)) + 1
    k = np.arange(-reach, reach + 1)
    w = _box_gauss_overlap(sigma_px, shift_px - k)
    w = np.clip(w, 0.0, None)
    keep = w > 1e-15
    return k[keep], w[keep]


def pair_kernel(params: TwinBeamParams, pitch: float):
    """Separable landing-probability kernel in pixel offsets: (ky, wy, kx, wx)."""
    rx, ry = params.r_xy
    sx = 2 * rx / FWHM_PER_SIGMA / pitch
    sy = 2 * ry / FWHM_PER_SIGMA / pitch
    kx, wx = _axis_kernel(sx, params.misalignment / pitch)
    ky, wy = _axis_kernel(sy, params.misalignment_y / pitch)
    return ky, wy, kx, wx


def _shifted(a: np.ndarray, dy: int, dx: int, pad: int, shape) -> np.ndarray:
    """View of padded array ``a`` aligned so that out[i, j] = a_unpadded[i + dy, j + dx]."""
    h, w = shape
    return a[pad + dy: pad + dy + h, pad + dx: pad + dx + w]


def _detector_noise(counts: np.ndarray, params: TwinBeamParams, rng: np.random.Generator) -> np.ndarray:
    out = counts.astype(np.int64)
    if params.stray_fraction > 0:
        out += rng.poisson(params.stray_mean, size=out.shape)
    if params.read_noise > 0:
        out += np.rint(rng.normal(0.0, params.read_noise, size=out.shape)).astype(np.int64)
        np.clip(out, 0, None, out=out)
    return out.astype(np.uint32)


def _transmission(mask: SampleMask | None, beam: int, sample_beam: int, shape) -> np.ndarray:
    if mask is None or beam != sample_beam:
        return np.ones(shape)
    if mask.alpha.shape != tuple(shape):
        raise ValueError(f"mask grid {mask.alpha.shape} does not match frames {tuple(shape)}")
    return 1.0 - mask.alpha


def _pixel_shot(params, geometry, rng, t1, t2, kernel, pad, rel_rate):
    h, w = geometry.shape
    ky, wy, kx, wx = kernel
    lam = _pair_rate(params) * rel_rate                      # padded source grid
    a = np.zeros_like(lam)
    a[pad:pad + h, pad:pad + w] = params.eta1 * t1           # P(photon 1 recorded)
    # beam-2 detection probability in mirrored coordinates: bflip[i, j] is the
    # probability for the pixel that mirrors beam-1 pixel (i, j)
    bflip = np.zeros_like(lam)
    bflip[pad:pad + h, pad:pad + w] = (params.eta2 * t2)[::-1, ::-1]

    beam1 = np.zeros((h, w), dtype=np.int64)
    beam2flip = np.zeros_like(lam, dtype=np.int64)
    sum_wb = np.zeros((h, w))
    rate2 = np.zeros_like(lam)
    lam_in = lam[pad:pad + h, pad:pad + w]
    a_in = a[pad:pad + h, pad:pad + w]
    lam_only2 = lam * (1 - a)
    hp, wp = lam.shape
    for dy, py in zip(ky, wy):
        for dx, px in zip(kx, wx):
            wk = py * px
            # photon 2 from beam-1 pixel (i, j) lands at mirror(i, j) + (dy, dx)
            # which is mirrored-grid cell (i - dy, j - dx)
            b_k = _shifted(bflip, -dy, -dx, pad, (h, w))
            both = rng.poisson(lam_in * wk * a_in * b_k)
            beam1 += both
            beam2flip[pad - dy: pad - dy + h, pad - dx: pad - dx + w] += both
            sum_wb += wk * b_k
            # partner-only photons arriving at mirrored cell m from source m + k
            ylo, yhi = max(0, -dy), min(hp, hp - dy)
            xlo, xhi = max(0, -dx), min(wp, wp - dx)
            rate2[ylo:yhi, xlo:xhi] += wk * lam_only2[ylo + dy:yhi + dy, xlo + dx:xhi + dx]
    beam1 += rng.poisson(lam_in * a_in * np.clip(1 - sum_wb, 0, None))
    beam2flip += rng.poisson(rate2 * bflip)
    beam2 = beam2flip[pad:pad + h, pad:pad + w][::-1, ::-1]
    return beam1, beam2


def _photon_shot(params, geometry, rng, t1, t2, kernel, pad, rel_rate):
    h, w = geometry.shape
    p = geometry.pitch
    lam = _pair_rate(params) * rel_rate
    n = rng.poisson(lam)
    idx = np.repeat(np.arange(n.size), n.ravel())
    y1 = idx // n.shape[1] - pad + rng.random(idx.size)      # beam-1 pixel units
    x1 = idx % n.shape[1] - pad + rng.random(idx.size)
    rx, ry = params.r_xy
    # physical coordinates relative to the symmetry centre, um
    u1y = (y1 - h / 2) * p
    u1x = (x1 - w / 2) * p + params.beam_offset
    s = 0.0
    if params.chromatic_shear > 0:
        s = rng.uniform(-params.chromatic_shear, params.chromatic_shear, idx.size)
    u2y = -u1y + s * u1y + rng.normal(0.0, 2 * ry / FWHM_PER_SIGMA, idx.size) + params.misalignment_y
    u2x = -u1x + s * u1x + rng.normal(0.0, 2 * rx / FWHM_PER_SIGMA, idx.size) + params.misalignment
    y2 = u2y / p + h / 2
    x2 = (u2x + params.beam_offset) / p + w / 2

    i1, j1 = np.floor(y1).astype(np.int64), np.floor(x1).astype(np.int64)
    i2, j2 = np.floor(y2).astype(np.int64), np.floor(x2).astype(np.int64)
    in1 = (i1 >= 0) & (i1 < h) & (j1 >= 0) & (j1 < w)
    in2 = (i2 >= 0) & (i2 < h) & (j2 >= 0) & (j2 < w)
    u_a = rng.random(idx.size)
    u_b = rng.random(idx.size)
    det1 = np.zeros(idx.size, bool)
    det2 = np.zeros(idx.size, bool)
    det1[in1] = u_a[in1] < params.eta1 * t1[i1[in1], j1[in1]]
    det2[in2] = u_b[in2] < params.eta2 * t2[i2[in2], j2[in2]]
    beam1 = np.bincount(i1[det1] * w + j1[det1], minlength=h * w).reshape(h, w)
    beam2 = np.bincount(i2[det2] * w + j2[det2], minlength=h * w).reshape(h, w)
    return beam1, beam2


def generate_pair_poisson(params: TwinBeamParams, geometry: Geometry, shots: int, *,
                          mask: SampleMask | None = None, sample_beam: int = 1,
                          engine: str = "auto", stream: int = 0, exposure: float = 0.1,
                          workers: int | None = None) -> FramePairStack:
    """Low-gain twin beams: Poisson pair emission, Gaussian partner jitter,
    sample thinning, detection thinning, stray light and read noise in that order."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if sample_beam not in (1, 2):
        raise ValueError("sample_beam must be 1 or 2")
    if engine == "auto":
        engine = "photon" if params.chromatic_shear > 0 else "pixel"
    if engine not in ("pixel", "photon"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "pixel" and params.chromatic_shear > 0:
        raise ValueError("chromatic shear needs the photon engine")
    shape = geometry.shape
    t1 = _transmission(mask, 1, sample_beam, shape)
    t2 = _transmission(mask, 2, sample_beam, shape)
    kernel = pair_kernel(params, geometry.pitch)
    pad = int(max(np.abs(kernel[0]).max(), np.abs(kernel[2]).max())) + 1
    if params.chromatic_shear > 0:
        extent = (abs(params.beam_offset) + geometry.pitch * max(shape)) * params.chromatic_shear
        pad += int(math.ceil(extent / geometry.pitch)) + 1
    rel_rate = _envelope(params, geometry, pad)
    step = _pixel_shot if engine == "pixel" else _photon_shot

    def one(k):
        rng = shot_rng(params.seed, k, stream)
        b1, b2 = step(params, geometry, rng, t1, t2, kernel, pad, rel_rate)
        return _detector_noise(b1, params, rng), _detector_noise(b2, params, rng)

    frames = _run_shots(one, shots, workers)
    return FramePairStack(np.stack([f[0] for f in frames]), np.stack([f[1] for f in frames]),
                          geometry.pitch, exposure, (mask is not None,) * shots)


def generate_pair_thermal(params: TwinBeamParams, geometry: Geometry, shots: int,
                          modes: tuple[int, int, int], beta: float = 0.5, *,
                          mask: SampleMask | None = None, sample_beam: int = 1,
                          stream: int = 0, exposure: float = 0.1,
                          workers: int | None = None) -> FramePairStack:
    """Multi-thermal pixel pairs built from (M_b, M_c, M_u) modes of mean ``mu``.

    Correlated modes give both pixels the same thermal draw; uncorrelated
    modes are drawn separately per beam; border modes are shared but thinned
    by ``beta`` independently on each side. Sample and detection losses are
    binomial thinning, applied after the mode draws.
    """
    m_b, m_c, m_u = modes
    for m in modes:
        if m < 0 or int(m) != m:
            raise ValueError(f"mode counts must be non-negative integers, got {modes}")
    if not params.mu > 0:
        raise ValueError("thermal generation needs mu > 0")
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    if sample_beam not in (1, 2):
        raise ValueError("sample_beam must be 1 or 2")
    shape = geometry.shape
    # transmissions in beam-1 pixel order; beam 2 is flipped back at the end
    t1 = _transmission(mask, 1, sample_beam, shape)
    t2 = _transmission(mask, 2, sample_beam, shape)[::-1, ::-1]
    p_geo = 1.0 / (1.0 + params.mu)

    def thermal(rng, m):
        if m == 0:
            return np.zeros(shape, dtype=np.int64)
        return rng.negative_binomial(int(m), p_geo, size=shape)

    def one(k):
        rng = shot_rng(params.seed, k, stream)
        shared = thermal(rng, m_c)
        border = thermal(rng, m_b)
        own1 = thermal(rng, m_u)
        own2 = thermal(rng, m_u)
        n1 = rng.binomial(shared + own1, params.eta1 * t1) + rng.binomial(border, beta * params.eta1 * t1)
        n2 = rng.binomial(shared + own2, params.eta2 * t2) + rng.binomial(border, beta * params.eta2 * t2)
        return _detector_noise(n1, params, rng), _detector_noise(n2[::-1, ::-1], params, rng)

    frames = _run_shots(one, shots, workers)
    return FramePairStack(np.stack([f[0] for f in frames]), np.stack([f[1] for f in frames]),
                          geometry.pitch, exposure, (mask is not None,) * shots)


def apply_sample(stack: FramePairStack, mask: SampleMask, beam: int = 1, seed: int = 0) -> FramePairStack:
    """Binomially thin the counts of one beam with survival 1 - alpha per pixel.

    Meant for raw photon counts; thinning frames that already carry read
    noise treats the electronic offset as photons.
    """
    if beam not in (1, 2):
        raise ValueError("beam must be 1 or 2")
    if mask.alpha.shape != stack.shape:
        raise ValueError(f"mask grid {mask.alpha.shape} does not match frames {stack.shape}")
    if stack.beam1.dtype != np.uint32:
        raise ValueError("sample thinning needs raw count frames")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 0x5A4D])))
    src = stack.beam1 if beam == 1 else stack.beam2
    if np.all(mask.alpha == 0):
        thinned = src
    else:
        thinned = rng.binomial(src.astype(np.int64), np.broadcast_to(1 - mask.alpha, src.shape))
    b1, b2 = (thinned, stack.beam2) if beam == 1 else (stack.beam1, thinned)
    return FramePairStack(b1, b2, stack.pitch, stack.exposure, (True,) * stack.n_shots)


def sever_correlations(stack: FramePairStack, other: FramePairStack) -> FramePairStack:
    """Pair beam 1 of ``stack`` with an independently generated beam 2."""
    return FramePairStack(stack.beam1, other.beam2, stack.pitch, stack.exposure, stack.labels)
