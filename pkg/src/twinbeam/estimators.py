"""Statistical estimators applied to frame-pair stacks.

Spatial statistics are computed per shot over the pixels of a region (after
optional d x d binning by summation) and then averaged over shots. Variances
use the unbiased n-1 normalisation throughout.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .frames import FramePairStack, Region, RegionPair
from .theory import FWHM_PER_SIGMA


@dataclass(frozen=True, eq=False)
class NrfResult:
    per_shot: np.ndarray
    mean: float
    standard_error: float
    scale: float  # binned pixel size L, um

    @classmethod
    def from_samples(cls, values, scale: float) -> "NrfResult":
        v = np.asarray(values, dtype=np.float64)
        se = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        return cls(v, float(v.mean()), se, float(scale))


FanoResult = NrfResult


@dataclass(frozen=True, eq=False)
class XcorrMap:
    shifts_y: np.ndarray
    shifts_x: np.ndarray
    coefficients: np.ndarray       # [iy, ix] for shift (shifts_y[iy], shifts_x[ix])
    fwhm_x: float                  # um
    fwhm_y: float
    fwhm_x_err: float
    fwhm_y_err: float
    peak: tuple[float, float]      # fitted (dy, dx) of the peak, pixels
    peak_value: float
    pitch: float

    @property
    def argmax(self) -> tuple[int, int]:
        iy, ix = np.unravel_index(np.argmax(self.coefficients), self.coefficients.shape)
        return int(self.shifts_y[iy]), int(self.shifts_x[ix])


def bin_frames(a: np.ndarray, d: int) -> np.ndarray:
    """Sum non-overlapping d x d blocks over the last two axes."""
    if d < 1:
        raise ValueError("binning must be >= 1")
    h, w = a.shape[-2:]
    if h % d or w % d:
        raise ValueError(f"binning {d} does not divide region {h}x{w}")
    if d == 1:
        return a.astype(np.float64)
    lead = a.shape[:-2]
    return a.reshape(*lead, h // d, d, w // d, d).sum(axis=(-3, -1), dtype=np.float64)


def _spatial_var(a: np.ndarray) -> np.ndarray:
    flat = a.reshape(a.shape[0], -1)
    return flat.var(axis=1, ddof=1)


def _spatial_mean(a: np.ndarray) -> np.ndarray:
    return a.reshape(a.shape[0], -1).mean(axis=1)


def nrf_per_shot(beam_a: np.ndarray, beam_b_mirrored: np.ndarray, d: int = 1) -> np.ndarray:
    """Per-shot NRF of already paired regions, shape (shots, s, s)."""
    a = bin_frames(beam_a, d)
    b = bin_frames(beam_b_mirrored, d)
    if a.shape[-1] * a.shape[-2] < 2:
        raise ValueError("need at least two binned pixels for a spatial variance")
    return _spatial_var(a - b) / _spatial_mean(a + b)


def nrf_spatial(stack: FramePairStack, regions: RegionPair | None = None, d: int = 1) -> NrfResult:
    """Noise reduction factor from spatial statistics of each shot.

    For shot n, V_x[N_A(x) - N_B(-x)] / E_x[N_A(x) + N_B(-x)] over the binned
    pixel pairs, then mean and standard error over shots.
    """
    regions = regions or RegionPair.whole_frame(stack.shape)
    if regions.size % d:
        raise ValueError(f"binning {d} does not divide region size {regions.size}")
    a, b = regions.extract(stack.beam1, stack.beam2)
    return NrfResult.from_samples(nrf_per_shot(a, b, d), d * stack.pitch)


def fano(stack: FramePairStack, region: Region | None = None, d: int = 1, beam: int = 1) -> NrfResult:
    """Per-shot spatial Fano factor V_x[N] / E_x[N] of one beam."""
    h, w = stack.shape
    region = region or Region(((h - min(h, w)) // 2, (w - min(h, w)) // 2), min(h, w))
    if not region.fits(stack.shape):
        raise ValueError(f"region {region} does not fit frames of shape {stack.shape}")
    if region.size % d:
        raise ValueError(f"binning {d} does not divide region size {region.size}")
    src = stack.beam1 if beam == 1 else stack.beam2
    a = bin_frames(src[(slice(None), *region.slices())], d)
    return NrfResult.from_samples(_spatial_var(a) / _spatial_mean(a), d * stack.pitch)


def nrf_tiles(stack: FramePairStack, regions: RegionPair | None = None, tile: int = 8) -> np.ndarray:
    """Shot-averaged NRF on tile x tile sub-blocks of region A (an NRF map)."""
    regions = regions or RegionPair.whole_frame(stack.shape)
    a, b = regions.extract(stack.beam1, stack.beam2)
    n = regions.size // tile
    if n < 1:
        raise ValueError("tile larger than region")
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            sl = (slice(None), slice(i * tile, (i + 1) * tile), slice(j * tile, (j + 1) * tile))
            out[i, j] = nrf_per_shot(a[sl], b[sl]).mean()
    return out


def _gauss2d(xy, base, amp, y0, x0, sy, sx):
    y, x = xy
    return base + amp * np.exp(-0.5 * ((y - y0) / sy) ** 2 - 0.5 * ((x - x0) / sx) ** 2)


def xcorr_map(stack: FramePairStack, regions: RegionPair | None = None, max_shift: int = 8,
              fit_halfwidth: int = 3) -> XcorrMap:
    """Correlation coefficient between region A and the mirrored region B moved by (dy, dx).

    A shift (dy, dx) compares A at x with the beam-2 pixel partnered to x
    displaced by (+dy, +dx) in beam-2 coordinates, so a rigid misalignment of
    beam 2 shows up as a peak at that displacement. The coefficient is the
    per-shot Pearson correlation over the overlapping pixels, averaged over
    shots. A 2-D Gaussian with offset is fitted within ``fit_halfwidth`` of
    the maximum.
    """
    regions = regions or RegionPair.whole_frame(stack.shape)
    s = regions.size
    if max_shift < 0 or (s - max_shift) ** 2 * 2 < s * s:
        raise ValueError(f"max shift {max_shift} leaves less than half of a {s}-pixel region overlapping")
    a, bm = regions.extract(stack.beam1, stack.beam2)
    a = a.astype(np.float64)
    bm = bm.astype(np.float64)
    a = a - a.mean(axis=(1, 2), keepdims=True)
    bm = bm - bm.mean(axis=(1, 2), keepdims=True)
    if np.any(a.reshape(a.shape[0], -1).var(axis=1) == 0) or np.any(bm.reshape(bm.shape[0], -1).var(axis=1) == 0):
        raise ValueError("degenerate region: zero spatial variance in some shot")
    shifts = np.arange(-max_shift, max_shift + 1)
    coef = np.empty((shifts.size, shifts.size))
    for iy, dy in enumerate(shifts):
        for ix, dx in enumerate(shifts):
            # beam-2 displacement (+dy, +dx) is (-dy, -dx) in the mirrored array
            ay = slice(max(0, dy), s + min(0, dy))
            by = slice(max(0, -dy), s + min(0, -dy))
            ax = slice(max(0, dx), s + min(0, dx))
            bx = slice(max(0, -dx), s + min(0, -dx))
            u = a[:, ay, ax]
            v = bm[:, by, bx]
            u = u - u.mean(axis=(1, 2), keepdims=True)
            v = v - v.mean(axis=(1, 2), keepdims=True)
            num = (u * v).sum(axis=(1, 2))
            den = np.sqrt((u * u).sum(axis=(1, 2)) * (v * v).sum(axis=(1, 2)))
            coef[iy, ix] = np.mean(num / den)

    iy, ix = np.unravel_index(np.argmax(coef), coef.shape)
    lo_y, hi_y = max(0, iy - fit_halfwidth), min(shifts.size, iy + fit_halfwidth + 1)
    lo_x, hi_x = max(0, ix - fit_halfwidth), min(shifts.size, ix + fit_halfwidth + 1)
    yy, xx = np.meshgrid(shifts[lo_y:hi_y], shifts[lo_x:hi_x], indexing="ij")
    zz = coef[lo_y:hi_y, lo_x:hi_x]
    p0 = (float(np.median(coef)), float(coef[iy, ix]), float(shifts[iy]), float(shifts[ix]), 1.0, 1.0)
    try:
        with warnings.catch_warnings():
            # a noiseless peak fits exactly and leaves no residual to scale the covariance
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, pcov = curve_fit(_gauss2d, (yy.ravel(), xx.ravel()), zz.ravel(), p0=p0, maxfev=20000)
        perr = np.sqrt(np.clip(np.diag(pcov), 0, None))
    except (RuntimeError, ValueError):
        popt = np.array(p0)
        perr = np.full(6, np.nan)
    p = stack.pitch
    return XcorrMap(shifts, shifts.copy(), coef,
                    fwhm_x=float(FWHM_PER_SIGMA * abs(popt[5]) * p),
                    fwhm_y=float(FWHM_PER_SIGMA * abs(popt[4]) * p),
                    fwhm_x_err=float(FWHM_PER_SIGMA * perr[5] * p),
                    fwhm_y_err=float(FWHM_PER_SIGMA * perr[4] * p),
                    peak=(float(popt[2]), float(popt[3])),
                    peak_value=float(coef[iy, ix]), pitch=p)


def temporal_stats(maps, position: tuple[int, int] | None = None):
    """Unbiased mean and variance over shots, per pixel or at ``position``."""
    a = np.asarray([m.values if hasattr(m, "values") else m for m in maps], dtype=np.float64)
    if a.shape[0] < 2:
        raise ValueError("temporal statistics need at least two shots")
    mean = a.mean(axis=0)
    var = a.var(axis=0, ddof=1)
    if position is not None:
        return float(mean[position]), float(var[position])
    return mean, var
