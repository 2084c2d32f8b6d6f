"""Absorption maps from raw frames: flat fielding, the three imaging schemes,
and the d x d neighbourhood filter.

The sample may sit in either beam; the other beam is the reference. Every
scheme returns alpha-hat on the sample beam's pixel grid. The SSN and DC
estimates subtract the sample pixel from the (mirrored) reference pixel so
that the expectation is +alpha.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .frames import FramePairStack, PhotonFrame

SCHEMES = ("DR", "DC", "SSN")


@dataclass(frozen=True, eq=False)
class FlatField:
    gain1: np.ndarray
    gain2: np.ndarray
    mean1: np.ndarray   # expected counts per pixel after gain correction
    mean2: np.ndarray

    def gain(self, beam: int) -> np.ndarray:
        return self.gain1 if beam == 1 else self.gain2

    def mean(self, beam: int) -> np.ndarray:
        return self.mean1 if beam == 1 else self.mean2

    def correct(self, frame, beam: int) -> np.ndarray:
        a = _values(frame)
        g = self.gain(beam)
        if a.shape[-2:] != g.shape:
            raise ValueError(f"frame shape {a.shape[-2:]} does not match flat field {g.shape}")
        return a / g

    @property
    def shape(self) -> tuple[int, int]:
        return self.gain1.shape


@dataclass(frozen=True, eq=False)
class AlphaMap:
    values: np.ndarray
    scheme: str
    d: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("alpha map has non-finite values")


def _values(x) -> np.ndarray:
    if isinstance(x, PhotonFrame):
        return x.data.astype(np.float64)
    if isinstance(x, AlphaMap):
        return x.values
    return np.asarray(x, dtype=np.float64)


def build_flat_field(calibration: FramePairStack) -> FlatField:
    """Gain = temporal mean / global mean per pixel, from sample-free shots."""
    stack = calibration
    if any(stack.labels):
        stack = calibration.with_sample(False)
    if stack.n_shots < 2:
        raise ValueError("flat field needs at least two calibration shots")
    out = []
    for beam, data in ((1, stack.beam1), (2, stack.beam2)):
        m = data.mean(axis=0, dtype=np.float64)
        dead = np.argwhere(m <= 0)
        if dead.size:
            r, c = dead[0]
            raise ValueError(f"pixel ({r}, {c}) of beam {beam} has zero temporal mean")
        gm = m.mean()
        gain = m / gm
        out.append((gain, np.full(m.shape, gm)))
    (g1, m1), (g2, m2) = out
    return FlatField(g1, g2, m1, m2)


def qe_filter(values, d: int, mode: str = "block"):
    """Replace each pixel by the mean of its d x d neighbourhood.

    ``block`` tiles the map with non-overlapping cells (output shrinks by d);
    ``sliding`` keeps the grid and averages a centred window, truncated at the
    borders. Although called a median filter in the imaging literature, it
    is a mean.
    """
    if d < 1:
        raise ValueError("filter scale d must be >= 1")
    if isinstance(values, AlphaMap):
        return AlphaMap(qe_filter(values.values, d, mode), values.scheme, values.d * d if mode == "block" else d)
    a = _values(values)
    if mode == "block":
        h, w = a.shape[-2:]
        if h % d or w % d:
            raise ValueError(f"block size {d} does not divide map {h}x{w}")
        if d == 1:
            return a.copy()
        lead = a.shape[:-2]
        return a.reshape(*lead, h // d, d, w // d, d).mean(axis=(-3, -1))
    if mode == "sliding":
        if d == 1:
            return a.copy()
        size = (1,) * (a.ndim - 2) + (d, d)
        num = uniform_filter(a, size=size, mode="constant", cval=0.0)
        den = uniform_filter(np.ones(a.shape[-2:]), size=(d, d), mode="constant", cval=0.0)
        return num / den
    raise ValueError(f"mode must be 'block' or 'sliding', got {mode!r}")


def _reference(flat: FlatField, sample_beam: int):
    return 2 if sample_beam == 1 else 1


def _balanced_reference(reference, flat: FlatField, sample_beam: int) -> np.ndarray:
    """Reference beam flat-corrected, mirrored onto the sample grid and scaled
    to the sample beam's mean level."""
    rb = _reference(flat, sample_beam)
    ref = flat.correct(reference, rb)[..., ::-1, ::-1]
    scale = flat.mean(sample_beam) / flat.mean(rb)[::-1, ::-1]
    return ref * scale


def alpha_direct(frame, flat: FlatField, d: int = 1, sample_beam: int = 1, mode: str = "block") -> AlphaMap:
    n = flat.correct(frame, sample_beam)
    alpha = 1.0 - n / flat.mean(sample_beam)
    return AlphaMap(qe_filter(alpha, d, mode), "DR", d)


def alpha_ssn(sample, reference, flat: FlatField, d: int = 1, sample_beam: int = 1,
              mode: str = "block") -> AlphaMap:
    """Twin-beam subtraction: (N_ref(-x) - N_sample(x)) / <N>(x)."""
    s = flat.correct(sample, sample_beam)
    r = _balanced_reference(reference, flat, sample_beam)
    if r.shape != s.shape:
        raise ValueError("sample and reference frames are not registered")
    alpha = (r - s) / flat.mean(sample_beam)
    return AlphaMap(qe_filter(alpha, d, mode), "SSN", d)


def alpha_dc(sample, reference, flat: FlatField, d: int = 1, shift: tuple[int, int] = (0, 0),
             coherence_px: float = 1.0, sample_beam: int = 1, mode: str = "block") -> AlphaMap:
    """Classical differential baseline: like :func:`alpha_ssn` but against a
    reference region moved by ``shift`` pixels, beyond the correlation area.

    The moved reference wraps around the frame edges; wrapped pixels are
    just as uncorrelated with the sample pixel they face.
    """
    dy, dx = (int(v) for v in shift)
    if max(abs(dy), abs(dx)) <= coherence_px:
        raise ValueError(f"shift {shift} is within the correlation diameter "
                         f"({coherence_px:.3g} px); the reference would stay correlated")
    s = flat.correct(sample, sample_beam)
    r = _balanced_reference(reference, flat, sample_beam)
    r = np.roll(r, (dy, dx), axis=(-2, -1))
    alpha = (r - s) / flat.mean(sample_beam)
    return AlphaMap(qe_filter(alpha, d, mode), "DC", d)


def snr_map(maps):
    """Per-pixel temporal SNR E_n[alpha] / sqrt(V_n[alpha]); zero-variance pixels are NaN."""
    a = np.asarray([_values(m) for m in maps])
    if a.shape[0] < 2:
        raise ValueError("SNR needs at least two shots")
    mean = a.mean(axis=0)
    var = a.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        snr = np.where(var > 0, mean / np.sqrt(var), np.nan)
    return snr


def snr_stripe(maps, stripe: tuple[int, int, int, int]) -> float:
    """Spatial mean of the temporal SNR over ``stripe = (row, col, height, width)``.

    Pixels with zero temporal variance are excluded and counted in a warning.
    """
    r0, c0, h, w = stripe
    snr = snr_map(maps)
    if r0 < 0 or c0 < 0 or r0 + h > snr.shape[0] or c0 + w > snr.shape[1] or h < 1 or w < 1:
        raise ValueError(f"stripe {stripe} lies outside the {snr.shape} map")
    block = snr[r0:r0 + h, c0:c0 + w]
    bad = int(np.isnan(block).sum())
    if bad:
        warnings.warn(f"{bad} zero-variance pixel(s) excluded from the stripe SNR", RuntimeWarning, stacklevel=2)
    if bad == block.size:
        return float("nan")
    return float(np.nanmean(block))
