"""Closed-form noise model for direct, differential and twin-beam absorption imaging.

Every function is a pure evaluation of an analytic expression. Lengths are
micrometres in one consistent plane (the detection plane by convention).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .frames import OpticsConstants

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class SchemeNoiseInputs:
    alpha: float = 0.0
    mean_n: float = 1000.0
    fano: float = 1.0
    nrf: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.mean_n > 0:
            raise ValueError(f"mean photon number must be positive, got {self.mean_n}")
        if self.fano < 0 or self.nrf < 0:
            raise ValueError("Fano factor and NRF must be non-negative")


@dataclass(frozen=True)
class ModeGeometry:
    """Detector size ``L``, coherence radius ``r`` and misalignment ``delta``
    plus the mode-statistics constants that enter the NRF model."""

    L: float
    r: float
    delta: float = 0.0
    beta: float = 0.5
    mu: float = 0.0
    gamma: float = 1.0
    eta0: float = 0.81

    def __post_init__(self):
        if not (self.L > 0 and self.r > 0):
            raise ValueError("L and r must be positive")
        if self.delta < 0 or self.mu < 0:
            raise ValueError("delta and mu must be non-negative")
        if not 0.0 <= self.beta <= 1.0 or not 0.0 <= self.eta0 <= 1.0:
            raise ValueError("beta and eta0 must lie in [0, 1]")
        if self.gamma < 1.0:
            raise ValueError("gamma is defined as >= 1")
        if self.L <= self.r:
            warnings.warn(f"model assumes L > r (L={self.L}, r={self.r})", stacklevel=3)
        if self.delta >= self.L / 2:
            warnings.warn(f"model assumes delta << L (delta={self.delta}, L={self.L})", stacklevel=3)

    @property
    def X(self) -> float:
        return self.L / (2.0 * self.r)

    @property
    def D(self) -> float:
        return self.delta / (2.0 * self.r)


@dataclass(frozen=True)
class NoiseBudget:
    """Spurious counts riding on the twin-beam signal of one detector."""

    total_n: float
    stray_n: float = 0.0
    read_noise: float = 0.0

    def __post_init__(self):
        if not self.total_n > 0:
            raise ValueError("total photon number must be positive")
        if not 0 <= self.stray_n <= self.total_n:
            raise ValueError("stray counts must lie in [0, total]")
        if self.read_noise < 0:
            raise ValueError("read noise must be non-negative")

    @classmethod
    def from_fraction(cls, total_n: float, stray_fraction: float = 0.0, read_noise: float = 0.0):
        return cls(total_n, stray_fraction * total_n, read_noise)

    @property
    def f_twb(self) -> float:
        return (self.total_n - self.stray_n) / self.total_n

    @property
    def f_noise(self) -> float:
        return (self.read_noise ** 2 + self.stray_n) / self.total_n


def _inputs(inputs, kw) -> SchemeNoiseInputs:
    if inputs is None:
        return SchemeNoiseInputs(**kw)
    if kw:
        raise TypeError("pass either a SchemeNoiseInputs or keyword values, not both")
    return inputs


def var_after_absorption(inputs: SchemeNoiseInputs | None = None, **kw) -> float:
    """Photon-number variance of a beam after a sample of absorption ``alpha``."""
    p = _inputs(inputs, kw)
    return ((1 - p.alpha) ** 2 * (p.fano - 1) + 1 - p.alpha) * p.mean_n


def delta_alpha_dr(inputs: SchemeNoiseInputs | None = None, **kw) -> float:
    """Absorption uncertainty of direct (single-beam) imaging."""
    p = _inputs(inputs, kw)
    return math.sqrt(((1 - p.alpha) ** 2 * (p.fano - 1) + 1 - p.alpha) / p.mean_n)


def fano_with_losses(f0: float, eta: float) -> float:
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    return eta * f0 + 1 - eta


def diff_variance(inputs: SchemeNoiseInputs | None = None, **kw) -> float:
    """Variance of the reference-minus-sample photon difference."""
    p = _inputs(inputs, kw)
    return (p.alpha ** 2 * (p.fano - 1) + p.alpha + 2 * p.nrf * (1 - p.alpha)) * p.mean_n


def delta_alpha_df(inputs: SchemeNoiseInputs | None = None, **kw) -> float:
    """Absorption uncertainty of differential imaging; ``nrf=1`` is the classical case."""
    p = _inputs(inputs, kw)
    return math.sqrt((p.alpha ** 2 * (p.fano - 1) + p.alpha + 2 * p.nrf * (1 - p.alpha)) / p.mean_n)


def enhancement_ratios(alpha: float, nrf: float) -> tuple[float, float]:
    """Noise ratios (ssn/dc, ssn/dr) of twin-beam imaging against the classical
    differential and the direct scheme. Each equals SNR_classical / SNR_ssn, so
    a value below one is a quantum advantage."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if nrf < 0:
        raise ValueError("nrf must be non-negative")
    num = alpha + 2 * nrf * (1 - alpha)
    return math.sqrt(num / (2 - alpha)), math.sqrt(num / (1 - alpha))


def mode_counts(geometry: ModeGeometry) -> tuple[float, float, float]:
    """(M_u, M_c, M_b): uncorrelated, correlated and border modes in an L x L detector."""
    g = geometry
    area = math.pi * g.r ** 2
    m_u = 2 * g.L * g.delta / area
    m_c = ((g.L - 2 * g.r) ** 2 - 2 * g.L * g.delta) / area
    m_b = 2 * g.L / g.r
    if m_c < 0:
        warnings.warn(f"correlated mode count {m_c:.4g} < 0 clamped to 0", stacklevel=2)
        m_c = 0.0
    return m_u, m_c, m_b


def eta_coll_xd(X, D, beta: float = 0.5, mu: float = 0.0):
    """Unclamped collection efficiency in the dimensionless X = L/2r, D = delta/2r."""
    X = np.asarray(X, dtype=float)
    num = X * (math.pi * beta ** 2 - 2 * D * (mu + 1) - 2) + X ** 2 + 1
    den = X ** 2 + (math.pi * beta - 2) * X + 1
    out = num / den
    return float(out) if out.ndim == 0 else out


def eta_coll(geometry: ModeGeometry) -> float:
    """Collection efficiency of correlated photons, clamped to [0, 1]."""
    e = eta_coll_xd(geometry.X, geometry.D, geometry.beta, geometry.mu)
    if not 0.0 <= e <= 1.0:
        warnings.warn(f"collection efficiency {e:.4g} outside [0, 1] clamped", stacklevel=2)
        e = min(max(e, 0.0), 1.0)
    return e


def eta_coll_from_modes(geometry: ModeGeometry) -> float:
    """Collection efficiency evaluated from the raw mode counts, no clamping."""
    g = geometry
    area = math.pi * g.r ** 2
    m_u = 2 * g.L * g.delta / area
    m_c = ((g.L - 2 * g.r) ** 2 - 2 * g.L * g.delta) / area
    m_b = 2 * g.L / g.r
    return (g.beta ** 2 * m_b + m_c - g.mu * m_u) / (g.beta * m_b + m_c + m_u)


def mode_count_consistency(geometry: ModeGeometry, tol: float = 1e-12) -> bool:
    a = eta_coll_from_modes(geometry)
    b = eta_coll_xd(geometry.X, geometry.D, geometry.beta, geometry.mu)
    return abs(a - b) <= tol


def sigma_model(geometry: ModeGeometry) -> float:
    """NRF of a detector pair with finite size, misalignment and channel imbalance."""
    return (geometry.gamma + 1) / 2 - geometry.eta0 * eta_coll(geometry)


def sigma_eff(sigma: float, budget: NoiseBudget) -> float:
    """NRF inflated by stray light and read noise."""
    return sigma * budget.f_twb + budget.f_noise


def coherence_radius(optics: OpticsConstants, plane: str = "detection") -> float:
    """Coherence radius from the pump waist, r = lambda f / (2 pi w_p).

    The far-field lens puts the correlations in its focal (object) plane; the
    detection-plane value is that times the magnification.
    """
    if not optics.pump_waist_um > 0:
        raise ValueError("pump waist must be positive")
    lam_um = optics.degenerate_wavelength_nm * 1e-3
    r_obj = lam_um * optics.focal_length_um / (math.pi * optics.pump_waist_um) / 2
    if plane == "object":
        return r_obj
    if plane == "detection":
        return r_obj * optics.magnification
    raise ValueError(f"plane must be 'object' or 'detection', got {plane!r}")


def pump_waist_for_radius(r_object_um: float, optics: OpticsConstants) -> float:
    """Inverse of :func:`coherence_radius` for an object-plane radius."""
    if not r_object_um > 0:
        raise ValueError("radius must be positive")
    lam_um = optics.degenerate_wavelength_nm * 1e-3
    return lam_um * optics.focal_length_um / (math.pi * 2 * r_object_um)


def _box_gauss_overlap(sigma, shift):
    """P(partner lands in the mirrored cell) along one axis, lengths in cell units.

    The source is uniform over a unit cell; the partner is displaced by a
    Gaussian of std ``sigma`` plus ``shift``. The result is the second
    difference of the antiderivative of the Gaussian CDF.
    """
    def G(t):
        if sigma == 0:
            return np.maximum(t, 0.0)
        z = t / sigma
        return t * ndtr(z) + sigma * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    return G(1 - shift) - 2 * G(-shift) + G(-1 - shift)


def gaussian_collection(L: float, r: float, delta: float = 0.0, r_y: float | None = None,
                        delta_y: float = 0.0) -> float:
    """Exact collection efficiency for Gaussian pair jitter of FWHM 2r.

    This is the quantity the Monte Carlo generator realises: for an L x L
    detector with uniform illumination the NRF of perfectly efficient pairs is
    one minus this value. It is not the mode-counting model above, which is a
    coarser approximation.
    """
    ry = r if r_y is None else r_y
    sx = 2 * r / FWHM_PER_SIGMA / L
    sy = 2 * ry / FWHM_PER_SIGMA / L
    return float(_box_gauss_overlap(sx, delta / L) * _box_gauss_overlap(sy, delta_y / L))
