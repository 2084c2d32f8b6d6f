"""End-to-end runs: simulate the two stacks of an imaging session and reduce
them to the tables and maps the command line writes out.

All outputs are plain text or binary rasters with no timestamps, so a given
(config, seed) reproduces every byte.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import estimators, pipeline, theory
from .config import RunConfig
from .fit import NrfCurve, curve_to_csv
from .frames import (FramePairStack, PhotonFrame, RegionPair, load_stack, save_frame, save_stack,
                     to_csv, write_pgm)
from .sim import generate_pair_poisson

SAMPLE_DIR = "with_sample"
REFERENCE_DIR = "without_sample"


class DataError(ValueError):
    """Input stacks are missing, inconsistent or unusable."""


def simulate_session(cfg: RunConfig, workers: int | None = None) -> tuple[FramePairStack, FramePairStack]:
    """(with-sample, without-sample) stacks. The two use independent RNG streams."""
    params, geo = cfg.params(), cfg.geometry()
    sample = generate_pair_poisson(params, geo, cfg.shots, mask=cfg.sample_mask(),
                                   sample_beam=cfg.sample_beam, engine=cfg.engine, stream=1,
                                   exposure=cfg.exposure, workers=workers)
    if cfg.mask == "none":
        sample = FramePairStack(sample.beam1, sample.beam2, sample.pitch, sample.exposure, (True,) * sample.n_shots)
    reference = generate_pair_poisson(params, geo, cfg.shots, sample_beam=cfg.sample_beam,
                                      engine=cfg.engine, stream=0, exposure=cfg.exposure, workers=workers)
    return sample, reference


def write_session(cfg: RunConfig, out, workers: int | None = None) -> list[Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sample, reference = simulate_session(cfg, workers)
    files = [save_stack(sample, out / SAMPLE_DIR), save_stack(reference, out / REFERENCE_DIR)]
    (out / "config.txt").write_text(cfg.to_text())
    files.append(out / "config.txt")
    return files


def load_session(directory) -> tuple[FramePairStack, FramePairStack]:
    d = Path(directory)
    try:
        sample = load_stack(d / SAMPLE_DIR)
        reference = load_stack(d / REFERENCE_DIR)
    except (FileNotFoundError, ValueError) as exc:
        raise DataError(str(exc)) from None
    check_compatible(sample, reference)
    return sample, reference


def check_compatible(sample: FramePairStack, reference: FramePairStack) -> None:
    if sample.shape != reference.shape or sample.pitch != reference.pitch:
        raise DataError(f"stack geometry mismatch: with-sample {sample.shape} at {sample.pitch} um, "
                        f"without-sample {reference.shape} at {reference.pitch} um")
    if sample.n_shots < 2 or reference.n_shots < 2:
        raise DataError("each stack needs at least two shots")


def _regions(cfg: RunConfig, shape) -> RegionPair:
    if cfg.region:
        r, c, s = cfg.region
        pair = RegionPair.symmetric((r, c), s, ((shape[0] - 1) / 2, (shape[1] - 1) / 2))
        try:
            pair.check(shape)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        return pair
    return RegionPair.whole_frame(shape)


def _usable_scales(cfg: RunConfig, n: int) -> list[int]:
    good = [d for d in cfg.scales if n % d == 0 and n // d >= 2]
    skipped = sorted(set(cfg.scales) - set(good))
    if skipped:
        warnings.warn(f"scales {skipped} do not tile a {n}-pixel region; no NRF or Fano rows for them",
                      stacklevel=3)
    if not good:
        raise DataError(f"no requested scale tiles a {n}-pixel region")
    return good


def coarse_stripe(stripe, d: int, mode: str) -> tuple[int, int, int, int]:
    """The stripe box on the grid of a d-filtered map."""
    if mode == "sliding" or d == 1:
        return tuple(stripe)
    r0, c0, h, w = stripe
    r1, c1 = r0 // d, c0 // d
    return (r1, c1, max(1, (r0 + h) // d - r1), max(1, (c0 + w) // d - c1))


@dataclass
class SchemeMaps:
    scheme: str
    d: int
    shots: np.ndarray         # per-shot alpha maps, (shots, rows, cols)


def scheme_maps(sample: FramePairStack, flat: pipeline.FlatField, cfg: RunConfig, scheme: str, d: int) -> SchemeMaps:
    sb = cfg.sample_beam
    s = sample.beam1 if sb == 1 else sample.beam2
    r = sample.beam2 if sb == 1 else sample.beam1
    if scheme == "DR":
        m = pipeline.alpha_direct(s, flat, d, sb, cfg.mode)
    elif scheme == "SSN":
        m = pipeline.alpha_ssn(s, r, flat, d, sb, cfg.mode)
    else:
        m = pipeline.alpha_dc(s, r, flat, d, (0, cfg.dc_shift), 2 * cfg.coherence_radius / cfg.pitch, sb, cfg.mode)
    return SchemeMaps(scheme, d, m.values)


def _budget(mean_n: float, cfg: RunConfig) -> theory.NoiseBudget:
    return theory.NoiseBudget.from_fraction(mean_n, cfg.stray_fraction, cfg.read_noise)


def theory_sigma(L: float, cfg: RunConfig, budget: theory.NoiseBudget) -> tuple[float, float]:
    """(mode-model, Gaussian-collection) predictions of sigma_eff at detection-plane size L."""
    eta0 = 0.5 * (cfg.eta1 + cfg.eta2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        g = theory.ModeGeometry(L, cfg.coherence_radius, cfg.misalignment, mu=cfg.mu, eta0=eta0)
        model = theory.sigma_eff(theory.sigma_model(g), budget)
    coll = theory.gaussian_collection(L, cfg.coherence_radius, cfg.misalignment,
                                      cfg.coherence_radius_y, cfg.misalignment_y)
    gauss = theory.sigma_eff(1.0 - eta0 * coll, budget)
    return model, gauss


def _csv(rows) -> str:
    return "".join(",".join(v if isinstance(v, str) else repr(float(v)) if isinstance(v, (float, np.floating))
                            else str(v) for v in row) + "\n" for row in rows)


def _save_map(values: np.ndarray, stem: Path, pitch: float, vmin=None, vmax=None) -> list[Path]:
    save_frame(PhotonFrame(np.asarray(values, dtype=np.float64), pitch), stem.with_suffix(".tbf"))
    stem.with_suffix(".csv").write_text(to_csv(values))
    write_pgm(values, stem.with_suffix(".pgm"), vmin, vmax)
    return [stem.with_suffix(e) for e in (".tbf", ".csv", ".pgm")]


def analyze(cfg: RunConfig, sample: FramePairStack, reference: FramePairStack, out) -> list[Path]:
    """Reduce a session to CSV tables and raster maps under ``out``."""
    check_compatible(sample, reference)
    if sample.shape != (cfg.height, cfg.width):
        cfg = replace(cfg, height=sample.shape[0], width=sample.shape[1])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    m = cfg.magnification
    pitch = sample.pitch
    regions = _regions(cfg, sample.shape)
    scales = _usable_scales(cfg, regions.size)
    try:
        flat = pipeline.build_flat_field(reference)
    except ValueError as exc:
        raise DataError(str(exc)) from None

    mean_n = float(reference.beam1.mean(dtype=np.float64))
    budget = _budget(mean_n, cfg)

    # NRF and Fano against resolution, from the sample-free stack
    nrf_rows = [("d", "L_um_detection", "L_um_object", "sigma_eff", "stderr", "theory_model", "theory_gaussian")]
    fano_rows = [("d", "L_um_detection", "L_um_object", "fano_beam1", "stderr1", "fano_beam2", "stderr2")]
    nrf_by_d = {}
    L_list, s_list, e_list = [], [], []
    for d in scales:
        res = estimators.nrf_spatial(reference, regions, d)
        nrf_by_d[d] = res.mean
        tm, tg = theory_sigma(res.scale, cfg, budget)
        nrf_rows.append((d, res.scale, res.scale / m, res.mean, res.standard_error, tm, tg))
        f1 = estimators.fano(reference, regions.region_a, d, beam=1)
        f2 = estimators.fano(reference, regions.region_b, d, beam=2)
        fano_rows.append((d, f1.scale, f1.scale / m, f1.mean, f1.standard_error, f2.mean, f2.standard_error))
        L_list.append(res.scale)
        s_list.append(res.mean)
        e_list.append(max(res.standard_error, 1e-12))
    for name, rows in (("nrf_vs_L.csv", nrf_rows), ("fano_vs_L.csv", fano_rows)):
        (out / name).write_text(_csv(rows))
        files.append(out / name)
    curve = NrfCurve(np.array(L_list), np.array(s_list), np.array(e_list), budget.total_n, budget.stray_n,
                     budget.read_noise)
    (out / "nrf_curve.csv").write_text(curve_to_csv(curve))
    files.append(out / "nrf_curve.csv")

    # NRF map and spatial cross-correlation
    tile = cfg.nrf_tile
    if regions.size // tile >= 1:
        nmap = estimators.nrf_tiles(reference, regions, tile)
        files += _save_map(nmap, out / "nrf_map", pitch * tile)
    xc = estimators.xcorr_map(reference, regions, cfg.xcorr_max_shift)
    rows = [("dy", "dx", "coefficient")]
    for iy, dy in enumerate(xc.shifts_y):
        for ix, dx in enumerate(xc.shifts_x):
            rows.append((int(dy), int(dx), float(xc.coefficients[iy, ix])))
    (out / "xcorr.csv").write_text(_csv(rows))
    (out / "xcorr_fit.csv").write_text(_csv([
        ("quantity", "value", "stderr"),
        ("fwhm_x_um_detection", xc.fwhm_x, xc.fwhm_x_err),
        ("fwhm_y_um_detection", xc.fwhm_y, xc.fwhm_y_err),
        ("fwhm_x_um_object", xc.fwhm_x / m, xc.fwhm_x_err / m),
        ("fwhm_y_um_object", xc.fwhm_y / m, xc.fwhm_y_err / m),
        ("peak_dy_px", xc.peak[0], ""),
        ("peak_dx_px", xc.peak[1], ""),
        ("peak_value", xc.peak_value, "")]))
    files += [out / "xcorr.csv", out / "xcorr_fit.csv"]

    # absorption maps per scheme and scale, with stripe SNR
    stripe = cfg.stripe_box()
    snr_rows = [("d", "L_um_detection", "L_um_object", "nrf", "snr_dr", "snr_dc", "snr_ssn",
                 "ssn_over_dc", "ssn_over_dr", "theory_ssn_over_dc", "theory_ssn_over_dr")]
    # sliding filters keep the grid, so any scale works for the maps
    map_scales = list(cfg.scales) if cfg.mode == "sliding" else \
        [d for d in cfg.scales if sample.shape[0] % d == 0 and sample.shape[1] % d == 0]
    for d in map_scales:
        snr = {}
        for scheme in cfg.schemes:
            maps = scheme_maps(sample, flat, cfg, scheme, d)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                snr[scheme] = pipeline.snr_stripe(maps.shots, coarse_stripe(stripe, d, cfg.mode))
            files += _save_map(maps.shots[0], out / f"alpha_{scheme}_d{d}", pitch * (d if cfg.mode == "block" else 1))
            if scheme == "DR" and d == 1:
                files += _save_map(maps.shots.mean(axis=0), out / "alpha_DR_mean", pitch)
        nrf = nrf_by_d.get(d, math.nan)
        if math.isnan(nrf):
            t_dc = t_dr = math.nan
        else:
            t_dc, t_dr = theory.enhancement_ratios(cfg.mask_alpha, max(nrf, 0.0))
        get = lambda k: snr.get(k, math.nan)  # noqa: E731
        snr_rows.append((d, d * pitch, d * pitch / m, nrf, get("DR"), get("DC"), get("SSN"),
                         get("SSN") / get("DC"), get("SSN") / get("DR"), 1 / t_dc, 1 / t_dr))
    (out / "snr_vs_L.csv").write_text(_csv(snr_rows))
    files.append(out / "snr_vs_L.csv")
    return files


def read_table(path) -> dict[str, np.ndarray]:
    """Columns of a CSV written by :func:`analyze`, numeric where possible."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    head = lines[0].split(",")
    cols: dict[str, list] = {h: [] for h in head}
    for ln in lines[1:]:
        for h, v in zip(head, ln.split(",")):
            cols[h].append(v)
    out = {}
    for h, vals in cols.items():
        try:
            out[h] = np.array([float(v) if v else math.nan for v in vals])
        except ValueError:
            out[h] = np.array(vals)
    return out
