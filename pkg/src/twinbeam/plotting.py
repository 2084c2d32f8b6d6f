"""Matplotlib figures for an analysis directory. Rendered off-screen to PNG."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import read_table  # noqa: E402
from .frames import load_frame  # noqa: E402

_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_nrf_fano(directory, out=None) -> Path:
    d = Path(directory)
    nrf = read_table(d / "nrf_vs_L.csv")
    fano = read_table(d / "fano_vs_L.csv")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.errorbar(nrf["L_um_object"], nrf["sigma_eff"], nrf["stderr"], fmt="o", label="NRF (measured)")
    ax.plot(nrf["L_um_object"], nrf["theory_gaussian"], "-", label="NRF (Gaussian collection)")
    ax.plot(nrf["L_um_object"], nrf["theory_model"], "--", label="NRF (mode model)")
    ax.errorbar(fano["L_um_object"], fano["fano_beam1"], fano["stderr1"], fmt="s", label="Fano, beam 1")
    ax.axhline(1.0, color="grey", lw=0.8)
    ax.set_xlabel("resolution L (um, object plane)")
    ax.set_ylabel("noise factor")
    ax.set_ylim(0, 1.2)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(out or d / "nrf_fano_vs_L.png"))


def plot_snr(directory, out=None) -> Path:
    d = Path(directory)
    t = read_table(d / "snr_vs_L.csv")
    fig, ax = plt.subplots(figsize=(5.5, 4))
    L = t["L_um_object"]
    ax.plot(L, t["ssn_over_dc"], "o", label="SSN / DC")
    ax.plot(L, t["theory_ssn_over_dc"], "-", color="C0")
    ax.plot(L, t["ssn_over_dr"], "s", label="SSN / DR")
    ax.plot(L, t["theory_ssn_over_dr"], "-", color="C1")
    ax.axhline(1.0, color="grey", lw=0.8)
    ax.set_xlabel("resolution L (um, object plane)")
    ax.set_ylabel("SNR ratio")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, Path(out or d / "snr_vs_L.png"))


def plot_alpha_panels(directory, out=None) -> Path | None:
    """Grid of single-shot alpha maps: schemes down, scales across."""
    d = Path(directory)
    found = sorted(d.glob("alpha_*_d*.tbf"))
    if not found:
        return None
    schemes = [s for s in ("DR", "DC", "SSN") if any(p.name.startswith(f"alpha_{s}_") for p in found)]
    scales = sorted({int(p.stem.rsplit("_d", 1)[1]) for p in found})
    fig, axes = plt.subplots(len(schemes), len(scales), figsize=(2.2 * len(scales), 2.2 * len(schemes)),
                             squeeze=False)
    for i, s in enumerate(schemes):
        for j, k in enumerate(scales):
            ax = axes[i, j]
            ax.set_xticks([])
            ax.set_yticks([])
            p = d / f"alpha_{s}_d{k}.tbf"
            if p.exists():
                a = load_frame(p).data
                lim = max(float(np.percentile(np.abs(a), 99)), 1e-12)
                ax.imshow(a, cmap="gray_r", vmin=-lim, vmax=lim)
            if i == 0:
                ax.set_title(f"d = {k}", fontsize=9)
            if j == 0:
                ax.set_ylabel(s, fontsize=9)
    fig.tight_layout()
    return _save(fig, Path(out or d / "alpha_panels.png"))


def plot_map(path, out, label: str) -> Path:
    a = load_frame(path).data
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(a, cmap="viridis")
    fig.colorbar(im, ax=ax, label=label)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout()
    return _save(fig, Path(out))


def plot_xcorr(directory, out=None) -> Path:
    d = Path(directory)
    t = read_table(d / "xcorr.csv")
    ys, xs = np.unique(t["dy"]), np.unique(t["dx"])
    grid = t["coefficient"].reshape(ys.size, xs.size)
    fig, ax = plt.subplots(figsize=(4.5, 4))
    im = ax.imshow(grid, origin="lower", extent=(xs[0] - .5, xs[-1] + .5, ys[0] - .5, ys[-1] + .5), cmap="magma")
    fig.colorbar(im, ax=ax, label="correlation coefficient")
    ax.set_xlabel("dx (pixels)")
    ax.set_ylabel("dy (pixels)")
    fig.tight_layout()
    return _save(fig, Path(out or d / "xcorr.png"))


def render_all(directory) -> list[Path]:
    d = Path(directory)
    files = [plot_nrf_fano(d), plot_snr(d), plot_xcorr(d)]
    panels = plot_alpha_panels(d)
    if panels:
        files.append(panels)
    if (d / "nrf_map.tbf").exists():
        files.append(plot_map(d / "nrf_map.tbf", d / "nrf_map.png", "NRF"))
    if (d / "alpha_DR_mean.tbf").exists():
        files.append(plot_map(d / "alpha_DR_mean.tbf", d / "alpha_DR_mean.png", "mean alpha (DR)"))
    return files
