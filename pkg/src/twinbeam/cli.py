"""Command line front end.

    twinbeam sim      --config run.cfg --out run/
    twinbeam analyze  run/ --out run/analysis
    twinbeam filter   map.tbf --scales 2,5,10 --mode sliding --out filtered/
    twinbeam fit      run/analysis/nrf_curve.csv
    twinbeam theory eval sigma_eff sigma=0.5 total_n=1000 stray_n=38 read_noise=4.9
    twinbeam report   run/analysis

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import inspect
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import theory
from .analysis import DataError, analyze, load_session, write_session
from .config import ConfigError, RunConfig, load_config, with_overrides
from .fit import FitError, fit_csv, fit_nrf_curve, fit_report, read_curve_csv
from .frames import FrameFormatError, OpticsConstants, PhotonFrame, load_frame, save_frame, to_csv, write_pgm
from .pipeline import qe_filter

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _scales(text: str) -> tuple[int, ...]:
    try:
        vals = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"scales must be comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("scales must be positive integers")
    return vals


def _schemes(text: str) -> tuple[str, ...]:
    return ("DR", "DC", "SSN") if text == "all" else (text.upper(),)


def _config(args) -> RunConfig:
    path = args.config
    if path is None and getattr(args, "session", None):
        candidate = Path(args.session) / "config.txt"
        path = candidate if candidate.exists() else None
    cfg = load_config(path)
    return with_overrides(cfg, seed=getattr(args, "seed", None), shots=getattr(args, "shots", None),
                          scales=getattr(args, "scales", None), mode=getattr(args, "mode", None),
                          schemes=_schemes(args.scheme) if getattr(args, "scheme", None) else None)


# ---------------------------------------------------------------- subcommands

def cmd_sim(args) -> int:
    cfg = _config(args)
    out = Path(args.out or cfg.out)
    files = write_session(cfg, out)
    print(f"wrote {cfg.shots} + {cfg.shots} frame pairs under {out}")
    for f in files:
        print(f"  {f}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args)
    sample, reference = load_session(args.session)
    out = Path(args.out or Path(args.session) / "analysis")
    files = analyze(cfg, sample, reference, out)
    print(f"wrote {len(files)} files under {out}")
    return EXIT_OK


def cmd_filter(args) -> int:
    src = Path(args.input)
    try:
        frame = load_frame(src)
    except OSError as exc:
        raise DataError(f"cannot read {src}: {exc}") from None
    out = Path(args.out or src.parent)
    out.mkdir(parents=True, exist_ok=True)
    values = frame.data.astype(np.float64)
    for d in args.scales or (1,):
        try:
            a = qe_filter(values, d, args.mode or "block")
        except ValueError as exc:
            raise DataError(str(exc)) from None
        pitch = frame.pitch * (d if (args.mode or "block") == "block" else 1)
        stem = out / f"{src.stem}_d{d}"
        save_frame(PhotonFrame(a, pitch), stem.with_suffix(".tbf"))
        stem.with_suffix(".csv").write_text(to_csv(a))
        write_pgm(a, stem.with_suffix(".pgm"))
        print(f"{stem}.tbf  {a.shape[1]}x{a.shape[0]}  mean {a.mean():.6g}")
    return EXIT_OK


def cmd_fit(args) -> int:
    path = Path(args.curve)
    if not path.exists():
        raise DataError(f"curve file not found: {path}")
    budget = {k: v for k, v in (("total_n", args.total_n), ("stray_n", args.stray_n),
                                ("read_noise", args.read_noise)) if v is not None}
    try:
        curve = read_curve_csv(path.read_text(), **budget)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    result = fit_nrf_curve(curve, beta=args.beta, mu=args.mu, gamma=args.gamma)
    report = fit_report(result, args.magnification)
    sys.stdout.write(report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "fit_report.txt").write_text(report)
        (out / "fit.csv").write_text(fit_csv(result, args.magnification))
    return EXIT_OK


def _geometry(**kw):
    return theory.ModeGeometry(**kw)


def _budget(total_n, stray_n=0.0, read_noise=0.0):
    return theory.NoiseBudget(total_n, stray_n, read_noise)


FORMULAS = {
    "var_after_absorption": theory.var_after_absorption,
    "delta_alpha_dr": theory.delta_alpha_dr,
    "diff_variance": theory.diff_variance,
    "delta_alpha_df": theory.delta_alpha_df,
    "fano_with_losses": theory.fano_with_losses,
    "enhancement_ratios": theory.enhancement_ratios,
    "eta_coll_xd": theory.eta_coll_xd,
    "gaussian_collection": theory.gaussian_collection,
    "mode_counts": lambda **kw: theory.mode_counts(_geometry(**kw)),
    "eta_coll": lambda **kw: theory.eta_coll(_geometry(**kw)),
    "eta_coll_from_modes": lambda **kw: theory.eta_coll_from_modes(_geometry(**kw)),
    "sigma_model": lambda **kw: theory.sigma_model(_geometry(**kw)),
    "sigma_eff": lambda sigma, **kw: theory.sigma_eff(sigma, _budget(**kw)),
    "coherence_radius": lambda plane="detection", **kw: theory.coherence_radius(OpticsConstants(**kw), plane),
    "pump_waist_for_radius": lambda r_object_um, **kw: theory.pump_waist_for_radius(r_object_um,
                                                                                    OpticsConstants(**kw)),
}

FORMULA_PARAMS = {
    "mode_counts": "L r [delta beta mu gamma eta0]",
    "eta_coll": "L r [delta beta mu gamma eta0]",
    "eta_coll_from_modes": "L r [delta beta mu gamma eta0]",
    "sigma_model": "L r [delta beta mu gamma eta0]",
    "sigma_eff": "sigma total_n [stray_n read_noise]",
    "coherence_radius": "[plane magnification pump_waist_um focal_length_um degenerate_wavelength_nm]",
    "pump_waist_for_radius": "r_object_um [optics fields]",
}


def _formula_help() -> str:
    lines = []
    for name, fn in FORMULAS.items():
        if name in FORMULA_PARAMS:
            sig = FORMULA_PARAMS[name]
        elif name in ("var_after_absorption", "delta_alpha_dr", "diff_variance", "delta_alpha_df"):
            sig = "[alpha mean_n fano nrf]"
        else:
            sig = " ".join(inspect.signature(fn).parameters)
        lines.append(f"  {name}: {sig}")
    return "\n".join(lines)


def cmd_theory(args) -> int:
    if args.action != "eval":
        raise ConfigError(f"unknown theory action {args.action!r}; use 'eval'")
    if args.formula not in FORMULAS:
        raise ConfigError(f"unknown formula {args.formula!r}; known:\n{_formula_help()}")
    kw = {}
    for item in args.params:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"parameter {item!r} is not key=value")
        try:
            kw[key] = float(val)
        except ValueError:
            kw[key] = val
    try:
        value = FORMULAS[args.formula](**kw)
    except TypeError as exc:
        raise ConfigError(f"{args.formula}: {exc}") from None
    if isinstance(value, tuple):
        for i, v in enumerate(value):
            print(f"{args.formula}[{i}] = {float(v)!r}")
    else:
        print(f"{args.formula} = {float(value)!r}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .plotting import render_all

    d = Path(args.analysis)
    if not (d / "nrf_vs_L.csv").exists():
        raise DataError(f"{d} does not hold analysis tables (run 'twinbeam analyze' first)")
    files = render_all(d)
    lines = []
    curve_path = d / "nrf_curve.csv"
    try:
        curve = read_curve_csv(curve_path.read_text())
        if curve.L.size >= 4:
            res = fit_nrf_curve(curve)
            lines.append(fit_report(res, args.magnification))
    except (FitError, ValueError) as exc:
        lines.append(f"# NRF curve fit\nfailed = {exc}\n")
    for name in ("nrf_vs_L.csv", "fano_vs_L.csv", "snr_vs_L.csv", "xcorr_fit.csv"):
        p = d / name
        if p.exists():
            lines.append(f"# {name}\n{p.read_text()}")
    (d / "report.txt").write_text("\n".join(lines))
    files.append(d / "report.txt")
    for f in files:
        print(f)
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twinbeam", description=__doc__.split("\n")[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="Exit codes: 0 success, 2 configuration, 3 data, 4 numerical failure.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, shots=True):
        sp.add_argument("--config", metavar="PATH", help="flat 'key = value' run configuration")
        if seed:
            sp.add_argument("--seed", type=int, metavar="U64", help="master RNG seed")
        if shots:
            sp.add_argument("--shots", type=int, metavar="N", help="frame pairs per stack")
        sp.add_argument("--out", metavar="DIR", help="output directory")

    def imaging(sp):
        sp.add_argument("--scales", type=_scales, metavar="d1,d2,...", help="filter scales d")
        sp.add_argument("--scheme", choices=("dr", "dc", "ssn", "all"), help="imaging schemes to evaluate")
        sp.add_argument("--mode", choices=("block", "sliding"),
                        help="d x d neighbourhood filter layout (the 'median filter' of the imaging "
                             "literature; it replaces pixels by the neighbourhood mean)")

    sp = sub.add_parser("sim", help="simulate with-sample and without-sample stacks")
    common(sp)
    sp.set_defaults(func=cmd_sim)

    sp = sub.add_parser("analyze", help="reduce a simulated or recorded session to tables and maps")
    sp.add_argument("session", metavar="DIR", help="directory holding with_sample/ and without_sample/")
    common(sp, seed=False, shots=False)
    imaging(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("filter", help="apply the d x d mean ('median') filter to a TBF1 map")
    sp.add_argument("input", metavar="FRAME", help="TBF1 frame or alpha map")
    sp.add_argument("--out", metavar="DIR", help="output directory (default: next to input)")
    sp.add_argument("--scales", type=_scales, metavar="d1,d2,...", help="filter scales d")
    sp.add_argument("--mode", choices=("block", "sliding"),
                    help="non-overlapping blocks or a centred sliding window (a mean, despite the name)")
    sp.set_defaults(func=cmd_filter)

    sp = sub.add_parser("fit", help="fit efficiency, coherence radius and misalignment to an NRF curve")
    sp.add_argument("curve", metavar="CSV", help="L_um,sigma_eff,stderr table")
    sp.add_argument("--out", metavar="DIR", help="also write fit_report.txt and fit.csv here")
    sp.add_argument("--total-n", type=float, help="photons per pixel (overrides the file)")
    sp.add_argument("--stray-n", type=float, help="stray counts per pixel (overrides the file)")
    sp.add_argument("--read-noise", type=float, help="read noise, electrons rms (overrides the file)")
    sp.add_argument("--beta", type=float, default=0.5, help="border-mode collection weight (default 0.5)")
    sp.add_argument("--mu", type=float, default=0.0, help="mean photons per mode (default 0)")
    sp.add_argument("--gamma", type=float, default=1.0, help="beam efficiency ratio (default 1)")
    sp.add_argument("--magnification", type=float, default=7.8,
                    help="object-to-detector magnification for reporting (default 7.8)")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("theory", help="evaluate a closed-form noise formula",
                        formatter_class=argparse.RawDescriptionHelpFormatter,
                        epilog="formulas:\n" + _formula_help())
    sp.add_argument("action", choices=("eval",))
    sp.add_argument("formula", metavar="NAME")
    sp.add_argument("params", nargs="*", metavar="key=value")
    sp.set_defaults(func=cmd_theory)

    sp = sub.add_parser("report", help="render figures and a text summary of an analysis directory")
    sp.add_argument("analysis", metavar="DIR")
    sp.add_argument("--magnification", type=float, default=7.8)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FrameFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FitError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
