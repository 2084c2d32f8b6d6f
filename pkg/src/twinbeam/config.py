"""Flat ``key = value`` run configuration.

Defaults reproduce the microscope: 39 um pixels, magnification 7.8,
~10^3 photons per pixel, alpha = 1 %, 300 shots with and without sample.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .frames import DEFAULT_MAGNIFICATION, DEFAULT_PITCH_UM, load_frame
from .masks import phi_mask, phi_stripe
from .sim import Geometry, SampleMask, TwinBeamParams


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 2017
    shots: int = 300
    out: str = "run"
    engine: str = "auto"
    width: int = 100
    height: int = 100
    pitch: float = DEFAULT_PITCH_UM
    magnification: float = DEFAULT_MAGNIFICATION
    exposure: float = 0.1
    mean_photons: float = 1000.0
    coherence_radius: float = 2.64 * DEFAULT_MAGNIFICATION
    coherence_radius_y: float | None = None
    misalignment: float = 0.63                 # um, detection plane
    misalignment_y: float = 0.0
    eta1: float = 0.81
    eta2: float = 0.81
    mu: float = 0.0
    stray_fraction: float = 0.038
    read_noise: float = 4.9
    chromatic_shear: float = 0.0
    beam_offset: float = 0.0
    envelope_waist: float | None = None
    mask: str = "phi"
    mask_alpha: float = 0.01
    mask_width_um: float = 300.0
    mask_height_um: float = 400.0
    sample_beam: int = 1
    schemes: tuple[str, ...] = ("DR", "DC", "SSN")
    scales: tuple[int, ...] = (1, 2, 4, 5, 10)
    mode: str = "block"
    dc_shift: int = 20
    region: tuple[int, ...] = ()          # row, col, size of region A; empty = whole frame
    stripe: tuple[int, ...] = ()          # row, col, height, width; empty = Phi stem
    nrf_tile: int = 8
    xcorr_max_shift: int = 6
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.mode not in ("block", "sliding"):
            raise ConfigError("mode must be block or sliding")
        if self.sample_beam not in (1, 2):
            raise ConfigError("sample_beam must be 1 or 2")
        bad = [s for s in self.schemes if s not in ("DR", "DC", "SSN")]
        if bad:
            raise ConfigError(f"unknown scheme(s) {bad}")
        if not self.scales or min(self.scales) < 1:
            raise ConfigError("scales must be positive integers")
        if self.region and len(self.region) != 3:
            raise ConfigError("region needs row,col,size")
        if self.stripe and len(self.stripe) != 4:
            raise ConfigError("stripe needs row,col,height,width")
        if self.mask not in ("phi", "none"):
            p = self.resolve(self.mask)
            if not p.exists():
                raise ConfigError(f"mask file not found: {p}")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def pitch_object(self) -> float:
        return self.pitch / self.magnification

    def params(self) -> TwinBeamParams:
        return TwinBeamParams(
            mean_photons=self.mean_photons, coherence_radius=self.coherence_radius,
            coherence_radius_y=self.coherence_radius_y, misalignment=self.misalignment,
            misalignment_y=self.misalignment_y, eta1=self.eta1, eta2=self.eta2, mu=self.mu,
            stray_fraction=self.stray_fraction, read_noise=self.read_noise,
            chromatic_shear=self.chromatic_shear, beam_offset=self.beam_offset,
            envelope_waist=self.envelope_waist, seed=self.seed)

    def geometry(self) -> Geometry:
        return Geometry(self.width, self.height, self.pitch)

    def sample_mask(self) -> SampleMask | None:
        shape = (self.height, self.width)
        if self.mask == "none":
            return None
        if self.mask == "phi":
            return phi_mask(shape, self.pitch_object, self.mask_alpha,
                            width_um=self.mask_width_um, height_um=self.mask_height_um)
        frame = load_frame(self.resolve(self.mask))
        if frame.data.shape != shape:
            raise ConfigError(f"mask {self.mask} has shape {frame.data.shape}, frames are {shape}")
        return SampleMask(frame.data.astype(float))

    def stripe_box(self) -> tuple[int, int, int, int]:
        if self.stripe:
            return tuple(self.stripe)
        return phi_stripe((self.height, self.width), self.pitch_object, height_um=self.mask_height_um)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "base_dir":
                continue
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "base_dir"}


def _convert(name: str, text: str):
    default = RunConfig.__dataclass_fields__[name].default
    ann = _FIELDS[name].type
    if text.lower() in ("none", "") and "None" in str(ann):
        return None
    if name in ("schemes",):
        return tuple(s.strip().upper() for s in text.split(",") if s.strip())
    if isinstance(default, tuple):
        return _ints(text)
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float) or "float" in str(ann):
        return float(text)
    return text


def parse_config(text: str, base_dir=".", **overrides) -> RunConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, val)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(base_dir=str(base_dir), **values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, **overrides) -> RunConfig:
    if path is None:
        return parse_config("", **overrides)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), base_dir=p.parent, **overrides)


def with_overrides(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
