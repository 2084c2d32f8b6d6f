"""Frame value types and the TBF1 binary frame format.

All lengths are detection-plane micrometres unless a name says otherwise.
Object-plane values are derived by dividing by the imaging magnification.
"""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

MAGIC = b"TBF1"
HEADER = struct.Struct("<4sBIId")  # magic, dtype code, width, height, pitch
DTYPE_COUNTS = 0
DTYPE_REAL = 1
_CODE_TO_DTYPE = {DTYPE_COUNTS: np.dtype("<u4"), DTYPE_REAL: np.dtype("<f8")}

DEFAULT_PITCH_UM = 39.0
DEFAULT_MAGNIFICATION = 7.8


class FrameFormatError(ValueError):
    """Raised when a TBF1 stream or a stack manifest cannot be decoded."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PhotonFrame:
    """One detector frame: raw counts (uint32) or a processed real-valued map."""

    data: np.ndarray
    pitch: float = DEFAULT_PITCH_UM

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim != 2:
            raise ValueError(f"frame data must be 2-D, got shape {a.shape}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")
        if a.dtype.kind in "iu":
            if a.size and a.min() < 0:
                raise ValueError("raw-count frames must be non-negative")
            a = a.astype(np.uint32)
        else:
            a = a.astype(np.float64)
        object.__setattr__(self, "data", _frozen(a))
        object.__setattr__(self, "pitch", float(self.pitch))

    @classmethod
    def from_flat(cls, values: Sequence, width: int, height: int,
                  pitch: float = DEFAULT_PITCH_UM, real: bool | None = None) -> "PhotonFrame":
        a = np.asarray(values)
        if a.size != width * height:
            raise ValueError(f"data length {a.size} != width*height = {width}*{height}")
        if real is not None:
            a = a.astype(np.float64 if real else np.uint32)
        return cls(a.reshape(height, width), pitch)

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def is_counts(self) -> bool:
        return self.data.dtype == np.uint32

    @property
    def dtype_code(self) -> int:
        return DTYPE_COUNTS if self.is_counts else DTYPE_REAL

    def __eq__(self, other):
        if not isinstance(other, PhotonFrame):
            return NotImplemented
        return (self.pitch == other.pitch and self.data.dtype == other.data.dtype
                and self.data.shape == other.data.shape
                and self.data.tobytes() == other.data.tobytes())

    def __hash__(self):
        return hash((self.data.shape, self.pitch, self.data.tobytes()))


def write_frame(frame: PhotonFrame, sink: BinaryIO) -> int:
    """Write ``frame`` to a binary sink in TBF1 layout; returns bytes written."""
    payload = frame.data.astype(_CODE_TO_DTYPE[frame.dtype_code], copy=False).tobytes(order="C")
    header = HEADER.pack(MAGIC, frame.dtype_code, frame.width, frame.height, frame.pitch)
    n = sink.write(header)
    n += sink.write(payload)
    return n


def read_frame(source: BinaryIO) -> PhotonFrame:
    head = source.read(HEADER.size)
    if len(head) < 4 or head[:4] != MAGIC:
        raise FrameFormatError(f"bad magic {head[:4]!r}, expected {MAGIC!r}")
    if len(head) < HEADER.size:
        raise FrameFormatError("truncated header")
    _, code, width, height, pitch = HEADER.unpack(head)
    if code not in _CODE_TO_DTYPE:
        raise FrameFormatError(f"unknown dtype code {code}")
    dtype = _CODE_TO_DTYPE[code]
    need = width * height * dtype.itemsize
    payload = source.read(need)
    if len(payload) != need:
        raise FrameFormatError(
            f"truncated payload: header claims {width}x{height} "
            f"({width * height} values), found {len(payload) // dtype.itemsize}")
    data = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return PhotonFrame(data, pitch)


def frame_to_bytes(frame: PhotonFrame) -> bytes:
    buf = io.BytesIO()
    write_frame(frame, buf)
    return buf.getvalue()


def frame_from_bytes(blob: bytes) -> PhotonFrame:
    return read_frame(io.BytesIO(blob))


def save_frame(frame: PhotonFrame, path) -> int:
    with open(path, "wb") as fh:
        return write_frame(frame, fh)


def load_frame(path) -> PhotonFrame:
    with open(path, "rb") as fh:
        return read_frame(fh)


def _fmt(v) -> str:
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    return str(int(v))


def to_csv(frame) -> str:
    """Rows of comma-separated values, one line per frame row.

    Reals use the shortest repr that round-trips, so no precision is lost.
    """
    a = frame.data if isinstance(frame, PhotonFrame) else np.asarray(frame)
    if a.ndim == 1:
        a = a[None, :]
    if a.size == 0:
        return ""
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in a)


@dataclass(frozen=True)
class Region:
    """Square pixel region: ``origin`` is (row, col) of its upper-left pixel."""

    origin: tuple[int, int]
    size: int

    def __post_init__(self):
        object.__setattr__(self, "origin", (int(self.origin[0]), int(self.origin[1])))
        if self.size < 1:
            raise ValueError("region size must be >= 1")

    def fits(self, shape: tuple[int, int]) -> bool:
        r, c = self.origin
        return r >= 0 and c >= 0 and r + self.size <= shape[0] and c + self.size <= shape[1]

    def slices(self) -> tuple[slice, slice]:
        r, c = self.origin
        return slice(r, r + self.size), slice(c, c + self.size)


@dataclass(frozen=True)
class RegionPair:
    """Two equal square regions, one per beam, point-symmetric about ``symmetry_center``.

    Both frames are indexed in a shared (row, col) system: pixel ``x`` of
    region A pairs with pixel ``2c - x`` of region B, with ``2c`` rounded to
    the nearest integer.
    """

    origin_a: tuple[int, int]
    origin_b: tuple[int, int]
    size: int
    symmetry_center: tuple[float, float]

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("region size must be >= 1")
        object.__setattr__(self, "origin_a", (int(self.origin_a[0]), int(self.origin_a[1])))
        object.__setattr__(self, "origin_b", (int(self.origin_b[0]), int(self.origin_b[1])))
        expect = self._partner_origin(self.origin_a, self.size, self.symmetry_center)
        if expect != self.origin_b:
            raise ValueError(f"region B origin {self.origin_b} is not the mirror of A "
                             f"about {self.symmetry_center} (expected {expect})")

    @staticmethod
    def _partner_origin(origin, size, center):
        twice = [int(np.floor(2 * c + 0.5)) for c in center]
        return (twice[0] - origin[0] - (size - 1), twice[1] - origin[1] - (size - 1))

    @classmethod
    def symmetric(cls, origin_a, size: int, center) -> "RegionPair":
        return cls(tuple(origin_a), cls._partner_origin(origin_a, size, center), size,
                   (float(center[0]), float(center[1])))

    @classmethod
    def whole_frame(cls, shape: tuple[int, int]) -> "RegionPair":
        """Largest centred square pair for frames of ``shape`` mirrored end to end."""
        h, w = shape
        s = min(h, w)
        origin = ((h - s) // 2, (w - s) // 2)
        return cls.symmetric(origin, s, ((h - 1) / 2, (w - 1) / 2))

    @property
    def region_a(self) -> Region:
        return Region(self.origin_a, self.size)

    @property
    def region_b(self) -> Region:
        return Region(self.origin_b, self.size)

    def swapped(self) -> "RegionPair":
        return RegionPair(self.origin_b, self.origin_a, self.size, self.symmetry_center)

    def check(self, shape: tuple[int, int]) -> None:
        for name, reg in (("A", self.region_a), ("B", self.region_b)):
            if not reg.fits(shape):
                raise ValueError(f"region {name} at {reg.origin} size {reg.size} "
                                 f"does not fit frame of shape {shape}")

    def extract(self, beam1: np.ndarray, beam2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cut A from ``beam1`` and B from ``beam2``; B is returned mirrored so
        that element ``[..., i, j]`` of both outputs is a correlated pair.

        Works on single frames and on (shots, rows, cols) stacks.
        """
        self.check(beam1.shape[-2:])
        self.check(beam2.shape[-2:])
        a = beam1[(..., *self.region_a.slices())]
        b = beam2[(..., *self.region_b.slices())][..., ::-1, ::-1]
        return a, b


@dataclass(frozen=True)
class OpticsConstants:
    magnification: float = DEFAULT_MAGNIFICATION
    pump_wavelength_nm: float = 405.0
    degenerate_wavelength_nm: float = 810.0
    focal_length_um: float = 1.0e4
    pump_waist_um: float = 460.4

    def __post_init__(self):
        for name in ("magnification", "pump_wavelength_nm", "degenerate_wavelength_nm",
                     "focal_length_um", "pump_waist_um"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def to_object_plane(self, length_um):
        return length_um / self.magnification

    def to_detection_plane(self, length_um):
        return length_um * self.magnification


@dataclass(frozen=True, eq=False)
class FramePairStack:
    """N registered (beam-1, beam-2) shots held as two (N, rows, cols) arrays."""

    beam1: np.ndarray
    beam2: np.ndarray
    pitch: float = DEFAULT_PITCH_UM
    exposure: float = 0.1
    labels: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        b1, b2 = np.asarray(self.beam1), np.asarray(self.beam2)
        if b1.ndim != 3 or b1.shape != b2.shape:
            raise ValueError(f"beam stacks must share a (shots, rows, cols) shape, "
                             f"got {b1.shape} and {b2.shape}")
        if b1.shape[0] < 1:
            raise ValueError("a stack needs at least one shot")
        if not self.pitch > 0:
            raise ValueError("pitch must be positive")
        labels = tuple(bool(x) for x in self.labels) or (False,) * b1.shape[0]
        if len(labels) != b1.shape[0]:
            raise ValueError("one with-sample label per shot is required")
        conv = (lambda a: a.astype(np.uint32)) if b1.dtype.kind in "iu" else (lambda a: a.astype(np.float64))
        object.__setattr__(self, "beam1", _frozen(conv(b1)))
        object.__setattr__(self, "beam2", _frozen(conv(b2)))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "pitch", float(self.pitch))

    @property
    def n_shots(self) -> int:
        return self.beam1.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.beam1.shape[1:]

    def pair(self, n: int) -> tuple[PhotonFrame, PhotonFrame]:
        return PhotonFrame(self.beam1[n], self.pitch), PhotonFrame(self.beam2[n], self.pitch)

    @property
    def shots(self) -> list[tuple[PhotonFrame, PhotonFrame]]:
        return [self.pair(n) for n in range(self.n_shots)]

    def select(self, index) -> "FramePairStack":
        idx = np.arange(self.n_shots)[index]
        return FramePairStack(self.beam1[idx], self.beam2[idx], self.pitch, self.exposure,
                              tuple(self.labels[i] for i in idx))

    def with_sample(self, flag: bool = True) -> "FramePairStack":
        idx = [i for i, lab in enumerate(self.labels) if lab == flag]
        if not idx:
            raise ValueError(f"stack has no shots with with_sample={flag}")
        return self.select(idx)

    def __eq__(self, other):
        if not isinstance(other, FramePairStack):
            return NotImplemented
        return (self.pitch == other.pitch and self.exposure == other.exposure
                and self.labels == other.labels and self.beam1.dtype == other.beam1.dtype
                and self.beam1.shape == other.beam1.shape
                and self.beam1.tobytes() == other.beam1.tobytes()
                and self.beam2.tobytes() == other.beam2.tobytes())

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[PhotonFrame, PhotonFrame]], exposure: float = 0.1,
                   labels: Sequence[bool] = ()) -> "FramePairStack":
        pairs = list(pairs)
        if not pairs:
            raise ValueError("a stack needs at least one shot")
        ref = pairs[0][0]
        for f1, f2 in pairs:
            for f in (f1, f2):
                if f.data.shape != ref.data.shape or f.pitch != ref.pitch:
                    raise ValueError("all frames in a stack must share width/height/pitch")
        return cls(np.stack([p[0].data for p in pairs]), np.stack([p[1].data for p in pairs]),
                   ref.pitch, exposure, tuple(labels))


MANIFEST = "manifest.txt"


def save_stack(stack: FramePairStack, directory) -> Path:
    """Write one TBF1 file per frame plus ``manifest.txt`` listing shot order and labels."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = ["# twin-beam frame-pair stack",
             f"shots = {stack.n_shots}",
             f"exposure = {stack.exposure!r}",
             "# index,with_sample,beam1_file,beam2_file"]
    for n in range(stack.n_shots):
        f1, f2 = stack.pair(n)
        names = (f"shot{n:05d}_beam1.tbf", f"shot{n:05d}_beam2.tbf")
        save_frame(f1, d / names[0])
        save_frame(f2, d / names[1])
        lines.append(f"{n},{int(stack.labels[n])},{names[0]},{names[1]}")
    (d / MANIFEST).write_text("\n".join(lines) + "\n")
    return d / MANIFEST


def load_stack(directory) -> FramePairStack:
    d = Path(directory)
    path = d / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no stack manifest at {path}")
    exposure, declared, rows = 0.1, None, []
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "shots":
                declared = int(val)
            elif key == "exposure":
                exposure = float(val)
            else:
                raise FrameFormatError(f"{path}:{lineno}: unknown manifest key {key!r}")
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise FrameFormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
        rows.append((int(parts[0]), bool(int(parts[1])), parts[2], parts[3]))
    if declared is not None and declared != len(rows):
        raise FrameFormatError(f"{path}: manifest declares {declared} shots, lists {len(rows)}")
    rows.sort(key=lambda r: r[0])
    pairs = [(load_frame(d / f1), load_frame(d / f2)) for _, _, f1, f2 in rows]
    return FramePairStack.from_pairs(pairs, exposure, [r[1] for r in rows])


def write_pgm(values: np.ndarray, path, vmin: float | None = None, vmax: float | None = None) -> tuple[float, float]:
    """Render a real map as an 8-bit binary graymap (P5).

    ``[vmin, vmax]`` maps linearly onto ``[0, 255]``; the mapping is written to
    a sidecar ``<path>.txt`` so the grey levels can be turned back into values.
    """
    a = np.asarray(values, dtype=np.float64)
    lo = float(np.nanmin(a)) if vmin is None else float(vmin)
    hi = float(np.nanmax(a)) if vmax is None else float(vmax)
    span = hi - lo if hi > lo else 1.0
    grey = np.clip(np.rint((a - lo) / span * 255.0), 0, 255)
    grey = np.nan_to_num(grey, nan=0.0).astype(np.uint8)
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        fh.write(grey.tobytes())
    Path(str(path) + ".txt").write_text(
        f"mapping = linear\nvalue_min = {lo!r}\nvalue_max = {hi!r}\n"
        f"grey_min = 0\ngrey_max = 255\n")
    return lo, hi


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P5":
        raise FrameFormatError(f"{path}: not a binary PGM")
    w, h = (int(x) for x in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)
