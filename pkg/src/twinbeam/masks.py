"""Built-in absorption test objects."""
from __future__ import annotations

import numpy as np

from .sim import SampleMask


def phi_glyph(shape: tuple[int, int], pitch_obj: float, alpha: float = 0.01,
              width_um: float = 300.0, height_um: float = 400.0, stroke_um: float = 60.0,
              ring_um: float = 40.0) -> np.ndarray:
    """Binary "Phi" raster centred in a frame of ``shape`` pixels.

    ``pitch_obj`` is the object-plane pixel size. The glyph is a vertical stem
    spanning the full height plus an elliptical ring spanning the full width.
    A pixel is inside when its centre is.
    """
    h, w = shape
    y = (np.arange(h) + 0.5 - h / 2) * pitch_obj
    x = (np.arange(w) + 0.5 - w / 2) * pitch_obj
    yy, xx = np.meshgrid(y, x, indexing="ij")
    stem = (np.abs(xx) <= stroke_um / 2) & (np.abs(yy) <= height_um / 2)
    a, b = width_um / 2, 0.55 * height_um / 2
    outer = (xx / a) ** 2 + (yy / b) ** 2 <= 1
    inner = (xx / (a - ring_um)) ** 2 + (yy / (b - ring_um)) ** 2 < 1
    return np.where(stem | (outer & ~inner), float(alpha), 0.0)


def phi_mask(shape, pitch_obj: float, alpha: float = 0.01, **kw) -> SampleMask:
    return SampleMask(phi_glyph(shape, pitch_obj, alpha, **kw))


def phi_stripe(shape, pitch_obj: float, stroke_um: float = 60.0, height_um: float = 400.0,
               width_px: int = 4) -> tuple[int, int, int, int]:
    """(row, col, height, width) of a vertical stripe on the stem axis."""
    h, w = shape
    half_rows = int(np.floor(height_um / 2 / pitch_obj))
    half_cols = max(1, min(width_px, int(np.floor(stroke_um / pitch_obj))) // 2)
    rows = min(h, 2 * half_rows)
    return (h // 2 - rows // 2, w // 2 - half_cols, rows, 2 * half_cols)
