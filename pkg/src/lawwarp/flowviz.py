"""Colour-wheel rendering of displacement fields (Middlebury convention).

Hue encodes direction, saturation encodes magnitude relative to the largest
magnitude in the field; zero displacement is white.
"""

import numpy as np


def make_colorwheel() -> np.ndarray:
    """The 55-entry RY/YG/GC/CB/BM/MR wheel, ``(55, 3)`` floats in ``[0, 255]``."""
    segments = (("RY", 15), ("YG", 6), ("GC", 4), ("CB", 11), ("BM", 13), ("MR", 6))
    wheel = np.zeros((sum(n for _, n in segments), 3))
    col = 0
    for name, n in segments:
        ramp = np.floor(255 * np.arange(n) / n)
        sl = slice(col, col + n)
        if name == "RY":
            wheel[sl, 0], wheel[sl, 1] = 255, ramp
        elif name == "YG":
            wheel[sl, 0], wheel[sl, 1] = 255 - ramp, 255
        elif name == "GC":
            wheel[sl, 1], wheel[sl, 2] = 255, ramp
        elif name == "CB":
            wheel[sl, 1], wheel[sl, 2] = 255 - ramp, 255
        elif name == "BM":
            wheel[sl, 2], wheel[sl, 0] = 255, ramp
        else:
            wheel[sl, 2], wheel[sl, 0] = 255 - ramp, 255
        col += n
    return wheel


def flow_to_rgb(field, max_magnitude=None):
    """Render an ``(H, W, 2)`` field; returns ``(uint8 (H, W, 3), max magnitude used)``."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 3 or field.shape[-1] != 2:
        raise ValueError(f"field must be (H, W, 2), got {field.shape}")
    u, v = field[..., 0], field[..., 1]
    rad = np.hypot(u, v)
    if max_magnitude is None:
        max_magnitude = float(rad.max(initial=0.0))
    scale = max_magnitude if max_magnitude > 0 else 1.0
    rad = rad / scale
    wheel = make_colorwheel()
    ncols = len(wheel)
    angle = np.arctan2(-v, -u) / np.pi
    fk = (angle + 1) / 2 * (ncols - 1)
    k0 = np.floor(fk).astype(int)
    k1 = (k0 + 1) % ncols
    f = (fk - k0)[..., None]
    col = ((1 - f) * wheel[k0] + f * wheel[k1]) / 255.0
    r = rad[..., None]
    col = np.where(r <= 1, 1 - r * (1 - col), col * 0.75)
    return np.floor(255 * col + 0.5).astype(np.uint8), max_magnitude


def render_channels(fields, max_magnitude=None):
    """Render ``(C, H, W, 2)`` fields side by side with one shared normalization."""
    fields = np.asarray(fields, dtype=np.float64)
    if fields.ndim == 3:
        fields = fields[None]
    if fields.ndim != 4 or fields.shape[-1] != 2:
        raise ValueError(f"field tensor must have shape (C, H, W, 2) or (H, W, 2), got {fields.shape}")
    if max_magnitude is None:
        max_magnitude = float(np.hypot(fields[..., 0], fields[..., 1]).max(initial=0.0))
    tiles = [flow_to_rgb(f, max_magnitude)[0] for f in fields]
    return np.concatenate(tiles, axis=1), max_magnitude
