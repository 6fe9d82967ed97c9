"""Coarse-grid warping of multi-channel feature maps.

Feature maps are ``(C, H, W)`` float32 arrays.  Sample grids are ``(H, W, 2)``
arrays of normalized ``(x, y)`` source locations (aligned corners, so
``-1`` and ``1`` are the centres of the edge pixels), or ``(C, H, W, 2)`` when
every channel has its own grid.  Sampling is bilinear with edge replication.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._parallel import pmap
from .warp import WarpSpec, displacement_points

_SNAP = 1e-9


def as_feature_map(x, *, copy=False) -> np.ndarray:
    """Coerce to a finite float32 ``(C, H, W)`` array; 2-D input gains a channel axis."""
    a = np.array(x, dtype=np.float32, copy=copy) if copy else np.asarray(x, dtype=np.float32)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"feature map must be (C, H, W), got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 2 or a.shape[2] < 2:
        raise ValueError(f"feature map needs C >= 1 and H, W >= 2, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("feature map contains non-finite samples")
    return a


def make_identity_grid(h: int, w: int) -> np.ndarray:
    if h < 2 or w < 2:
        raise ValueError(f"grid needs h, w >= 2, got {h}x{w}")
    xs = -1.0 + 2.0 * np.arange(w) / (w - 1)
    ys = -1.0 + 2.0 * np.arange(h) / (h - 1)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


@dataclass(frozen=True)
class CoarseGridConfig:
    """Field resolution for a ``height x width`` map coarsened by ``downscale_factor``."""

    downscale_factor: int
    height: int
    width: int

    def __post_init__(self):
        if int(self.downscale_factor) != self.downscale_factor or self.downscale_factor < 1:
            raise ValueError(f"downscale_factor must be a positive integer, got {self.downscale_factor}")
        if self.height < 2 or self.width < 2:
            raise ValueError("map dims must be >= 2")
        if self.coarse_h < 2 or self.coarse_w < 2:
            raise ValueError(
                f"downscale_factor {self.downscale_factor} leaves a {self.coarse_h}x{self.coarse_w} grid; need >= 2x2")

    @property
    def coarse_h(self) -> int:
        return math.ceil(self.height / self.downscale_factor)

    @property
    def coarse_w(self) -> int:
        return math.ceil(self.width / self.downscale_factor)

    @classmethod
    def for_map(cls, fmap, downscale_factor: int = 1) -> "CoarseGridConfig":
        return cls(downscale_factor, fmap.shape[-2], fmap.shape[-1])


def _resolve_cfg(cfg, h, w) -> CoarseGridConfig:
    if isinstance(cfg, CoarseGridConfig):
        if (cfg.height, cfg.width) != (h, w):
            raise ValueError(f"grid config is for {cfg.height}x{cfg.width}, map is {h}x{w}")
        return cfg
    return CoarseGridConfig(int(cfg), h, w)


def compute_field_on_coarse_grid(spec: WarpSpec, cfg: CoarseGridConfig, threads=None) -> np.ndarray:
    """Displacements on the coarse identity grid; returns ``(C, coarse_h, coarse_w, 2)``."""
    pts = make_identity_grid(cfg.coarse_h, cfg.coarse_w).reshape(-1, 2)
    fields = pmap(lambda c: displacement_points(pts, spec.params[c]), range(spec.channels), threads)
    return np.stack(fields).reshape(spec.channels, cfg.coarse_h, cfg.coarse_w, 2)


def interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` aligned-corners linear interpolation weights."""
    if n_out < n_in:
        raise ValueError(f"cannot upscale {n_in} samples to {n_out}")
    if n_in == n_out:
        return np.eye(n_in)
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(pos).astype(int), n_in - 2)
    f = pos - i0
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    m[rows, i0] = 1.0 - f
    m[rows, i0 + 1] += f
    return m


def upscale_field(coarse, target_h: int, target_w: int) -> np.ndarray:
    """Bilinearly upscale a ``(..., h, w, 2)`` field to ``(..., target_h, target_w, 2)``."""
    coarse = np.asarray(coarse, dtype=np.float64)
    if coarse.ndim < 3 or coarse.shape[-1] != 2:
        raise ValueError(f"field must be (..., h, w, 2), got {coarse.shape}")
    h, w = coarse.shape[-3:-1]
    if target_h < h or target_w < w:
        raise ValueError(f"target {target_h}x{target_w} is smaller than the field {h}x{w}")
    if (h, w) == (target_h, target_w):
        return coarse.copy()
    return np.einsum("ai,...ijd,bj->...abd", interp_matrix(h, target_h), coarse,
                     interp_matrix(w, target_w), optimize=True)


def _to_pixel(coord, n):
    pix = (np.asarray(coord, dtype=np.float64) + 1.0) * (0.5 * (n - 1))
    r = np.rint(pix)
    # identity-grid coordinates round-trip with ~1e-16 error; snap them back
    return np.where(np.abs(pix - r) < _SNAP, r, pix)


def _cell(pix, n):
    clamped = np.clip(pix, 0.0, n - 1)
    i0 = np.minimum(np.floor(clamped).astype(np.intp), n - 2)
    return clamped, i0, clamped - i0


def _sample_channel(img: np.ndarray, px, py) -> np.ndarray:
    h, w = img.shape
    _, x0, fx = _cell(px, w)
    _, y0, fy = _cell(py, h)
    flat = img.reshape(-1)
    base = y0 * w + x0
    f00, f01 = flat[base], flat[base + 1]
    f10, f11 = flat[base + w], flat[base + w + 1]
    top = f00 + fx * (f01 - f00)
    bot = f10 + fx * (f11 - f10)
    return top + fy * (bot - top)


def _sample_pixels(fmap64: np.ndarray, px, py, threads=None) -> np.ndarray:
    """Sample ``(C, H, W)`` at pixel coordinates shaped ``(C, h, w)`` or ``(h, w)``."""
    c = fmap64.shape[0]
    px = np.broadcast_to(px, (c,) + np.shape(px)[-2:])
    py = np.broadcast_to(py, (c,) + np.shape(py)[-2:])
    return np.stack(pmap(lambda i: _sample_channel(fmap64[i], px[i], py[i]), range(c), threads))


def _grid_pixels(grid, h, w):
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim not in (3, 4) or grid.shape[-1] != 2:
        raise ValueError(f"sample grid must be (h, w, 2) or (C, h, w, 2), got {grid.shape}")
    if not np.all(np.isfinite(grid)):
        raise ValueError("sample grid contains non-finite coordinates")
    return _to_pixel(grid[..., 0], w), _to_pixel(grid[..., 1], h)


def sample_bilinear(fmap, grid, threads=None) -> np.ndarray:
    """Bilinear, border-clamped sampling; output takes the grid's spatial dims."""
    fmap = as_feature_map(fmap)
    grid = np.asarray(grid)
    if grid.ndim == 4 and grid.shape[0] != fmap.shape[0]:
        raise ValueError(f"{grid.shape[0]} grids for {fmap.shape[0]} channels")
    px, py = _grid_pixels(grid, *fmap.shape[1:])
    return _sample_pixels(fmap.astype(np.float64), px, py, threads).astype(np.float32)


def warp_pixels(field: np.ndarray, h: int, w: int):
    """Backward-map pixel coordinates for a full-resolution ``(C, h, w, 2)`` field."""
    cols = np.arange(w, dtype=np.float64)
    rows = np.arange(h, dtype=np.float64)[:, None]
    return cols + field[..., 0] * (0.5 * (w - 1)), rows + field[..., 1] * (0.5 * (h - 1))


def full_resolution_field(spec: WarpSpec, cfg: CoarseGridConfig, threads=None) -> np.ndarray:
    coarse = compute_field_on_coarse_grid(spec, cfg, threads)
    return upscale_field(coarse, cfg.height, cfg.width)


def warp_feature_map64(fmap, spec: WarpSpec, cfg, threads=None) -> np.ndarray:
    """:func:`warp_feature_map` without the final cast to float32."""
    fmap = as_feature_map(fmap)
    if spec.channels != fmap.shape[0]:
        raise ValueError(f"spec has {spec.channels} channels, map has {fmap.shape[0]}")
    cfg = _resolve_cfg(cfg, *fmap.shape[1:])
    field = full_resolution_field(spec, cfg, threads)
    px, py = warp_pixels(field, cfg.height, cfg.width)
    return _sample_pixels(fmap.astype(np.float64), px, py, threads)


def warp_feature_map(fmap, spec: WarpSpec, cfg, threads=None) -> np.ndarray:
    """Warp each channel by its own keypoint field, evaluated on the coarse grid.

    ``cfg`` is a :class:`CoarseGridConfig` or a plain downscale factor.
    """
    return warp_feature_map64(fmap, spec, cfg, threads).astype(np.float32)


def warp_with_field(fmap, field, threads=None) -> np.ndarray:
    """Warp by a dense ``(C, H, W, 2)`` (or shared ``(H, W, 2)``) normalized displacement field."""
    fmap = as_feature_map(fmap)
    c, h, w = fmap.shape
    field = np.asarray(field, dtype=np.float64)
    if field.shape[-3:] != (h, w, 2):
        raise ValueError(f"field shape {field.shape} does not match map {fmap.shape}")
    px, py = warp_pixels(field, h, w)
    return _sample_pixels(fmap.astype(np.float64), px, py, threads).astype(np.float32)
