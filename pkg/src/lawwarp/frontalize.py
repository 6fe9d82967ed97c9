"""Similarity alignment of landmarks, pose restoration and soft-mask blending.

Landmarks and transforms live in pixel coordinates, ``x`` along columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .grid import _sample_pixels, as_feature_map


class DegenerateInputError(ValueError):
    """Landmarks without spatial extent cannot determine a similarity."""


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> s R(theta) p + t``."""

    s: float = 1.0
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.s, self.theta, self.tx, self.ty)):
            raise ValueError("similarity parameters must be finite")
        if self.s <= 0:
            raise ValueError(f"scale must be positive, got {self.s}")

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])

    @property
    def t(self) -> np.ndarray:
        return np.array([self.tx, self.ty])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(3)
        m[:2, :2] = self.s * self.rotation
        m[:2, 2] = self.t
        return m

    def apply_points(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return self.s * pts @ self.rotation.T + self.t

    def as_tuple(self):
        return (self.s, self.theta, self.tx, self.ty)


def _wrap_angle(a: float) -> float:
    return math.atan2(math.sin(a), math.cos(a))


def invert_similarity(T: SimilarityTransform) -> SimilarityTransform:
    inv_s = 1.0 / T.s
    rt = SimilarityTransform(1.0, -T.theta).rotation @ T.t
    return SimilarityTransform(inv_s, -T.theta, -inv_s * rt[0], -inv_s * rt[1])


def compose_similarity(a: SimilarityTransform, b: SimilarityTransform) -> SimilarityTransform:
    """``a`` after ``b``."""
    t = a.s * a.rotation @ b.t + a.t
    return SimilarityTransform(a.s * b.s, _wrap_angle(a.theta + b.theta), t[0], t[1])


def _landmarks(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != 2 or x.shape[0] < 2:
        raise ValueError(f"{name} must be an (L, 2) array with L >= 2, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return x


def solve_similarity(m, tmp) -> SimilarityTransform:
    """Least-squares ``s, R, t`` taking landmarks ``m`` onto ``tmp`` (Umeyama).

    The rotation is the determinant-corrected polar factor of the cross-covariance,
    so a mirrored landmark set still yields a proper rotation.
    """
    m = _landmarks(m, "landmarks")
    tmp = _landmarks(tmp, "template")
    if m.shape != tmp.shape:
        raise ValueError(f"landmark count mismatch: {len(m)} vs {len(tmp)}")
    mu_m, mu_t = m.mean(axis=0), tmp.mean(axis=0)
    dm, dt = m - mu_m, tmp - mu_t
    var_m = (dm * dm).sum() / len(m)
    if var_m <= 1e-12 * max(1.0, float(np.abs(m).max()) ** 2):
        raise DegenerateInputError("landmarks are (nearly) coincident")
    cov = dt.T @ dm / len(m)
    u, d, vt = np.linalg.svd(cov)
    sign = np.ones(2)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        sign[1] = -1.0
    r = (u * sign) @ vt
    s = float((d * sign).sum() / var_m)
    if s <= 0:
        raise DegenerateInputError("template has no spatial extent")
    t = mu_t - s * r @ mu_m
    return SimilarityTransform(s, math.atan2(r[1, 0], r[0, 0]), float(t[0]), float(t[1]))


def alignment_residual(T: SimilarityTransform, m, tmp) -> float:
    """Sum of squared landmark misfits ``|s R m + t - tmp|^2``."""
    d = T.apply_points(m) - np.asarray(tmp, dtype=np.float64)
    return float((d * d).sum())


def apply_similarity(img, T: SimilarityTransform) -> np.ndarray:
    """Resample ``img`` so that content at ``p`` lands at ``T(p)``; same output size."""
    img = as_feature_map(img)
    _, h, w = img.shape
    inv = invert_similarity(T)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    a = inv.s * inv.rotation
    px = a[0, 0] * xs + a[0, 1] * ys + inv.tx
    py = a[1, 0] * xs + a[1, 1] * ys + inv.ty
    return _sample_pixels(img.astype(np.float64), px, py).astype(np.float32)


# -- soft mask ----------------------------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Sampled gaussian truncated at ``3 sigma`` and normalized to unit sum."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    r = max(1, math.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k[np.abs(x) > 3.0 * sigma] = 0.0
    return k / k.sum()


def default_sigma(rect) -> float:
    x0, y0, x1, y1 = rect
    return 0.05 * min(x1 - x0, y1 - y0)


def gaussian_soft_mask(h: int, w: int, rect, sigma: float | None = None) -> np.ndarray:
    """Blurred indicator of ``rect = (x0, y0, x1, y1)``; returns a ``(1, h, w)`` map.

    Pixel ``(r, c)`` is inside when ``x0 <= c < x1`` and ``y0 <= r < y1``.  The
    indicator is blurred separably with :func:`gaussian_kernel`; edges of the image
    are replicated.
    """
    x0, y0, x1, y1 = (float(v) for v in rect)
    if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
        raise ValueError(f"rect {rect} is not inside a {w}x{h} image")
    if sigma is None:
        sigma = default_sigma((x0, y0, x1, y1))
    cols = np.arange(w)
    rows = np.arange(h)
    ind = np.outer((rows >= y0) & (rows < y1), (cols >= x0) & (cols < x1)).astype(np.float64)
    k = gaussian_kernel(sigma)
    blurred = correlate1d(correlate1d(ind, k, axis=0, mode="nearest"), k, axis=1, mode="nearest")
    return np.clip(blurred, 0.0, 1.0)[None].astype(np.float32)


def mouth_rect(points, inflate: float = 0.2, bounds=None):
    """Bounding box of mouth landmarks grown by ``inflate`` of its size (clipped to ``bounds=(h, w)``)."""
    pts = _landmarks(points, "mouth landmarks")
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = 0.5 * inflate * (hi - lo)
    x0, y0 = lo - pad
    x1, y1 = hi + pad
    if bounds is not None:
        h, w = bounds
        x0, y0 = max(0.0, x0), max(0.0, y0)
        x1, y1 = min(float(w), x1), min(float(h), y1)
    return (float(x0), float(y0), float(x1), float(y1))


def composite(original, generated, mask) -> np.ndarray:
    """``mask * generated + (1 - mask) * original``, mask broadcast over channels."""
    a = as_feature_map(original)
    b = as_feature_map(generated)
    m = as_feature_map(mask)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if m.shape[0] != 1 or m.shape[1:] != a.shape[1:]:
        raise ValueError(f"mask must be (1, {a.shape[1]}, {a.shape[2]}), got {m.shape}")
    if m.min() < 0 or m.max() > 1:
        raise ValueError("mask values must lie in [0, 1]")
    m64 = m.astype(np.float64)
    out = m64 * b + (1.0 - m64) * a
    return out.astype(np.float32)
