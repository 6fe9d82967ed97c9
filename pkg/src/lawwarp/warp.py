"""Keypoint-driven local affine displacement fields.

Every keypoint carries eight scalars, stored in this order::

    kx, ky, rho, sx, sy, theta, tx, ty

A point ``p`` is moved towards ``S R (p - k) + k + t`` of each keypoint, the
per-keypoint displacements being blended with softmax weights of the gaussian
influences and damped once more by the influence itself, so the field decays
to zero away from all keypoints.

Coordinates are normalized to ``[-1, 1]`` with ``x`` along columns and ``y``
along rows.  All field math is done in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PARAM_NAMES = ("kx", "ky", "rho", "sx", "sy", "theta", "tx", "ty")
KX, KY, RHO, SX, SY, THETA, TX, TY = range(8)
DOF_PER_KEYPOINT = len(PARAM_NAMES)


class BranchCutError(ValueError):
    """The affine map has no real principal logarithm."""


def _check_finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite input")


@dataclass(frozen=True)
class KeypointWarp:
    """One keypoint: position, influence coefficient and similarity-affine parameters."""

    k: tuple[float, float]
    rho: float = 1.0
    sx: float = 1.0
    sy: float = 1.0
    theta: float = 0.0
    tx: float = 0.0
    ty: float = 0.0

    def __post_init__(self):
        k = tuple(float(v) for v in self.k)
        if len(k) != 2:
            raise ValueError("keypoint position must have two coordinates")
        object.__setattr__(self, "k", k)
        _check_finite(np.array([*k, self.rho, self.sx, self.sy, self.theta, self.tx, self.ty]))
        if self.rho < 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        if self.sx <= 0 or self.sy <= 0:
            raise ValueError(f"scales must be positive, got sx={self.sx}, sy={self.sy}")

    def as_array(self) -> np.ndarray:
        return np.array([self.k[0], self.k[1], self.rho, self.sx, self.sy,
                         self.theta, self.tx, self.ty], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "KeypointWarp":
        a = [float(v) for v in a]
        return cls(k=(a[KX], a[KY]), rho=a[RHO], sx=a[SX], sy=a[SY],
                   theta=a[THETA], tx=a[TX], ty=a[TY])

    @property
    def is_identity(self) -> bool:
        return self.sx == 1 and self.sy == 1 and self.theta == 0 and self.tx == 0 and self.ty == 0


def _validate_params(params: np.ndarray):
    if params.ndim != 3 or params.shape[2] != DOF_PER_KEYPOINT:
        raise ValueError(f"params must have shape (C, N, 8), got {params.shape}")
    if params.shape[0] < 1 or params.shape[1] < 1:
        raise ValueError("need at least one channel and one keypoint")
    _check_finite(params)
    if np.any(params[..., RHO] < 0):
        raise ValueError("rho must be >= 0")
    if np.any(params[..., SX] <= 0) or np.any(params[..., SY] <= 0):
        raise ValueError("scales must be positive")


class WarpSpec:
    """Per-channel keypoint warps, held as a read-only ``(C, N, 8)`` array."""

    __slots__ = ("_params",)

    def __init__(self, params):
        params = np.array(params, dtype=np.float64)
        _validate_params(params)
        params.setflags(write=False)
        self._params = params

    @property
    def params(self) -> np.ndarray:
        return self._params

    @property
    def channels(self) -> int:
        return self._params.shape[0]

    @property
    def num_keypoints(self) -> int:
        return self._params.shape[1]

    def keypoints(self, channel: int) -> list[KeypointWarp]:
        return [KeypointWarp.from_array(row) for row in self._params[channel]]

    def with_params(self, params) -> "WarpSpec":
        return WarpSpec(params)

    @classmethod
    def from_keypoints(cls, keypoints_per_channel: Sequence[Sequence[KeypointWarp]]) -> "WarpSpec":
        if not keypoints_per_channel:
            raise ValueError("need at least one channel")
        counts = {len(kws) for kws in keypoints_per_channel}
        if len(counts) != 1:
            raise ValueError(f"every channel needs the same keypoint count, got {sorted(counts)}")
        return cls([[kw.as_array() for kw in kws] for kws in keypoints_per_channel])

    @classmethod
    def identity(cls, channels: int, num_keypoints: int, rho: float = 1.0, rng=None) -> "WarpSpec":
        """Identity warp; keypoints on a fixed ring unless ``rng`` scatters them."""
        params = np.zeros((channels, num_keypoints, 8))
        if rng is None:
            ang = 2 * np.pi * np.arange(num_keypoints) / num_keypoints
            params[:, :, KX] = 0.5 * np.cos(ang)
            params[:, :, KY] = 0.5 * np.sin(ang)
        else:
            params[:, :, KX:KY + 1] = rng.uniform(-0.5, 0.5, (channels, num_keypoints, 2))
        params[..., RHO] = rho
        params[..., SX] = 1.0
        params[..., SY] = 1.0
        return cls(params)

    @classmethod
    def random(cls, rng: np.random.Generator, channels: int, num_keypoints: int, *,
               k_range=0.5, rho_range=(1.0, 4.0), scale_spread=0.1,
               theta_range=0.1, t_range=0.05) -> "WarpSpec":
        """Draw a smooth random spec (keypoints well inside the domain)."""
        shape = (channels, num_keypoints)
        params = np.empty(shape + (8,))
        params[..., KX] = rng.uniform(-k_range, k_range, shape)
        params[..., KY] = rng.uniform(-k_range, k_range, shape)
        params[..., RHO] = rng.uniform(*rho_range, shape)
        params[..., SX] = rng.uniform(1 - scale_spread, 1 + scale_spread, shape)
        params[..., SY] = rng.uniform(1 - scale_spread, 1 + scale_spread, shape)
        params[..., THETA] = rng.uniform(-theta_range, theta_range, shape)
        params[..., TX] = rng.uniform(-t_range, t_range, shape)
        params[..., TY] = rng.uniform(-t_range, t_range, shape)
        return cls(params)

    def to_dict(self) -> dict:
        return {
            "channels": self.channels,
            "keypoints": [
                [{"k": [row[KX], row[KY]], "rho": row[RHO], "sx": row[SX], "sy": row[SY],
                  "theta": row[THETA], "tx": row[TX], "ty": row[TY]}
                 for row in self._params[c].tolist()]
                for c in range(self.channels)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WarpSpec":
        try:
            channels = int(doc["channels"])
            rows = [[KeypointWarp(k=tuple(kp["k"]), rho=kp["rho"], sx=kp["sx"], sy=kp["sy"],
                                  theta=kp["theta"], tx=kp["tx"], ty=kp["ty"])
                     for kp in chan]
                    for chan in doc["keypoints"]]
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed warp spec: {exc!r}") from exc
        if channels < 1 or len(rows) != channels:
            raise ValueError(f"'channels' is {channels} but {len(rows)} keypoint lists were given")
        if any(len(r) == 0 for r in rows):
            raise ValueError("every channel needs at least one keypoint")
        return cls.from_keypoints(rows)

    def __eq__(self, other):
        return isinstance(other, WarpSpec) and np.array_equal(self._params, other._params)

    def __repr__(self):
        return f"WarpSpec(channels={self.channels}, num_keypoints={self.num_keypoints})"


def _as_params(kws) -> np.ndarray:
    if isinstance(kws, np.ndarray):
        params = np.asarray(kws, dtype=np.float64)
    else:
        kws = list(kws)
        if not kws:
            raise ValueError("need at least one keypoint")
        params = np.stack([kw.as_array() for kw in kws])
    if params.ndim != 2 or params.shape[0] == 0 or params.shape[1] != 8:
        raise ValueError("need at least one keypoint")
    return params


def _point(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.shape != (2,):
        raise ValueError(f"point must have two coordinates, got shape {p.shape}")
    _check_finite(p)
    return p


def gaussian_influence(p, k, rho: float) -> float:
    """``exp(-rho * |p - k|^2)``."""
    p, k = _point(p), _point(k)
    _check_finite(rho)
    if rho < 0:
        raise ValueError("rho must be >= 0")
    d = p - k
    return math.exp(-rho * float(d @ d))


def _softmax(x: np.ndarray, axis=-1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _blend_terms(points: np.ndarray, params: np.ndarray):
    """Shared intermediates of the composite field at ``points`` (M, 2) for one channel."""
    dx = points[:, 0:1] - params[:, KX]
    dy = points[:, 1:2] - params[:, KY]
    dist2 = dx * dx + dy * dy
    g = np.exp(-params[:, RHO] * dist2)
    w = _softmax(g, axis=1)
    return dx, dy, dist2, g, w


def _local_offsets(dx, dy, params):
    """``(S R - I)(p - k) + t`` per point and keypoint."""
    c, s = np.cos(params[:, THETA]), np.sin(params[:, THETA])
    ux = params[:, SX] * (c * dx - s * dy) - dx + params[:, TX]
    uy = params[:, SY] * (s * dx + c * dy) - dy + params[:, TY]
    return ux, uy


def displacement_points(points, params) -> np.ndarray:
    """Composite displacement at many points for one channel.

    ``points`` is (M, 2), ``params`` (N, 8); returns (M, 2).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    params = _as_params(params)
    dx, dy, _, g, w = _blend_terms(points, params)
    ux, uy = _local_offsets(dx, dy, params)
    coef = w * g
    return np.stack([(coef * ux).sum(axis=1), (coef * uy).sum(axis=1)], axis=-1)


def displacement_field(spec: WarpSpec, points) -> np.ndarray:
    """Displacement of every channel at ``points`` (..., 2); returns (C, ..., 2)."""
    points = np.asarray(points, dtype=np.float64)
    flat = points.reshape(-1, 2)
    out = np.stack([displacement_points(flat, spec.params[c]) for c in range(spec.channels)])
    return out.reshape((spec.channels,) + points.shape)


def softmax_weights(p, kws: Iterable[KeypointWarp]) -> np.ndarray:
    """Softmax over keypoints of the gaussian influences at ``p``."""
    p = _point(p)
    params = _as_params(kws)
    return _blend_terms(p[None, :], params)[4][0]


def local_affine_target(p, kw: KeypointWarp) -> np.ndarray:
    """Where ``p`` goes under the keypoint-centred map ``S R (p - k) + k + t``."""
    p = _point(p)
    a = kw.as_array()
    c, s = math.cos(a[THETA]), math.sin(a[THETA])
    dx, dy = p[0] - a[KX], p[1] - a[KY]
    return np.array([a[SX] * (c * dx - s * dy) + a[KX] + a[TX],
                     a[SY] * (s * dx + c * dy) + a[KY] + a[TY]])


def displacement_at(p, kws: Iterable[KeypointWarp]) -> np.ndarray:
    """Composite displacement ``(dx, dy)`` at a single point."""
    p = _point(p)
    return displacement_points(p[None, :], _as_params(kws))[0]


# -- matrix exponential / logarithm ---------------------------------------------------------

_EXP_DEGREE = 13
_LOG_DEGREE = 30


def _check_algebra(a: np.ndarray):
    if a.shape[-2:] != (3, 3):
        raise ValueError(f"expected 3x3 matrices, got shape {a.shape}")
    _check_finite(a)
    if np.any(a[..., 2, :] != 0):
        raise ValueError("affine algebra element must have a zero last row")


def matrix_exp_3x3(a) -> np.ndarray:
    """Exponential of affine algebra elements, batched over leading axes.

    Scaling and squaring: ``s = max(0, ceil(log2 |a|_1)) + 3`` halvings, a degree-13
    Taylor polynomial, then ``s`` squarings.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_algebra(a)
    batch = a.shape[:-2]
    a = a.reshape(-1, 3, 3)
    norm = np.abs(a).sum(axis=1).max(axis=1)
    with np.errstate(divide="ignore"):
        s = np.maximum(0, np.ceil(np.log2(np.where(norm > 0, norm, 1.0)))).astype(int) + 3
    x = a / np.ldexp(1.0, s)[:, None, None]
    eye = np.eye(3)
    r = eye + x / _EXP_DEGREE
    for j in range(_EXP_DEGREE - 1, 0, -1):
        r = eye + (x @ r) / j
    for i in range(int(s.max(initial=0))):
        sq = r @ r
        r = np.where((s > i)[:, None, None], sq, r)
    r[:, 2, :] = (0.0, 0.0, 1.0)
    return r.reshape(batch + (3, 3))


def _sqrtm_db(m: np.ndarray) -> np.ndarray:
    # Denman-Beavers iteration for the principal square root
    y, z = m.copy(), np.eye(3)
    for _ in range(100):
        y_next = 0.5 * (y + np.linalg.inv(z))
        z = 0.5 * (z + np.linalg.inv(y))
        done = np.abs(y_next - y).max() <= 1e-15 * max(1.0, np.abs(y_next).max())
        y = y_next
        if done:
            break
    return y


def affine_log(m) -> np.ndarray:
    """Principal logarithm of a 3x3 homogeneous affine matrix (last row ``0 0 1``).

    Inverse scaling and squaring: take principal square roots until within 0.25 of
    the identity, sum the Taylor series of ``log(I + E)`` and scale back up.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
    _check_finite(m)
    if np.any(m[2] != (0.0, 0.0, 1.0)):
        raise ValueError("homogeneous affine matrix must have last row (0, 0, 1)")
    ev = np.linalg.eigvals(m[:2, :2])
    scale = max(1.0, np.abs(ev).max())
    for lam in ev:
        if abs(lam.imag) <= 1e-12 * scale and lam.real <= 0:
            raise BranchCutError(f"eigenvalue {lam.real:g} on the closed negative real axis")
    eye = np.eye(3)
    x, k = m, 0
    while np.abs(x - eye).sum(axis=0).max() > 0.25:
        x = _sqrtm_db(x)
        k += 1
        if k > 64:
            raise BranchCutError("square-root iteration did not approach the identity")
    e = x - eye
    term = e.copy()
    log = e.copy()
    for j in range(2, _LOG_DEGREE + 1):
        term = term @ e
        log += (-1) ** (j + 1) * term / j
    log *= 2.0 ** k
    log[2] = 0.0
    return log


def homogeneous_matrix(kw: KeypointWarp) -> np.ndarray:
    """3x3 matrix of ``p -> S R (p - k) + k + t``."""
    a = kw.as_array()
    c, s = math.cos(a[THETA]), math.sin(a[THETA])
    lin = np.array([[a[SX] * c, -a[SX] * s], [a[SY] * s, a[SY] * c]])
    k = a[KX:KY + 1]
    out = np.eye(3)
    out[:2, :2] = lin
    out[:2, 2] = k - lin @ k + a[TX:TY + 1]
    return out


def algebra_from_params(kw: KeypointWarp) -> np.ndarray:
    """Affine algebra element whose exponential is the keypoint-centred affine map.

    Raises :class:`BranchCutError` when ``S R`` has an eigenvalue on the negative
    real axis (``theta = +-pi`` in the isotropic case).
    """
    return affine_log(homogeneous_matrix(kw))


def field_exp_points(points, params, *, weighting: str = "softmax", logs=None) -> np.ndarray:
    """Matrix-exponential field at many points for one channel; returns mapped points (M, 2).

    The exponent is ``sum_i c_i A_i`` with ``c_i = w_i g_i`` (``weighting="softmax"``,
    the blend the composite field uses) or ``c_i = g_i`` (``weighting="gaussian"``).
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    params = _as_params(params)
    if logs is None:
        logs = np.stack([algebra_from_params(KeypointWarp.from_array(row)) for row in params])
    _, _, _, g, w = _blend_terms(points, params)
    if weighting == "softmax":
        coef = w * g
    elif weighting == "gaussian":
        coef = g
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    gen = np.einsum("mn,nij->mij", coef, logs)
    mats = matrix_exp_3x3(gen)
    return np.einsum("mij,mj->mi", mats[:, :2, :2], points) + mats[:, :2, 2]


def field_exp_reference(p, kws: Iterable[KeypointWarp], *, weighting: str = "softmax") -> np.ndarray:
    """Map ``p`` through the exponential of the blended algebra elements."""
    p = _point(p)
    return field_exp_points(p[None, :], _as_params(kws), weighting=weighting)[0]


def scale_affine_params(params, eps: float) -> np.ndarray:
    """Shrink the affine part of every keypoint towards identity by ``eps``.

    ``theta`` and ``t`` are multiplied by ``eps``; scales become ``s ** eps`` (their
    logarithms are multiplied).  Keypoint positions and ``rho`` are untouched.
    """
    out = np.array(params, dtype=np.float64)
    out[..., SX] = out[..., SX] ** eps
    out[..., SY] = out[..., SY] ** eps
    out[..., THETA] *= eps
    out[..., TX] *= eps
    out[..., TY] *= eps
    return out
