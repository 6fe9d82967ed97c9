"""Analytic gradients of the warp and a central-difference checker.

Bilinear sampling is only piecewise smooth.  At integer pixel coordinates the
cell starting at that coordinate is used (the edge cell at the last pixel),
and coordinates clamped to the border get zero gradient.  Finite-difference
checks should therefore use smooth images and objectives that ignore the border.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (CoarseGridConfig, _cell, _grid_pixels, _resolve_cfg, as_feature_map,
                   compute_field_on_coarse_grid, interp_matrix, make_identity_grid, upscale_field,
                   warp_feature_map64, warp_pixels)
from .warp import (KX, KY, PARAM_NAMES, RHO, SX, SY, TX, TY, THETA, WarpSpec, _as_params,
                   _blend_terms, _local_offsets, _point)

DEFAULT_STEPS = (1e-4, 1e-5, 1e-6)
REL_TOL = 1e-4


def jacobian_points(points, params, *, coupling: bool = True) -> np.ndarray:
    """d(displacement)/d(params) at many points for one channel.

    Returns ``(M, N, 2, 8)``.  ``coupling=False`` drops the softmax cross terms
    (every weight depends on every keypoint); only useful as a negative control.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    params = _as_params(params)
    dx, dy, dist2, g, w = _blend_terms(points, params)
    ux, uy = _local_offsets(dx, dy, params)
    coef = w * g
    c, s = np.cos(params[:, THETA]), np.sin(params[:, THETA])
    sx, sy, rho = params[:, SX], params[:, SY], params[:, RHO]

    # d(disp)/d(g_j) = w_j ((1 + g_j) u_j - disp); the -w_j disp part is the softmax coupling
    gx = w * (1.0 + g) * ux
    gy = w * (1.0 + g) * uy
    if coupling:
        gx -= w * (coef * ux).sum(axis=1, keepdims=True)
        gy -= w * (coef * uy).sum(axis=1, keepdims=True)
    dg_dkx = 2.0 * rho * g * dx
    dg_dky = 2.0 * rho * g * dy
    dg_drho = -dist2 * g

    jac = np.zeros(dx.shape + (2, 8))
    jac[..., 0, KX] = gx * dg_dkx - coef * (sx * c - 1.0)
    jac[..., 1, KX] = gy * dg_dkx - coef * (sy * s)
    jac[..., 0, KY] = gx * dg_dky + coef * (sx * s)
    jac[..., 1, KY] = gy * dg_dky - coef * (sy * c - 1.0)
    jac[..., 0, RHO] = gx * dg_drho
    jac[..., 1, RHO] = gy * dg_drho
    jac[..., 0, SX] = coef * (c * dx - s * dy)
    jac[..., 1, SY] = coef * (s * dx + c * dy)
    jac[..., 0, THETA] = coef * sx * (-s * dx - c * dy)
    jac[..., 1, THETA] = coef * sy * (c * dx - s * dy)
    jac[..., 0, TX] = coef
    jac[..., 1, TY] = coef
    return jac


def displacement_jacobian(p, kws, *, coupling: bool = True) -> np.ndarray:
    """Per-keypoint 2x8 Jacobian of the displacement at ``p``; returns ``(N, 2, 8)``."""
    p = _point(p)
    return jacobian_points(p[None, :], _as_params(kws), coupling=coupling)[0]


def _sampler_grads(fmap64, px, py):
    """Gradient of each output sample w.r.t. its pixel coordinates, shapes like ``px``."""
    c, h, w = fmap64.shape
    _, x0, fx = _cell(px, w)
    _, y0, fy = _cell(py, h)
    flat = fmap64.reshape(c, -1)
    base = (y0 * w + x0).reshape(c, -1)
    take = lambda off: np.take_along_axis(flat, base + off, axis=1).reshape(px.shape)
    f00, f01, f10, f11 = take(0), take(1), take(w), take(w + 1)
    d_px = (1.0 - fy) * (f01 - f00) + fy * (f11 - f10)
    d_py = (1.0 - fx) * (f10 - f00) + fx * (f11 - f01)
    d_px = np.where((px < 0) | (px > w - 1), 0.0, d_px)
    d_py = np.where((py < 0) | (py > h - 1), 0.0, d_py)
    return d_px, d_py, (x0, y0, fx, fy)


def _map_adjoint(shape, cells, upstream):
    c, h, w = shape
    x0, y0, fx, fy = cells
    grad = np.zeros((c, h * w))
    base = y0 * w + x0
    for ch in range(c):
        b = base[ch].ravel()
        u = upstream[ch].ravel()
        a, bx = fx[ch].ravel(), fy[ch].ravel()
        for off, wt in ((0, (1 - a) * (1 - bx)), (1, a * (1 - bx)), (w, (1 - a) * bx), (w + 1, a * bx)):
            grad[ch] += np.bincount(b + off, weights=u * wt, minlength=h * w)
    return grad.reshape(shape)


def sampler_backward(fmap, grid, upstream):
    """Adjoint of :func:`lawwarp.grid.sample_bilinear`.

    Returns ``(grad_map, grad_grid)``; ``grad_grid`` has the grid's shape and is in
    normalized units.  A grid shared by all channels accumulates over channels.
    """
    fmap = as_feature_map(fmap)
    c, h, w = fmap.shape
    grid = np.asarray(grid, dtype=np.float64)
    px, py = _grid_pixels(grid, h, w)
    shared = grid.ndim == 3
    out_shape = (c,) + grid.shape[-3:-1]
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != out_shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output {out_shape}")
    if not shared and grid.shape[0] != c:
        raise ValueError(f"{grid.shape[0]} grids for {c} channels")
    px = np.broadcast_to(px, out_shape)
    py = np.broadcast_to(py, out_shape)
    fmap64 = fmap.astype(np.float64)
    d_px, d_py, cells = _sampler_grads(fmap64, px, py)
    grad_map = _map_adjoint(fmap.shape, cells, upstream)
    gg = np.stack([upstream * d_px * (0.5 * (w - 1)), upstream * d_py * (0.5 * (h - 1))], axis=-1)
    if shared:
        gg = gg.sum(axis=0)
    return grad_map, gg


def warp_gradient(fmap, spec: WarpSpec, cfg, upstream, *, coupling: bool = True,
                  flip_sign: str | None = None) -> np.ndarray:
    """Gradient of ``sum(upstream * warp_feature_map(fmap, spec, cfg))`` w.r.t. ``spec.params``.

    ``flip_sign`` negates one parameter's gradient (fault injection for the checker).
    """
    fmap = as_feature_map(fmap)
    cfg = _resolve_cfg(cfg, *fmap.shape[1:])
    h, w = cfg.height, cfg.width
    coarse = compute_field_on_coarse_grid(spec, cfg, threads=1)
    field = upscale_field(coarse, h, w)
    px, py = warp_pixels(field, h, w)
    d_px, d_py, _ = _sampler_grads(fmap.astype(np.float64), px, py)
    upstream = np.asarray(upstream, dtype=np.float64)
    g_field = np.stack([upstream * d_px * (0.5 * (w - 1)), upstream * d_py * (0.5 * (h - 1))], axis=-1)
    if (cfg.coarse_h, cfg.coarse_w) != (h, w):
        g_field = np.einsum("ai,cabd,bj->cijd", interp_matrix(cfg.coarse_h, h), g_field,
                            interp_matrix(cfg.coarse_w, w), optimize=True)
    pts = _coarse_points(cfg)
    grads = np.empty(spec.params.shape)
    for ch in range(spec.channels):
        jac = jacobian_points(pts, spec.params[ch], coupling=coupling)
        grads[ch] = np.einsum("mndk,md->nk", jac, g_field[ch].reshape(-1, 2))
    if flip_sign is not None:
        grads[..., PARAM_NAMES.index(flip_sign)] *= -1.0
    return grads


def _coarse_points(cfg: CoarseGridConfig):
    return make_identity_grid(cfg.coarse_h, cfg.coarse_w).reshape(-1, 2)


# -- objectives ---------------------------------------------------------------------------

def border_window(h: int, w: int, margin: float = 0.1) -> np.ndarray:
    """Smooth ``(h, w)`` window, zero within ``margin`` (fraction of size) of the border."""
    def ramp(n):
        t = np.linspace(0.0, 1.0, n)
        d = np.minimum(t, 1.0 - t) / margin - 1.0
        x = np.clip(d, 0.0, 1.0)
        return x * x * (3.0 - 2.0 * x)
    return np.outer(ramp(h), ramp(w))


class LinearObjective:
    """``sum(weights * out)``."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=np.float64)

    def __call__(self, out):
        return float((self.weights * out).sum()), self.weights


class SquaredErrorObjective:
    """``0.5 * sum(window * (out - target)^2)``."""

    def __init__(self, target, window=None):
        self.target = np.asarray(target, dtype=np.float64)
        self.window = 1.0 if window is None else np.asarray(window, dtype=np.float64)

    def __call__(self, out):
        r = out - self.target
        return float(0.5 * (self.window * r * r).sum()), self.window * r


# -- finite-difference check --------------------------------------------------------------

@dataclass
class GradCheckReport:
    steps: tuple
    max_rel_error: dict
    best_step: dict
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)
    rel_tol: float = REL_TOL

    @property
    def passed(self) -> bool:
        return all(e <= self.rel_tol for e in self.max_rel_error.values())

    @property
    def worst_parameter(self) -> str:
        return max(self.max_rel_error, key=self.max_rel_error.get)

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "rel_tol": self.rel_tol,
            "steps": list(self.steps),
            "num_parameters": int(self.analytic.size),
            "parameters": [
                {"name": n, "max_rel_error": self.max_rel_error[n], "best_step": self.best_step[n],
                 "pass": self.max_rel_error[n] <= self.rel_tol}
                for n in PARAM_NAMES
            ],
        }

    def format_table(self) -> str:
        lines = [f"{'param':<6} {'max rel err':>12} {'best step':>10}  status"]
        for n in PARAM_NAMES:
            e = self.max_rel_error[n]
            lines.append(f"{n:<6} {e:12.3e} {self.best_step[n]:10.0e}  {'ok' if e <= self.rel_tol else 'FAIL'}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tol {self.rel_tol:g})")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor: float = 0.0):
    a, f = np.abs(analytic), np.abs(numeric)
    denom = np.maximum(np.maximum(a, f), floor)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.abs(analytic - numeric) / denom
    return np.where(denom > 0, r, 0.0)


def finite_difference_check(fmap, spec: WarpSpec, cfg, objective, steps=DEFAULT_STEPS, *,
                            rel_tol: float = REL_TOL, floor_ratio: float = 1e-6,
                            coupling: bool = True, flip_sign: str | None = None) -> GradCheckReport:
    """Compare the analytic parameter gradient of ``objective(warp(fmap))`` with central differences.

    ``objective(out)`` returns ``(value, d value / d out)``.  For every scalar
    parameter the step giving the smallest error is kept.  Errors are relative to
    ``max(|analytic|, |numeric|, floor_ratio * max|analytic|)`` so that parameters
    with vanishing gradient are judged on the gradient's overall scale.
    """
    fmap = as_feature_map(fmap)
    cfg = _resolve_cfg(cfg, *fmap.shape[1:])
    steps = tuple(float(s) for s in steps)
    out = warp_feature_map64(fmap, spec, cfg, threads=1)
    value, dout = objective(out)
    if not np.isfinite(value):
        raise FloatingPointError("objective is not finite at the evaluation point")
    analytic = warp_gradient(fmap, spec, cfg, dout, coupling=coupling, flip_sign=flip_sign)

    # a parameter only moves its own channel, so only that channel is re-warped
    base = spec.params
    numeric = np.empty((len(steps),) + base.shape)
    for idx in np.ndindex(base.shape):
        ch = idx[0]
        for si, h in enumerate(steps):
            vals = []
            for sign in (1.0, -1.0):
                p = base[ch:ch + 1].copy()
                p[(0,) + idx[1:]] += sign * h
                perturbed = out.copy()
                perturbed[ch] = warp_feature_map64(fmap[ch:ch + 1], WarpSpec(p), cfg, threads=1)[0]
                v, _ = objective(perturbed)
                if not np.isfinite(v):
                    raise FloatingPointError(f"objective is not finite at perturbed parameter {idx}")
                vals.append(v)
            numeric[(si,) + idx] = (vals[0] - vals[1]) / (2.0 * h)

    floor = floor_ratio * float(np.abs(analytic).max())
    errs = np.stack([relative_error(analytic, numeric[i], floor) for i in range(len(steps))])
    best = errs.argmin(axis=0)
    best_err = np.take_along_axis(errs, best[None], axis=0)[0]
    best_numeric = np.take_along_axis(numeric, best[None], axis=0)[0]
    max_rel, best_step = {}, {}
    for j, name in enumerate(PARAM_NAMES):
        e = best_err[..., j]
        i = np.unravel_index(int(e.argmax()), e.shape)
        max_rel[name] = float(e[i])
        best_step[name] = steps[int(best[..., j][i])]
    return GradCheckReport(steps, max_rel, best_step, analytic, best_numeric, rel_tol)
