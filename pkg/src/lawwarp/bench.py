"""Degrees-of-freedom accounting and kernel throughput of three warping strategies.

* global affine: one 6-dof affine per channel
* local affine:  N keypoints x 8 dof per channel
* dense flow:    a 2-vector per pixel per channel, supplied directly

For timing, the global affine warp runs through the local-affine kernel with a
single keypoint and ``rho = 0`` so that all strategies share one sampler.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .grid import CoarseGridConfig, compute_field_on_coarse_grid, warp_feature_map, warp_with_field
from .warp import DOF_PER_KEYPOINT, RHO, WarpSpec

log = logging.getLogger(__name__)

# published frame rates of complete talking-face networks; only their ordering is comparable here
REFERENCE_FPS = {"global_affine": 31.0, "local_affine": 26.0, "dense_flow": 12.0}


class WarpStrategy(str, Enum):
    GLOBAL_AFFINE = "global_affine"
    LOCAL_AFFINE = "local_affine"
    DENSE_FLOW = "dense_flow"


def dof_count(strategy, C: int, N: int = 1, H: int = 1, W: int = 1) -> int:
    strategy = WarpStrategy(strategy)
    if min(C, N, H, W) < 1:
        raise ValueError("dimensions must be positive")
    if strategy is WarpStrategy.GLOBAL_AFFINE:
        return 6 * C
    if strategy is WarpStrategy.LOCAL_AFFINE:
        return DOF_PER_KEYPOINT * N * C
    return 2 * H * W * C


def parameter_container(strategy, C: int, N: int = 1, H: int = 1, W: int = 1) -> np.ndarray:
    """The array that actually holds a strategy's parameters."""
    strategy = WarpStrategy(strategy)
    if strategy is WarpStrategy.GLOBAL_AFFINE:
        return np.tile(np.eye(2, 3), (C, 1, 1))
    if strategy is WarpStrategy.LOCAL_AFFINE:
        return WarpSpec.identity(C, N).params
    return np.zeros((C, H, W, 2))


def verify_ordering(C: int, N: int, H: int, W: int) -> bool:
    """``global < local`` and ``local`` at least ten times below dense flow."""
    g = dof_count("global_affine", C, N, H, W)
    loc = dof_count("local_affine", C, N, H, W)
    d = dof_count("dense_flow", C, N, H, W)
    return g < loc and 10 * loc <= d


@dataclass
class BenchEntry:
    strategy: str
    dof: int
    fps_median: float
    fps_iqr: float
    grid: int
    C: int
    N: int
    threads: int = 1


@dataclass
class BenchReport:
    entries: list = field(default_factory=list)
    repetitions: int = 20
    warmup: int = 3
    downscale_factor: int = 4

    def for_grid(self, grid: int) -> dict:
        return {e.strategy: e for e in self.entries if e.grid == grid}

    def ordering(self, grid: int, threads: int = 1) -> list:
        """Strategies sorted by decreasing median FPS."""
        es = [e for e in self.entries if e.grid == grid and e.threads == threads]
        return [e.strategy for e in sorted(es, key=lambda e: -e.fps_median)]

    def matches_reference_ordering(self, grid: int, threads: int = 1) -> bool:
        ref = sorted(REFERENCE_FPS, key=lambda s: -REFERENCE_FPS[s])
        return self.ordering(grid, threads) == ref

    def to_dict(self) -> dict:
        return {
            "repetitions": self.repetitions,
            "warmup": self.warmup,
            "downscale_factor": self.downscale_factor,
            "reference_fps": REFERENCE_FPS,
            "results": [asdict(e) for e in self.entries],
        }

    def format_table(self) -> str:
        lines = [f"{'strategy':<14} {'grid':>5} {'C':>4} {'N':>3} {'thr':>3} {'dof':>10} {'fps':>10} {'iqr':>9}"]
        for e in self.entries:
            lines.append(f"{e.strategy:<14} {e.grid:>5} {e.C:>4} {e.N:>3} {e.threads:>3} "
                         f"{e.dof:>10} {e.fps_median:>10.1f} {e.fps_iqr:>9.1f}")
        return "\n".join(lines)


def _smooth_image(rng, C, H, W) -> np.ndarray:
    y, x = np.mgrid[0:H, 0:W] / max(H - 1, 1)
    freqs = rng.uniform(0.5, 3.0, (C, 3))
    return np.stack([0.5 + 0.5 * np.sin(2 * np.pi * (a * x + b * y) + ph) for a, b, ph in freqs]).astype(np.float32)


def _time(fn, repetitions: int, warmup: int) -> np.ndarray:
    for _ in range(warmup):
        fn()
    out = np.empty(repetitions)
    for i in range(repetitions):
        t0 = time.perf_counter()
        fn()
        out[i] = time.perf_counter() - t0
    return out


def _fps_stats(seconds):
    fps = 1.0 / np.asarray(seconds)
    q1, med, q3 = np.percentile(fps, [25, 50, 75])
    return float(med), float(q3 - q1)


def run_bench(grid_sizes=(240,), C: int = 4, N: int = 8, repetitions: int = 20, *, warmup: int = 3,
              downscale_factor: int = 4, threads=(1,), seed: int = 0) -> BenchReport:
    """Time one full warp (field evaluation, upscaling, sampling) per strategy.

    Inputs, specs and dense fields are built before the timers start.
    """
    if repetitions < 1 or warmup < 0:
        raise ValueError("need repetitions >= 1 and warmup >= 0")
    report = BenchReport(repetitions=repetitions, warmup=warmup, downscale_factor=downscale_factor)
    rng = np.random.default_rng(seed)
    for g in grid_sizes:
        fmap = _smooth_image(rng, C, g, g)
        cfg = CoarseGridConfig(downscale_factor, g, g)
        local = WarpSpec.random(rng, C, N)
        gparams = WarpSpec.random(rng, C, 1).params.copy()
        gparams[..., RHO] = 0.0
        glob = WarpSpec(gparams)
        dense = compute_field_on_coarse_grid(WarpSpec.random(rng, C, N), CoarseGridConfig(1, g, g))
        for thr in threads:
            cases = {
                WarpStrategy.GLOBAL_AFFINE: lambda: warp_feature_map(fmap, glob, cfg, threads=thr),
                WarpStrategy.LOCAL_AFFINE: lambda: warp_feature_map(fmap, local, cfg, threads=thr),
                WarpStrategy.DENSE_FLOW: lambda: warp_with_field(fmap, dense, threads=thr),
            }
            for strat, fn in cases.items():
                med, iqr = _fps_stats(_time(fn, repetitions, warmup))
                n = 1 if strat is WarpStrategy.GLOBAL_AFFINE else N
                report.entries.append(BenchEntry(strat.value, dof_count(strat, C, N, g, g), med, iqr, g, C, n, thr))
            order = report.ordering(g, thr)
            log.info("grid %d threads %d: observed FPS ordering %s (reference %s)", g, thr,
                     " > ".join(order), "global_affine > local_affine > dense_flow")
    return report


def field_eval_times(Ns, C: int = 4, grid: int = 60, repetitions: int = 20, warmup: int = 3, seed: int = 0):
    """Median local-affine field-evaluation time on a ``grid x grid`` coarse grid for each N."""
    rng = np.random.default_rng(seed)
    cfg = CoarseGridConfig(1, grid, grid)
    out = []
    for n in Ns:
        spec = WarpSpec.random(rng, C, n)
        out.append(float(np.median(_time(lambda: compute_field_on_coarse_grid(spec, cfg, threads=1),
                                          repetitions, warmup))))
    return np.array(out)


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def write_report(report: BenchReport, out_dir, figure: bool = True) -> dict:
    """Write ``bench.json``, ``bench.csv`` and (optionally) ``bench.png``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / "bench.json", "csv": out_dir / "bench.csv"}
    paths["json"].write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    cols = ["strategy", "dof", "fps_median", "fps_iqr", "grid", "C", "N", "threads"]
    with open(paths["csv"], "w", newline="") as f:
        wr = csv.DictWriter(f, fieldnames=cols)
        wr.writeheader()
        for e in report.entries:
            wr.writerow(asdict(e))
    if figure:
        from .plotting import plot_bench
        paths["png"] = out_dir / "bench.png"
        plot_bench(report, paths["png"])
    return paths
