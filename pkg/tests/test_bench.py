import csv
import json

import numpy as np
import pytest

from lawwarp.bench import (REFERENCE_FPS, BenchEntry, BenchReport, WarpStrategy, dof_count,
                           field_eval_times, loglog_slope, parameter_container, run_bench,
                           verify_ordering, write_report)


def test_dof_examples():
    assert dof_count("local_affine", 1, 8) == 64
    assert dof_count("global_affine", 1) == 6
    assert dof_count("dense_flow", 1, H=64, W=64) == 8192
    assert dof_count(WarpStrategy.LOCAL_AFFINE, 256, 8) == 16384
    with pytest.raises(ValueError):
        dof_count("local_affine", 0, 8)
    with pytest.raises(ValueError):
        dof_count("optical_flow", 1)


def test_verify_ordering_examples():
    assert verify_ordering(256, 8, 64, 64)
    assert verify_ordering(1, 8, 32, 32)
    assert not verify_ordering(1, 8, 16, 16)  # 64 vs 512 dof: under 10x
    assert verify_ordering(4, 1, 64, 64)
    assert not verify_ordering(1, 8, 4, 4)  # dense field too small for the 10x margin
    assert not verify_ordering(1, 8, 8, 16)  # 64 vs 256 dof


def count_entries(strategy, C, N, H, W):
    """Count parameters by materialising the container that stores them."""
    return parameter_container(strategy, C, N, H, W).size


def test_dof_matches_container_sizes():
    rng = np.random.default_rng(0)
    for _ in range(20):
        C = int(rng.integers(1, 65))
        N = int(rng.integers(1, 17))
        H, W = (int(v) for v in rng.integers(8, 97, 2))
        for s in WarpStrategy:
            assert dof_count(s, C, N, H, W) == count_entries(s, C, N, H, W)
        g, loc, d = (count_entries(s, C, N, H, W) for s in WarpStrategy)
        assert verify_ordering(C, N, H, W) == (g < loc and 10 * loc <= d)


def test_small_run_bench():
    rep = run_bench((32,), C=2, N=3, repetitions=3, warmup=1)
    assert [e.strategy for e in rep.entries] == [s.value for s in WarpStrategy]
    for e in rep.entries:
        assert e.fps_median > 0 and e.fps_iqr >= 0 and e.grid == 32
    assert sorted(rep.ordering(32)) == sorted(REFERENCE_FPS)
    assert isinstance(rep.matches_reference_ordering(32), bool)
    assert "local_affine" in rep.format_table()


def test_run_bench_threads_and_validation():
    rep = run_bench((24,), C=2, N=2, repetitions=2, warmup=0, threads=(1, 2))
    assert {e.threads for e in rep.entries} == {1, 2}
    with pytest.raises(ValueError):
        run_bench((24,), repetitions=0)


def test_field_evaluation_scales_linearly_in_keypoints():
    Ns = [8, 16, 32, 64]
    times = field_eval_times(Ns, repetitions=7, warmup=2)
    assert loglog_slope(Ns, times) <= 1.2


def test_loglog_slope_examples():
    xs = np.array([1.0, 2.0, 4.0, 8.0])
    assert loglog_slope(xs, 3 * xs) == pytest.approx(1.0)
    assert loglog_slope(xs, xs ** 2) == pytest.approx(2.0)


def test_write_report(tmp_path):
    rep = BenchReport(entries=[BenchEntry("global_affine", 24, 100.0, 5.0, 64, 4, 1),
                               BenchEntry("local_affine", 256, 80.0, 4.0, 64, 4, 8),
                               BenchEntry("dense_flow", 32768, 150.0, 6.0, 64, 4, 8)])
    paths = write_report(rep, tmp_path / "out")
    doc = json.loads(paths["json"].read_text())
    assert doc["reference_fps"] == REFERENCE_FPS
    assert [r["dof"] for r in doc["results"]] == [24, 256, 32768]
    with open(paths["csv"]) as f:
        rows = list(csv.DictReader(f))
    assert set(rows[0]) == {"strategy", "dof", "fps_median", "fps_iqr", "grid", "C", "N", "threads"}
    assert float(rows[1]["fps_median"]) == 80.0
    assert paths["png"].read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
    assert rep.ordering(64) == ["dense_flow", "global_affine", "local_affine"]
    assert not rep.matches_reference_ordering(64)
    assert "png" not in write_report(rep, tmp_path / "nofig", figure=False)
