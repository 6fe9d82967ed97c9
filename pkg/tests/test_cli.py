import json
import math
import subprocess
import sys

import numpy as np
import pytest

from lawwarp import io
from lawwarp.cli import main
from lawwarp.frontalize import SimilarityTransform, apply_similarity, compose_similarity, invert_similarity
from lawwarp.grid import CoarseGridConfig, compute_field_on_coarse_grid, upscale_field, warp_feature_map
from lawwarp.warp import KeypointWarp, WarpSpec, displacement_points

from .helpers import psnr, smooth_image

SMALL_GRADCHECK = {"channels": 2, "keypoints": 3, "height": 48, "width": 48, "downscale_factor": 2}


def run(*argv):
    return main([str(a) for a in argv])


def face_card(h=112, w=112):
    """Smooth synthetic face: bright oval, dark eyes, nose and mouth blobs."""
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    blob = lambda cx, cy, sx, sy: np.exp(-((x - cx) ** 2 / (2 * sx ** 2) + (y - cy) ** 2 / (2 * sy ** 2)))
    img = 0.2 + 0.6 * blob(56, 60, 30, 38)
    for cx, cy in ((38.3, 51.7), (73.5, 51.5)):
        img -= 0.35 * blob(cx, cy, 5, 3)
    img -= 0.2 * blob(56.0, 71.7, 3, 5) + 0.3 * blob(56.2, 92.2, 12, 3)
    return np.clip(img, 0, 1)[None].astype(np.float32)


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "lawwarp.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in ("field", "warp", "viz", "frontalize", "restore", "gradcheck", "bench"):
        assert name in out.stdout


def test_field_identity_is_zero(tmp_path):
    io.write_spec(tmp_path / "s.json", WarpSpec.identity(3, 8))
    assert run("field", tmp_path / "s.json", "--grid", "60x60", "--coarse", 4, "--out", tmp_path / "f.bin") == 0
    f = io.read_tensor(tmp_path / "f.bin")
    assert f.shape == (3, 60, 60, 2) and not f.any()


def test_field_single_keypoint_matches_pointwise(tmp_path):
    kw = KeypointWarp(k=(0.1, -0.2), rho=1.5, tx=0.05, ty=-0.02)
    spec = WarpSpec.from_keypoints([[kw]])
    io.write_spec(tmp_path / "s.json", spec)
    assert run("field", tmp_path / "s.json", "--grid", "9x7", "--out", tmp_path / "f.bin") == 0
    f = io.read_tensor(tmp_path / "f.bin")[0]
    ys, xs = np.mgrid[0:9, 0:7]
    pts = np.stack([-1 + 2 * xs / 6, -1 + 2 * ys / 8], -1).reshape(-1, 2)
    want = displacement_points(pts, spec.params[0]).reshape(9, 7, 2).astype(np.float32)
    assert np.array_equal(f, want)


def test_cli_matches_library_on_random_cases(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(10):
        c, n = int(rng.integers(1, 4)), int(rng.integers(1, 9))
        h, w = (int(v) for v in rng.integers(8, 40, 2))
        factor = int(rng.integers(1, 4))
        spec = WarpSpec.random(rng, c, n, t_range=0.2)
        io.write_spec(tmp_path / "s.json", spec)
        assert run("field", tmp_path / "s.json", "--grid", f"{h}x{w}", "--coarse", factor,
                   "--out", tmp_path / "f.bin") == 0
        cfg = CoarseGridConfig(factor, h, w)
        lib = upscale_field(compute_field_on_coarse_grid(io.read_spec(tmp_path / "s.json"), cfg), h, w)
        assert np.array_equal(io.read_tensor(tmp_path / "f.bin"), lib.astype(np.float32))

        fmap = rng.normal(size=(c, h, w)).astype(np.float32)
        io.write_tensor(tmp_path / "m.bin", fmap)
        assert run("warp", tmp_path / "m.bin", tmp_path / "s.json", "--coarse", factor, "--out", tmp_path / "o.bin") == 0
        assert np.array_equal(io.read_tensor(tmp_path / "o.bin"), warp_feature_map(fmap, spec, factor))


def test_warp_identity_png_is_pixel_equal(tmp_path):
    px = np.random.default_rng(1).integers(0, 256, (3, 20, 24))
    io.write_png(tmp_path / "in.png", px / 255.0)
    io.write_spec(tmp_path / "s.json", WarpSpec.identity(3, 4))
    assert run("warp", tmp_path / "in.png", tmp_path / "s.json", "--coarse", 2, "--out", tmp_path / "out.png") == 0
    assert np.array_equal(io.read_png(tmp_path / "out.png"), io.read_png(tmp_path / "in.png"))


def test_warp_translation_shifts_card(tmp_path):
    card = face_card(40, 41)
    io.write_png(tmp_path / "in.png", card)
    # tx = 0.1 normalized = 2 px at W = 41
    io.write_spec(tmp_path / "s.json", WarpSpec.from_keypoints([[KeypointWarp(k=(0, 0), rho=0.0, tx=0.1)]]))
    assert run("warp", tmp_path / "in.png", tmp_path / "s.json", "--out", tmp_path / "out.png") == 0
    src, out = io.read_png(tmp_path / "in.png"), io.read_png(tmp_path / "out.png")
    assert np.array_equal(out[:, :, :-2], src[:, :, 2:])


def test_warp_is_byte_identical_across_runs(tmp_path):
    rng = np.random.default_rng(2)
    io.write_tensor(tmp_path / "m.bin", smooth_image(rng, 2, 30, 30))
    io.write_spec(tmp_path / "s.json", WarpSpec.random(rng, 2, 5))
    for name in ("a.bin", "b.bin"):
        assert run("warp", tmp_path / "m.bin", tmp_path / "s.json", "--coarse", 2, "--out", tmp_path / name) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_warp_channel_mismatch_exits_2(tmp_path, capsys):
    io.write_tensor(tmp_path / "m.bin", np.zeros((2, 8, 8)))
    io.write_spec(tmp_path / "s.json", WarpSpec.identity(3, 1))
    assert run("warp", tmp_path / "m.bin", tmp_path / "s.json", "--out", tmp_path / "o.bin") == 2
    assert "channels" in capsys.readouterr().err


def test_viz(tmp_path, capsys):
    field = np.zeros((2, 10, 12, 2), np.float32)
    field[1, ..., 0] = 0.25
    io.write_tensor(tmp_path / "f.bin", field)
    assert run("viz", tmp_path / "f.bin", "--out", tmp_path / "v.png") == 0
    assert "max magnitude 0.25" in capsys.readouterr().out
    rgb = io.read_png(tmp_path / "v.png")
    assert rgb.shape == (3, 10, 24)
    assert np.all(rgb[:, :, :12] == 1.0) and np.all(rgb[:, :, 12:] == rgb[:, :1, 12:13])
    io.write_tensor(tmp_path / "bad.bin", np.zeros((4, 4, 3)))
    assert run("viz", tmp_path / "bad.bin", "--out", tmp_path / "x.png") == 2


def test_frontalize_identity(tmp_path):
    io.write_png(tmp_path / "face.png", face_card())
    tmp = io.read_landmarks(io.template_path())
    io.write_landmarks(tmp_path / "lm.txt", tmp)
    assert run("frontalize", tmp_path / "face.png", tmp_path / "lm.txt", "--out", tmp_path / "out.png") == 0
    assert np.array_equal(io.read_png(tmp_path / "out.png"), io.read_png(tmp_path / "face.png"))


def rotated_card(tmp_path, theta=0.35, s=1.1):
    """Write a rotated card and its transformed template landmarks; returns the pose transform."""
    card = face_card()
    c = SimilarityTransform(1.0, 0.0, 55.5, 55.5)
    pose = compose_similarity(c, compose_similarity(SimilarityTransform(s, theta, 2.0, -3.0), invert_similarity(c)))
    io.write_png(tmp_path / "rot.png", apply_similarity(card, pose))
    io.write_landmarks(tmp_path / "lm.txt", pose.apply_points(io.read_landmarks(io.template_path())))
    return card, pose


def test_frontalize_rotated_card(tmp_path):
    card, _ = rotated_card(tmp_path)
    assert run("frontalize", tmp_path / "rot.png", tmp_path / "lm.txt", io.template_path(),
               "--out", tmp_path / "front.png") == 0
    crop = (slice(None), slice(16, 96), slice(16, 96))
    assert psnr(io.read_png(tmp_path / "front.png")[crop], card[crop]) >= 35.0


def test_frontalize_emit_transform_then_restore(tmp_path, capsys):
    _, pose = rotated_card(tmp_path)
    assert run("frontalize", tmp_path / "rot.png", tmp_path / "lm.txt", "--out", tmp_path / "front.png",
               "--emit-transform", tmp_path / "T.txt") == 0
    T = io.parse_transform((tmp_path / "T.txt").read_text())
    inv = invert_similarity(pose)
    assert T.s == pytest.approx(inv.s, abs=1e-9) and T.theta == pytest.approx(inv.theta, abs=1e-9)
    assert "theta" in capsys.readouterr().out
    assert run("restore", tmp_path / "front.png", tmp_path / "T.txt", "--out", tmp_path / "back.png") == 0
    crop = (slice(None), slice(24, 88), slice(24, 88))
    assert psnr(io.read_png(tmp_path / "back.png")[crop], io.read_png(tmp_path / "rot.png")[crop]) >= 35.0


def test_frontalize_errors(tmp_path):
    io.write_png(tmp_path / "face.png", face_card())
    io.write_landmarks(tmp_path / "same.txt", np.full((5, 2), 50.0))
    assert run("frontalize", tmp_path / "face.png", tmp_path / "same.txt", "--out", tmp_path / "o.png") == 3
    io.write_landmarks(tmp_path / "three.txt", np.eye(3, 2) * 10)
    assert run("frontalize", tmp_path / "face.png", tmp_path / "three.txt", "--out", tmp_path / "o.png") == 2
    (tmp_path / "junk.txt").write_text("five\n")
    assert run("frontalize", tmp_path / "face.png", tmp_path / "junk.txt", "--out", tmp_path / "o.png") == 2


def test_parse_errors_exit_2(tmp_path):
    (tmp_path / "bad.json").write_text("{")
    assert run("field", tmp_path / "bad.json", "--grid", "8x8", "--out", tmp_path / "f.bin") == 2
    (tmp_path / "neg.json").write_text(json.dumps({"channels": 1, "keypoints": [[{"k": [0, 0], "rho": -1.0}]]}))
    assert run("field", tmp_path / "neg.json", "--grid", "8x8", "--out", tmp_path / "f.bin") == 2
    io.write_spec(tmp_path / "s.json", WarpSpec.identity(1, 1))
    assert run("field", tmp_path / "s.json", "--grid", "1x8", "--out", tmp_path / "f.bin") == 2
    (tmp_path / "t.bin").write_bytes(b"NOPE" + bytes(12))
    assert run("viz", tmp_path / "t.bin", "--out", tmp_path / "v.png") == 2
    with pytest.raises(SystemExit) as exc:
        run("field", tmp_path / "s.json", "--grid", "eight", "--out", tmp_path / "f.bin")
    assert exc.value.code == 2


def gradcheck(tmp_path, capsys, *extra):
    (tmp_path / "cfg.json").write_text(json.dumps(SMALL_GRADCHECK))
    code = run("gradcheck", "--seed", 3, "--config", tmp_path / "cfg.json", *extra)
    out = capsys.readouterr()
    return code, json.loads(out.out), out.err


def test_gradcheck_passes_and_is_deterministic(tmp_path, capsys):
    code, doc, err = gradcheck(tmp_path, capsys)
    assert code == 0 and doc["pass"]
    assert doc["num_parameters"] == 2 * 3 * 8 and "theta" in err
    code2, doc2, _ = gradcheck(tmp_path, capsys)
    assert doc2 == doc


def test_gradcheck_injected_error_exits_1(tmp_path, capsys):
    code, doc, err = gradcheck(tmp_path, capsys, "--inject-sign-error", "sy")
    assert code == 1 and not doc["pass"]
    assert "failed for: sy" in err


def test_gradcheck_rejects_unknown_config_key(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"chanels": 2}))
    assert run("gradcheck", "--config", tmp_path / "cfg.json") == 2


def test_bench_small(tmp_path, capsys):
    assert run("bench", "--grid", 32, "--channels", 2, "--keypoints", 3, "--coarse", 2, "--reps", 3,
               "--warmup", 1, "--out-dir", tmp_path / "rep") == 0
    out = capsys.readouterr().out
    assert "observed ordering" in out and "reference global_affine > local_affine > dense_flow" in out
    for name in ("bench.json", "bench.csv", "bench.png"):
        assert (tmp_path / "rep" / name).exists()
    doc = json.loads((tmp_path / "rep" / "bench.json").read_text())
    assert {r["strategy"] for r in doc["results"]} == {"global_affine", "local_affine", "dense_flow"}
    assert all(math.isfinite(r["fps_median"]) and r["fps_median"] > 0 for r in doc["results"])
