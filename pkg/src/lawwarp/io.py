"""File formats: tensor files, PNG images, landmark lists, warp specs, transforms.

Tensor file layout (all little-endian)::

    b"LAWT" | u16 version (=1) | u16 ndim | ndim x u32 dims | float32 payload (row-major)
"""

from __future__ import annotations

import json
import struct
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from .frontalize import SimilarityTransform
from .warp import WarpSpec

MAGIC = b"LAWT"
VERSION = 1
_HEADER = struct.Struct("<4sHH")


class FormatError(ValueError):
    pass


def encode_tensor(a) -> bytes:
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("tensor payload must be finite")
    if a.ndim > 0xFFFF or any(d > 0xFFFFFFFF for d in a.shape):
        raise ValueError(f"shape {a.shape} does not fit the header")
    header = _HEADER.pack(MAGIC, VERSION, a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return header + np.ascontiguousarray(a, dtype="<f4").tobytes()


def decode_tensor(buf: bytes) -> np.ndarray:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated tensor header")
    magic, version, ndim = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported tensor version {version}")
    off = _HEADER.size + 4 * ndim
    if len(buf) < off:
        raise FormatError("truncated tensor dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, _HEADER.size)
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - off != 4 * count:
        raise FormatError(f"payload is {len(buf) - off} bytes, dims {dims} need {4 * count}")
    return np.frombuffer(buf, dtype="<f4", offset=off).astype(np.float32).reshape(dims)


def write_tensor(path, a):
    Path(path).write_bytes(encode_tensor(a))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


def read_png(path) -> np.ndarray:
    """8-bit PNG as a ``(C, H, W)`` float32 map in ``[0, 1]``; gray -> 1 channel, colour -> 3."""
    with Image.open(path) as im:
        if im.mode in ("L", "1", "LA"):
            im = im.convert("L")
        elif im.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr"):
            im = im.convert("RGB")
        else:
            raise FormatError(f"unsupported image mode {im.mode!r}")
        a = np.asarray(im, dtype=np.uint8)
    if a.ndim == 2:
        a = a[None]
    else:
        a = a.transpose(2, 0, 1)
    return a.astype(np.float32) / np.float32(255.0)


def to_uint8(fmap) -> np.ndarray:
    return np.clip(np.rint(np.asarray(fmap, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, fmap):
    fmap = np.asarray(fmap)
    if fmap.ndim == 2:
        fmap = fmap[None]
    if fmap.shape[0] not in (1, 3):
        raise ValueError(f"PNG output needs 1 or 3 channels, got {fmap.shape[0]}")
    px = to_uint8(fmap)
    im = Image.fromarray(px[0], "L") if px.shape[0] == 1 else Image.fromarray(px.transpose(1, 2, 0), "RGB")
    im.save(path, format="PNG")


def write_rgb_png(path, rgb: np.ndarray):
    """Write an ``(H, W, 3)`` uint8 array."""
    Image.fromarray(np.asarray(rgb, dtype=np.uint8), "RGB").save(path, format="PNG")


def is_png(path) -> bool:
    with open(path, "rb") as f:
        return f.read(8) == b"\x89PNG\r\n\x1a\n"


def _data_lines(text: str):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line


def parse_landmarks(text: str) -> np.ndarray:
    lines = list(_data_lines(text))
    if not lines:
        raise FormatError("empty landmark file")
    try:
        count = int(lines[0])
        pts = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"malformed landmark file: {exc}") from exc
    if count < 2 or pts.shape != (count, 2):
        raise FormatError(f"expected {count} lines of 'x y', got shape {pts.shape}")
    return pts


def format_landmarks(pts) -> str:
    pts = np.asarray(pts, dtype=np.float64)
    return f"{len(pts)}\n" + "".join(f"{x!r} {y!r}\n" for x, y in pts.tolist())


def read_landmarks(path) -> np.ndarray:
    return parse_landmarks(Path(path).read_text())


def write_landmarks(path, pts):
    Path(path).write_text(format_landmarks(pts))


def template_path() -> Path:
    """The bundled 5-point frontal template (pixel coordinates in a 112x112 frame)."""
    return Path(str(resources.files("lawwarp") / "data" / "frontal_template.txt"))


def read_spec(path) -> WarpSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return WarpSpec.from_dict(doc)


def write_spec(path, spec: WarpSpec):
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


def format_transform(T: SimilarityTransform) -> str:
    return "".join(f"{k} {v!r}\n" for k, v in zip(("s", "theta", "tx", "ty"), T.as_tuple()))


def parse_transform(text: str) -> SimilarityTransform:
    vals = {}
    for line in _data_lines(text):
        key, _, v = line.partition(" ")
        vals[key] = float(v)
    try:
        return SimilarityTransform(vals["s"], vals["theta"], vals["tx"], vals["ty"])
    except KeyError as exc:
        raise FormatError(f"transform file is missing {exc}") from exc
