"""Image file formats and distortion rendering.

Two formats cover the pipeline:

* PGM (P5, binary) at maxval 255 or 65535 for viewable luminance images.
  Loading maps integer value v to v / maxval in [0, 1]; saving clips to
  [0, 1] and rounds half to even.  16-bit payloads are big-endian per the
  Netpbm convention.
* RAW-F32: little-endian float32 payload with a JSON sidecar
  ``{height, width, channels, order, endianness}`` at ``<path>.json``.
  This is the storage for signed, unclipped distortion vectors, which PGM
  cannot represent.

Internal luminance is normalized to [0, 1]; display calibration (e.g. a
5-300 cd/m^2 range at gamma 2.4) is carried as metadata only and never
enters the computation.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import InputDomainError, ParameterError, ParseError
from .grids import as_grid2, l2_norm

__all__ = [
    "load_image",
    "save_image",
    "load_pgm",
    "save_pgm",
    "load_raw_f32",
    "save_raw_f32",
    "render_distorted",
    "render_gallery",
    "GALLERY_ALPHA_MAX",
    "GALLERY_ALPHA_MIN",
    "GAMMA_NOTE",
]

# Gallery rendering scales the most-noticeable distortion by 4 and the
# least-noticeable by 30 so both are visible on a display.
GALLERY_ALPHA_MAX = 4.0
GALLERY_ALPHA_MIN = 30.0

# carried in render metadata; calibration never enters the computation
GAMMA_NOTE = (
    "luminance normalized to [0, 1]; intended display calibration "
    "(e.g. 5-300 cd/m^2 range, gamma 2.4) is presentation metadata only"
)


def _read_header_token(data: bytes, pos: int):
    """Next whitespace-delimited token, skipping '#' comments; returns (token, new_pos)."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < n and data[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise ParseError("unexpected end of header", offset=pos)
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    return data[start:pos], pos


def load_pgm(path) -> np.ndarray:
    """Load a binary PGM (P5) file into a [0, 1] luminance grid."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P5":
        raise ParseError(f"not a P5 PGM file (magic {data[:2]!r})", offset=0)
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_header_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise ParseError(f"non-numeric header field {token!r}", offset=pos) from None
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ParseError(f"bad dimensions {width}x{height}", offset=pos)
    if maxval not in (255, 65535):
        raise ParseError(f"unsupported maxval {maxval} (expected 255 or 65535)", offset=pos)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ParseError("missing single whitespace after maxval", offset=pos)
    pos += 1
    itemsize = 1 if maxval == 255 else 2
    need = width * height * itemsize
    payload = data[pos : pos + need]
    if len(payload) < need:
        raise ParseError(
            f"truncated payload: need {need} bytes, have {len(payload)}",
            offset=pos + len(payload),
        )
    dtype = np.uint8 if maxval == 255 else np.dtype(">u2")
    values = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return values.astype(np.float64) / maxval


def save_pgm(grid, path, maxval: int = 255) -> None:
    """Save a grid as binary PGM; values clip to [0, 1] then round half-even."""
    if maxval not in (255, 65535):
        raise ParameterError(f"maxval must be 255 or 65535, got {maxval}")
    g = as_grid2(grid, "image")
    q = np.rint(np.clip(g, 0.0, 1.0) * maxval)
    data = q.astype(np.uint8 if maxval == 255 else np.dtype(">u2"))
    header = f"P5\n{g.shape[1]} {g.shape[0]}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes())


def _sidecar_path(path) -> str:
    return f"{path}.json"


def save_raw_f32(array, path) -> None:
    """Save float data as little-endian float32 with a JSON sidecar.

    Accepts 2-D or 3-D arrays; values are cast to float32 (the round-trip
    is bit-exact for data already representable in single precision).
    """
    a = np.asarray(array, dtype=np.float64)
    if a.ndim == 2:
        channels, (height, width) = 1, a.shape
    elif a.ndim == 3:
        channels, height, width = a.shape
    else:
        raise ParameterError(f"RAW-F32 supports 2-D or 3-D arrays, got ndim {a.ndim}")
    if not np.all(np.isfinite(a)):
        raise InputDomainError("refusing to save non-finite data")
    with open(path, "wb") as fh:
        fh.write(a.astype("<f4").tobytes())
    sidecar = {
        "height": int(height),
        "width": int(width),
        "channels": int(channels),
        "order": "row-major",
        "endianness": "little",
    }
    with open(_sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")


def load_raw_f32(path) -> np.ndarray:
    """Load a RAW-F32 file using its JSON sidecar; returns float64 data."""
    sidecar_path = _sidecar_path(path)
    if not os.path.exists(sidecar_path):
        raise ParseError(f"missing sidecar {sidecar_path}")
    with open(sidecar_path, "r") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad sidecar JSON: {exc}") from None
    for key in ("height", "width", "channels", "order", "endianness"):
        if key not in meta:
            raise ParseError(f"sidecar missing field {key!r}")
    if meta["order"] != "row-major" or meta["endianness"] != "little":
        raise ParseError("unsupported RAW-F32 layout in sidecar")
    height, width, channels = int(meta["height"]), int(meta["width"]), int(meta["channels"])
    with open(path, "rb") as fh:
        payload = fh.read()
    need = height * width * channels * 4
    if len(payload) != need:
        raise ParseError(
            f"payload size {len(payload)} != expected {need}", offset=min(len(payload), need)
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    if channels == 1:
        return values.reshape(height, width)
    return values.reshape(channels, height, width)


def load_image(path) -> np.ndarray:
    """Load a 2-D luminance grid, dispatching on file content/extension."""
    if str(path).endswith((".f32", ".raw")):
        data = load_raw_f32(path)
        if data.ndim == 3:
            if data.shape[0] != 1:
                raise ParseError(f"expected single-channel image, got {data.shape[0]} channels")
            data = data[0]
        return data
    return load_pgm(path)


def save_image(grid, path, fmt: str = "pgm8") -> None:
    """Save a grid as 'pgm8', 'pgm16' or 'f32'."""
    if fmt == "pgm8":
        save_pgm(grid, path, maxval=255)
    elif fmt == "pgm16":
        save_pgm(grid, path, maxval=65535)
    elif fmt == "f32":
        save_raw_f32(grid, path)
    else:
        raise ParameterError(f"unknown image format {fmt!r}")


def render_distorted(x, e, alpha: float, out_base: str) -> dict:
    """Write x + alpha*e as a clipped PGM plus the raw unclipped RAW-F32.

    Returns (and writes alongside) metadata including the exact count of
    pixels that fell outside [0, 1] before clipping.
    """
    x = as_grid2(x, "image")
    e = as_grid2(e, "direction")
    n = l2_norm(e)
    if abs(n - 1.0) > 1e-6:
        raise ParameterError(f"direction must be unit norm, got {n}")
    distorted = x + float(alpha) * e
    clipped_count = int(np.sum((distorted < 0.0) | (distorted > 1.0)))
    save_pgm(distorted, f"{out_base}.pgm", maxval=255)
    save_raw_f32(distorted, f"{out_base}.f32")
    meta = {
        "alpha": float(alpha),
        "height": int(x.shape[0]),
        "width": int(x.shape[1]),
        "clipped_pixels": clipped_count,
        "gamma_note": GAMMA_NOTE,
    }
    with open(f"{out_base}_meta.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    return meta


def render_gallery(
    x,
    e_max,
    e_min,
    out_dir: str,
    alpha_max: float = GALLERY_ALPHA_MAX,
    alpha_min: float = GALLERY_ALPHA_MIN,
) -> dict:
    """Emit the six gallery payload files for one image.

    For each extremal direction: the isolated scaled distortion (rendered
    around mid gray), the distorted image, and the raw unclipped sum.
    Sidecars accompany the two RAW-F32 files; one metadata JSON summarizes
    clipping counts.
    """
    x = as_grid2(x, "image")
    meta = {"files": [], "clipped_pixels": {}, "gamma_note": GAMMA_NOTE}
    for tag, e, alpha in (("max", e_max, alpha_max), ("min", e_min, alpha_min)):
        e = as_grid2(e, f"e_{tag}")
        scaled = float(alpha) * e
        distorted = x + scaled
        isolated = 0.5 + scaled
        save_pgm(isolated, os.path.join(out_dir, f"distortion_{tag}_isolated.pgm"))
        save_pgm(distorted, os.path.join(out_dir, f"distortion_{tag}_superimposed.pgm"))
        save_raw_f32(distorted, os.path.join(out_dir, f"distortion_{tag}_raw.f32"))
        meta["files"] += [
            f"distortion_{tag}_isolated.pgm",
            f"distortion_{tag}_superimposed.pgm",
            f"distortion_{tag}_raw.f32",
        ]
        meta["clipped_pixels"][tag] = int(np.sum((distorted < 0.0) | (distorted > 1.0)))
    with open(os.path.join(out_dir, "gallery_meta.json"), "w") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    return meta
