"""Image and probability-map I/O, normalization, and Gaussian smoothing.

Supported on-disk formats:
  * MRC2014 subset: single 2D section, modes 0 (int8), 1 (int16), 2 (float32),
    6 (uint16), little-endian. Pixel size is carried as xlen/mx.
  * PGM (P5): 8-bit, or 16-bit big-endian per the netpbm convention.
  * PNG: 8/16-bit grayscale via Pillow.
  * PMAP: probability-map wire format. Magic "PMAP", u16 version = 1,
    u32 width, u32 height, then width*height little-endian float32, row-major.
"""

from __future__ import annotations

import io
import os
import struct
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from .errors import CorruptionError, FormatError

_MRC_HEADER_SIZE = 1024
_MRC_MODES = {0: np.int8, 1: np.dtype("<i2"), 2: np.dtype("<f4"),
              6: np.dtype("<u2")}


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image; data is float64, shape (height, width)."""

    width: int
    height: int
    data: np.ndarray
    id: str = ""
    pixel_size: float | None = None  # physical units per pixel, from MRC header

    def __post_init__(self):
        if self.data.shape != (self.height, self.width):
            raise ValueError(
                f"data shape {self.data.shape} does not match "
                f"(height, width) = ({self.height}, {self.width})"
            )

    @classmethod
    def from_array(cls, data: np.ndarray, id: str = "",
                   pixel_size: float | None = None) -> "GrayImage":
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected 2D array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr,
                   id=id, pixel_size=pixel_size)


@dataclass(frozen=True)
class ProbabilityMap:
    """Per-pixel probabilities in [0, 1]; data is float64, shape (h, w)."""

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.height, self.width):
            raise ValueError(
                f"data shape {self.data.shape} does not match "
                f"(height, width) = ({self.height}, {self.width})"
            )
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("probability values must lie in [0, 1]")

    @classmethod
    def from_array(cls, data: np.ndarray) -> "ProbabilityMap":
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"expected 2D array, got shape {arr.shape}")
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr)


@dataclass(frozen=True)
class SmoothingParam:
    """Gaussian blur width in pixels; must be finite and positive."""

    sigma: float

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be finite and positive, got {self.sigma}")


def atomic_write_bytes(path: str | os.PathLike, payload: bytes) -> None:
    """Write bytes to path via a temp file + rename so readers never see
    a partial file."""
    path = os.fspath(path)
    dirname = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Loading


def load_image(path: str | os.PathLike) -> GrayImage:
    """Load an MRC / PGM / grayscale-PNG file into a GrayImage.

    Negative MRC float pixels are clamped to 0 with a warning carrying the
    count. Unknown magic bytes raise FormatError; short payloads raise
    CorruptionError.
    """
    path = os.fspath(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    image_id = os.path.splitext(os.path.basename(path))[0]
    if raw[:2] == b"P5":
        return _parse_pgm(raw, image_id)
    if raw[:8] == b"\x89PNG\r\n\x1a\n":
        return _parse_png(raw, image_id)
    if len(raw) >= 212 and raw[208:212] == b"MAP ":
        return _parse_mrc(raw, image_id)
    raise FormatError(f"unrecognized image format (file begins {raw[:4]!r})")


def _parse_pgm(raw: bytes, image_id: str) -> GrayImage:
    pos = 0

    def next_token():
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos:pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptionError("PGM header ended prematurely")
        return raw[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise FormatError(f"not a binary PGM (magic {magic!r})")
    try:
        width = int(next_token())
        height = int(next_token())
        maxval = int(next_token())
    except ValueError as exc:
        raise CorruptionError(f"bad PGM header field: {exc}") from exc
    if not (0 < maxval < 65536):
        raise FormatError(f"PGM maxval {maxval} out of range")
    pos += 1  # single whitespace byte separates header from raster
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    need = width * height * dtype.itemsize
    body = raw[pos:pos + need]
    if len(body) < need:
        raise CorruptionError(
            f"PGM payload truncated: need {need} bytes, have {len(body)}"
        )
    data = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return GrayImage(width=width, height=height,
                     data=data.astype(np.float64), id=image_id)


def _parse_png(raw: bytes, image_id: str) -> GrayImage:
    try:
        img = PILImage.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise CorruptionError(f"failed to decode PNG: {exc}") from exc
    if img.mode not in ("L", "I", "I;16", "I;16B"):
        raise FormatError(f"PNG must be 8/16-bit grayscale, mode is {img.mode}")
    data = np.asarray(img, dtype=np.float64)
    return GrayImage(width=data.shape[1], height=data.shape[0],
                     data=data, id=image_id)


def _parse_mrc(raw: bytes, image_id: str) -> GrayImage:
    if len(raw) < _MRC_HEADER_SIZE:
        raise CorruptionError("MRC header truncated")
    nx, ny, nz, mode = struct.unpack_from("<4i", raw, 0)
    mx, _, mz = struct.unpack_from("<3i", raw, 28)
    xlen, _, zlen = struct.unpack_from("<3f", raw, 40)
    nsymbt, = struct.unpack_from("<i", raw, 92)
    machst = raw[212:216]
    if machst[:2] == b"\x11\x11":
        raise FormatError("big-endian MRC files are not supported")
    if nz != 1:
        raise FormatError(f"MRC stacks are not supported (nz = {nz})")
    if mode not in _MRC_MODES:
        raise FormatError(f"unsupported MRC mode {mode}")
    if nx <= 0 or ny <= 0:
        raise CorruptionError(f"invalid MRC dimensions {nx} x {ny}")
    dtype = np.dtype(_MRC_MODES[mode])
    offset = _MRC_HEADER_SIZE + max(nsymbt, 0)
    need = nx * ny * dtype.itemsize
    body = raw[offset:offset + need]
    if len(body) < need:
        raise CorruptionError(
            f"MRC payload truncated: need {need} bytes, have {len(body)}"
        )
    data = np.frombuffer(body, dtype=dtype).reshape(ny, nx).astype(np.float64)
    if not np.isfinite(data).all():
        raise CorruptionError("MRC payload contains non-finite values")
    if mode == 2:
        negatives = int(np.count_nonzero(data < 0))
        if negatives:
            warnings.warn(
                f"clamped {negatives} negative float pixels to 0 in {image_id}",
                stacklevel=2,
            )
            data = np.maximum(data, 0.0)
    pixel_size = None
    if mz > 0 and zlen > 0:
        pixel_size = float(zlen) / float(mz)
    elif mx > 0 and xlen > 0:
        pixel_size = float(xlen) / float(mx)
    return GrayImage(width=nx, height=ny, data=data, id=image_id,
                     pixel_size=pixel_size)


# ---------------------------------------------------------------------------
# Saving


def save_image(img: GrayImage, path: str | os.PathLike) -> None:
    """Write a GrayImage; format chosen by extension (.mrc, .pgm, .png)."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".mrc":
        payload = _encode_mrc(img)
    elif ext == ".pgm":
        payload = _encode_pgm(img)
    elif ext == ".png":
        payload = _encode_png(img)
    else:
        raise FormatError(f"cannot infer image format from extension {ext!r}")
    atomic_write_bytes(path, payload)


def _encode_mrc(img: GrayImage) -> bytes:
    data32 = img.data.astype("<f4")
    header = bytearray(_MRC_HEADER_SIZE)
    struct.pack_into("<4i", header, 0, img.width, img.height, 1, 2)
    struct.pack_into("<3i", header, 16, 0, 0, 0)
    struct.pack_into("<3i", header, 28, img.width, img.height, 1)
    px = img.pixel_size if img.pixel_size is not None else 1.0
    # quantize before deriving the cell so a reloaded image re-encodes to
    # the same bytes (the parser reads the spacing back from the z word)
    px = float(np.float32(px))
    struct.pack_into("<3f", header, 40, px * img.width, px * img.height, px)
    struct.pack_into("<3f", header, 52, 90.0, 90.0, 90.0)
    struct.pack_into("<3i", header, 64, 1, 2, 3)
    struct.pack_into("<3f", header, 76, float(data32.min()), float(data32.max()),
                     float(data32.mean(dtype=np.float64)))
    struct.pack_into("<2i", header, 88, 0, 0)
    header[208:212] = b"MAP "
    header[212:216] = b"\x44\x44\x00\x00"
    struct.pack_into("<f", header, 216, float(data32.std(dtype=np.float64)))
    struct.pack_into("<i", header, 220, 0)
    return bytes(header) + data32.tobytes()


def _int_pixels(img: GrayImage, limit: int) -> np.ndarray:
    rounded = np.rint(img.data)
    if not np.allclose(img.data, rounded, atol=1e-9):
        raise ValueError("integer image format requires integral pixel values")
    if rounded.min() < 0 or rounded.max() > limit:
        raise ValueError(
            f"pixel values outside [0, {limit}] cannot be stored in this format"
        )
    return rounded


def _encode_pgm(img: GrayImage) -> bytes:
    if img.data.size and img.data.max() > 255:
        pixels = _int_pixels(img, 65535).astype(">u2")
        maxval = 65535
    else:
        pixels = _int_pixels(img, 255).astype(np.uint8)
        maxval = 255
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + pixels.tobytes()


def _encode_png(img: GrayImage) -> bytes:
    if img.data.size and img.data.max() > 255:
        pixels = _int_pixels(img, 65535).astype(np.uint16)
        pil = PILImage.fromarray(pixels, mode="I;16")
    else:
        pixels = _int_pixels(img, 255).astype(np.uint8)
        pil = PILImage.fromarray(pixels, mode="L")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Probability maps


def save_pmap(pmap: ProbabilityMap, path: str | os.PathLike) -> None:
    header = b"PMAP" + struct.pack("<HII", 1, pmap.width, pmap.height)
    payload = header + pmap.data.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)


def load_pmap(path: str | os.PathLike) -> ProbabilityMap:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != b"PMAP":
        raise FormatError(f"not a PMAP file (file begins {raw[:4]!r})")
    if len(raw) < 14:
        raise CorruptionError("PMAP header truncated")
    version, width, height = struct.unpack_from("<HII", raw, 4)
    if version != 1:
        raise FormatError(f"unsupported PMAP version {version}")
    need = width * height * 4
    body = raw[14:14 + need]
    if len(body) < need:
        raise CorruptionError(
            f"PMAP payload truncated: need {need} bytes, have {len(body)}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(height, width)
    if not np.isfinite(data).all():
        raise CorruptionError("PMAP payload contains non-finite values")
    if data.size and (data.min() < 0.0 or data.max() > 1.0):
        raise CorruptionError("PMAP values must lie in [0, 1]")
    return ProbabilityMap(width=int(width), height=int(height),
                          data=data.astype(np.float64))


# ---------------------------------------------------------------------------
# Normalization and smoothing


def normalize_array(data: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Z-score `data` with moments taken over `mask` (whole array if None).

    Population standard deviation; sigma below 1e-12 yields an all-zero
    result so blank crops flow through downstream stages.
    """
    data = np.asarray(data, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != data.shape:
            raise ValueError(
                f"mask shape {mask.shape} does not match data shape {data.shape}"
            )
        sample = data[mask]
        if sample.size == 0:
            raise ValueError("mask selects no pixels")
    else:
        sample = data.reshape(-1)
        if sample.size == 0:
            raise ValueError("cannot normalize an empty image")
    mu = float(sample.mean())
    sigma = float(sample.std())
    if sigma < 1e-12:
        return np.zeros_like(data)
    return (data - mu) / sigma


def normalize(img: GrayImage, mask: np.ndarray | None = None) -> GrayImage:
    """Z-score an image; see normalize_array."""
    out = normalize_array(img.data, mask)
    return GrayImage(width=img.width, height=img.height, data=out,
                     id=img.id, pixel_size=img.pixel_size)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized discrete Gaussian of radius ceil(3*sigma)."""
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    return kernel / kernel.sum()


def blur_array(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding at the borders."""
    if not (np.isfinite(sigma) and sigma > 0):
        raise ValueError(f"sigma must be finite and positive, got {sigma}")
    kernel = gaussian_kernel(float(sigma))
    out = ndimage.correlate1d(np.asarray(data, dtype=np.float64), kernel,
                              axis=0, mode="reflect")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="reflect")
    return out


def gaussian_blur(obj, s):
    """Blur a GrayImage or ProbabilityMap; returns the same type.

    `s` is a SmoothingParam or a bare sigma in pixels.
    """
    sigma = s.sigma if isinstance(s, SmoothingParam) else float(s)
    if isinstance(obj, GrayImage):
        return GrayImage(width=obj.width, height=obj.height,
                         data=blur_array(obj.data, sigma), id=obj.id,
                         pixel_size=obj.pixel_size)
    if isinstance(obj, ProbabilityMap):
        # clip away one-ulp excursions so the [0, 1] invariant holds
        blurred = np.clip(blur_array(obj.data, sigma), 0.0, 1.0)
        return ProbabilityMap(width=obj.width, height=obj.height, data=blurred)
    raise TypeError(f"expected GrayImage or ProbabilityMap, got {type(obj)!r}")
