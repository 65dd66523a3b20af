"""Pixel buffers and binary PNM (P5/P6) encoding.

Every raster in the pipeline is an :class:`Image`: a read-only ``uint8``
numpy array plus a pixel model. Gray8 and Binary images are ``(h, w)``,
Rgb8 images are ``(h, w, 3)``. Binary images hold 0/1, never 0/255.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, PNMDecodeError


class Model(enum.Enum):
    GRAY8 = "gray8"
    BINARY = "binary"
    RGB8 = "rgb8"

    @property
    def channels(self) -> int:
        return 3 if self is Model.RGB8 else 1


@dataclass(frozen=True, eq=False)
class Image:
    pixels: np.ndarray
    model: Model

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            if px.size and (px.min() < 0 or px.max() > 255):
                raise ContractError("pixel values must lie in 0..255")
            px = px.astype(np.uint8)
        want_ndim = 3 if self.model is Model.RGB8 else 2
        if px.ndim != want_ndim or (want_ndim == 3 and px.shape[2] != 3):
            raise ContractError(f"bad shape {px.shape} for model {self.model.value}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ContractError("image must be at least 1x1")
        if self.model is Model.BINARY and px.size and px.max() > 1:
            raise ContractError("binary image samples must be 0 or 1")
        if px.flags.writeable or not px.flags.c_contiguous:
            px = np.ascontiguousarray(px).copy()
            px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @classmethod
    def gray(cls, pixels) -> Image:
        return cls(np.asarray(pixels), Model.GRAY8)

    @classmethod
    def binary(cls, pixels) -> Image:
        return cls(np.asarray(pixels), Model.BINARY)

    @classmethod
    def rgb(cls, pixels) -> Image:
        return cls(np.asarray(pixels), Model.RGB8)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    @property
    def data(self) -> bytes:
        """Row-major samples, one byte per channel, no padding."""
        return self.pixels.tobytes()

    def __eq__(self, other):
        if not isinstance(other, Image):
            return NotImplemented
        return (self.model is other.model and self.pixels.shape == other.pixels.shape
                and bool(np.array_equal(self.pixels, other.pixels)))

    def __repr__(self):
        return f"Image({self.width}x{self.height}, {self.model.value})"


def require_model(img: Image, *models: Model, op: str = "operation") -> None:
    if img.model not in models:
        names = "/".join(m.value for m in models)
        raise ContractError(f"{op} expects {names} input, got {img.model.value}")


def require_same_shape(a: Image, b: Image, op: str = "operation") -> None:
    if a.shape != b.shape:
        raise ContractError(
            f"{op}: dimension mismatch {a.width}x{a.height} vs {b.width}x{b.height}")


_WHITESPACE = b" \t\n\r\v\f"


def _header_token(buf: bytes, pos: int) -> tuple[bytes, int, int]:
    """Return (token, token_start, position after token), skipping blanks and comments."""
    n = len(buf)
    while pos < n:
        if buf[pos] == ord("#"):
            while pos < n and buf[pos] not in b"\n\r":
                pos += 1
        elif buf[pos] in _WHITESPACE:
            pos += 1
        else:
            break
    start = pos
    while pos < n and buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
        pos += 1
    if start == pos:
        raise PNMDecodeError("unexpected end of header", start)
    return buf[start:pos], start, pos


def decode_pnm(buf: bytes) -> Image:
    """Decode a binary P5 (gray) or P6 (rgb) anymap with maxval 255.

    Bytes following the declared raster are ignored and never read.
    """
    buf = bytes(buf)
    if buf[:2] not in (b"P5", b"P6"):
        raise PNMDecodeError(f"bad magic {buf[:2]!r}, expected P5 or P6", 0)
    model = Model.GRAY8 if buf[:2] == b"P5" else Model.RGB8
    pos = 2
    if pos >= len(buf) or buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
        raise PNMDecodeError("missing whitespace after magic", pos)

    fields = []
    for name in ("width", "height", "maxval"):
        tok, start, pos = _header_token(buf, pos)
        if not tok.isdigit():
            raise PNMDecodeError(f"{name} is not a decimal integer: {tok!r}", start)
        fields.append((int(tok), start))
    (width, w_at), (height, h_at), (maxval, m_at) = fields
    if width < 1:
        raise PNMDecodeError("width must be positive", w_at)
    if height < 1:
        raise PNMDecodeError("height must be positive", h_at)
    if maxval != 255:
        raise PNMDecodeError(f"maxval must be 255, got {maxval}", m_at)
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise PNMDecodeError("missing single whitespace byte before raster", pos)
    pos += 1

    size = width * height * model.channels
    avail = len(buf) - pos
    if avail < size:
        raise PNMDecodeError(
            f"truncated raster: {avail} of {size} bytes present", pos + avail)
    raster = np.frombuffer(buf, dtype=np.uint8, count=size, offset=pos)
    shape = (height, width, 3) if model is Model.RGB8 else (height, width)
    return Image(raster.reshape(shape), model)


def encode_pnm(img: Image) -> bytes:
    require_model(img, Model.GRAY8, Model.RGB8, op="encode_pnm")
    magic = "P5" if img.model is Model.GRAY8 else "P6"
    header = f"{magic}\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.data


def read_pnm(path: str | Path) -> Image:
    return decode_pnm(Path(path).read_bytes())


def write_pnm(path: str | Path, img: Image) -> None:
    Path(path).write_bytes(encode_pnm(img))


def to_grayscale(img: Image) -> Image:
    """BT.601 luma, ``round(0.299 R + 0.587 G + 0.114 B)`` with halves rounded up."""
    require_model(img, Model.RGB8, op="to_grayscale")
    px = img.pixels.astype(np.uint32)
    acc = 299 * px[..., 0] + 587 * px[..., 1] + 114 * px[..., 2]
    # integer weights sum to 1000 so the result never exceeds 255
    return Image((acc + 500) // 1000, Model.GRAY8)


def widen_binary(img: Image) -> Image:
    require_model(img, Model.BINARY, op="widen_binary")
    return Image(img.pixels * np.uint8(255), Model.GRAY8)


def gray_to_rgb(img: Image) -> Image:
    require_model(img, Model.GRAY8, op="gray_to_rgb")
    return Image(np.repeat(img.pixels[:, :, None], 3, axis=2), Model.RGB8)
