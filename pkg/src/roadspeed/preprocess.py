"""Raw frame to clean binary foreground.

Road masking, background modelling and subtraction, thresholding,
3x3 median/mean filtering and binary morphology.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .imgcore import Image, Model, read_pnm, require_model, require_same_shape, widen_binary

DEFAULT_THRESHOLD = 40
DEFAULT_BACKGROUND_FRAMES = 25


@dataclass(frozen=True)
class PixelPoint:
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class RoadMask:
    mask: Image
    source: str = "supplied"

    def __post_init__(self):
        require_model(self.mask, Model.BINARY, op="RoadMask")
        if not self.mask.pixels.any():
            raise ConfigError("road mask contains no drivable pixel")

    @classmethod
    def from_image(cls, path: str | Path) -> RoadMask:
        img = read_pnm(path)
        require_model(img, Model.GRAY8, op="RoadMask.from_image")
        return cls(Image((img.pixels != 0).astype(np.uint8), Model.BINARY), source=str(path))

    def to_image(self) -> Image:
        return widen_binary(self.mask)

    def __eq__(self, other):
        if not isinstance(other, RoadMask):
            return NotImplemented
        return self.mask == other.mask


def rasterize_mask(vertices: Sequence, width: int, height: int) -> RoadMask:
    """Even-odd scanline fill of a polygon.

    A pixel is set iff its center ``(x + 0.5, y + 0.5)`` lies inside. Vertices
    are continuous coordinates, so ``(0, 0)-(width, height)`` covers the frame.
    """
    pts = [(float(v.x), float(v.y)) if isinstance(v, PixelPoint) else (float(v[0]), float(v[1]))
           for v in vertices]
    if len(pts) < 3:
        raise ConfigError(f"mask polygon needs at least 3 vertices, got {len(pts)}")
    for x, y in pts:
        if not (0 <= x <= width and 0 <= y <= height):
            raise ConfigError(f"mask vertex ({x:g},{y:g}) outside {width}x{height} frame")

    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    xs2, ys2 = np.roll(xs, -1), np.roll(ys, -1)
    centers_x = np.arange(width) + 0.5
    out = np.zeros((height, width), dtype=np.uint8)
    for row in range(height):
        yc = row + 0.5
        crosses = (ys > yc) != (ys2 > yc)
        if not crosses.any():
            continue
        x0, y0, x1, y1 = xs[crosses], ys[crosses], xs2[crosses], ys2[crosses]
        xi = np.sort(x0 + (yc - y0) * (x1 - x0) / (y1 - y0))
        # number of crossings strictly right of each pixel center
        right = len(xi) - np.searchsorted(xi, centers_x, side="right")
        out[row] = right & 1
    return RoadMask(Image(out, Model.BINARY), source="polygon")


def apply_mask(frame: Image, mask: RoadMask) -> Image:
    require_model(frame, Model.GRAY8, op="apply_mask")
    require_same_shape(frame, mask.mask, op="apply_mask")
    return Image(frame.pixels * mask.mask.pixels, Model.GRAY8)


@dataclass(frozen=True)
class BackgroundModel:
    background: Image
    built_from: int | str = "supplied"


def build_background(frames: Iterable[Image], count: int = DEFAULT_BACKGROUND_FRAMES) -> BackgroundModel:
    """Per-pixel temporal median of the first ``count`` frames (lower median when even)."""
    if count < 1:
        raise ContractError("background frame count must be >= 1")
    stack = []
    for img in frames:
        require_model(img, Model.GRAY8, op="build_background")
        if stack and img.pixels.shape != stack[0].shape:
            raise ContractError("build_background: frames differ in dimensions")
        stack.append(img.pixels)
        if len(stack) == count:
            break
    if not stack:
        raise ContractError("build_background: empty frame sequence")
    n = len(stack)
    k = (n - 1) // 2
    med = np.partition(np.stack(stack), k, axis=0)[k]
    return BackgroundModel(Image(med, Model.GRAY8), built_from=n)


def subtract(frame: Image, bg: BackgroundModel) -> Image:
    require_model(frame, Model.GRAY8, op="subtract")
    require_same_shape(frame, bg.background, op="subtract")
    a, b = frame.pixels, bg.background.pixels
    return Image(np.maximum(a, b) - np.minimum(a, b), Model.GRAY8)


def threshold(img: Image, level: int = DEFAULT_THRESHOLD) -> Image:
    require_model(img, Model.GRAY8, op="threshold")
    if not 0 <= level <= 255:
        raise ContractError(f"threshold level {level} outside 0..255")
    return Image((img.pixels >= level).astype(np.uint8), Model.BINARY)


def _neighbourhood(px: np.ndarray) -> list[np.ndarray]:
    """The nine 3x3-shifted views of ``px`` under edge replication."""
    h, w = px.shape
    p = np.pad(px, 1, mode="edge")
    return [p[dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)]


def median_filter(img: Image, window: int = 3) -> Image:
    require_model(img, Model.GRAY8, Model.BINARY, op="median_filter")
    if window != 3:
        raise ContractError("only a 3x3 window is supported")
    views = _neighbourhood(img.pixels)
    if img.model is Model.BINARY:
        # median of nine 0/1 samples is a majority vote
        votes = np.zeros(img.shape, dtype=np.uint8)
        for v in views:
            votes += v
        return Image((votes >= 5).astype(np.uint8), Model.BINARY)
    med = np.partition(np.stack(views), 4, axis=0)[4]
    return Image(med, Model.GRAY8)


def mean_filter(img: Image, window: int = 3) -> Image:
    require_model(img, Model.GRAY8, op="mean_filter")
    if window != 3:
        raise ContractError("only a 3x3 window is supported")
    acc = np.zeros(img.shape, dtype=np.uint32)
    for v in _neighbourhood(img.pixels):
        acc += v
    return Image((acc + 4) // 9, Model.GRAY8)


class MorphOp(enum.Enum):
    ERODE = "erode"
    DILATE = "dilate"
    OPEN = "open"
    CLOSE = "close"


@dataclass(frozen=True, eq=False)
class StructuringElement:
    shape: np.ndarray = field(default_factory=lambda: np.ones((3, 3), dtype=np.uint8))

    def __post_init__(self):
        s = np.asarray(self.shape, dtype=np.uint8)
        if s.ndim != 2 or s.shape[0] % 2 == 0 or s.shape[1] % 2 == 0:
            raise ContractError("structuring element must have odd width and height")
        if s[s.shape[0] // 2, s.shape[1] // 2] != 1:
            raise ContractError("structuring element origin must be set")
        object.__setattr__(self, "shape", s)

    @classmethod
    def square(cls, size: int = 3) -> StructuringElement:
        return cls(np.ones((size, size), dtype=np.uint8))

    def offsets(self) -> list[tuple[int, int]]:
        cy, cx = self.shape.shape[0] // 2, self.shape.shape[1] // 2
        return [(int(dy) - cy, int(dx) - cx) for dy, dx in np.argwhere(self.shape)]


def _shifted(px: np.ndarray, dy: int, dx: int, fill: int) -> np.ndarray:
    """``out[y, x] = px[y + dy, x + dx]``, ``fill`` where that falls outside."""
    h, w = px.shape
    out = np.full_like(px, fill)
    ys, yd = slice(max(dy, 0), h + min(dy, 0)), slice(max(-dy, 0), h + min(-dy, 0))
    xs, xd = slice(max(dx, 0), w + min(dx, 0)), slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = px[ys, xs]
    return out


def _dilate(px: np.ndarray, offs) -> np.ndarray:
    # union of SE translates: x is set if some x - b is set
    out = np.zeros_like(px)
    for dy, dx in offs:
        out |= _shifted(px, -dy, -dx, 0)
    return out


def _erode(px: np.ndarray, offs) -> np.ndarray:
    # out-of-frame cells count as foreground so erosion stays the adjoint of dilation
    out = np.ones_like(px)
    for dy, dx in offs:
        out &= _shifted(px, dy, dx, 1)
    return out


def morphology(img: Image, op: MorphOp | str, se: StructuringElement | None = None) -> Image:
    require_model(img, Model.BINARY, op="morphology")
    op = MorphOp(op)
    offs = (se or StructuringElement()).offsets()
    px = img.pixels
    if op is MorphOp.ERODE:
        out = _erode(px, offs)
    elif op is MorphOp.DILATE:
        out = _dilate(px, offs)
    elif op is MorphOp.OPEN:
        out = _dilate(_erode(px, offs), offs)
    else:
        out = _erode(_dilate(px, offs), offs)
    return Image(out, Model.BINARY)


DEFAULT_MORPH_CHAIN = (MorphOp.OPEN, MorphOp.CLOSE, MorphOp.DILATE)


def clean_foreground(img: Image, chain: Sequence[MorphOp] = DEFAULT_MORPH_CHAIN,
                     se: StructuringElement | None = None) -> Image:
    """Apply the morphology chain in order (open, close, dilate by default)."""
    for op in chain:
        img = morphology(img, op, se)
    return img
