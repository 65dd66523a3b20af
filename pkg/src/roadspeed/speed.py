"""Pixel displacement to calibrated speed, plus on-frame speed labels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError
from .imgcore import Image, Model, require_model

DEFAULT_FPS = 25.0
DEFAULT_SMOOTHING = 5

BOX_COLOR = (0, 255, 0)
TEXT_COLOR = (255, 255, 0)


@dataclass(frozen=True)
class CalibrationParams:
    """``k`` frames/s, ``v0`` (km/h) per (pixel/s), optional limit in km/h."""

    k: float = DEFAULT_FPS
    v0: float = 1.0
    speed_limit: float | None = None

    def __post_init__(self):
        if not self.k > 0:
            raise ContractError(f"frame rate must be positive, got {self.k}")
        if not self.v0 > 0:
            raise ContractError(f"calibration constant v0 must be positive, got {self.v0}")


@dataclass(frozen=True)
class SpeedRecord:
    frame: int
    track_id: int
    cx: float
    cy: float
    displacement: float  # pixels per frame
    v_inst: float  # km/h
    v_smoothed: float  # km/h
    warming_up: bool
    violation: bool


def frame_interval(k: float) -> float:
    if not k > 0:
        raise ContractError(f"frame rate must be positive, got {k}")
    return 1.0 / k


def speed_from_displacement(s: float, params: CalibrationParams) -> float:
    """``v = k * s * v0`` with ``s`` in pixels per frame."""
    if s < 0:
        raise ContractError(f"displacement must be non-negative, got {s}")
    return params.k * s * params.v0


def smooth(history: Sequence[float], window: int = DEFAULT_SMOOTHING) -> float:
    if not history:
        raise ContractError("cannot smooth an empty speed history")
    if window < 1:
        raise ContractError("smoothing window must be >= 1")
    tail = history[-window:]
    return sum(tail) / len(tail)


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


# 3x5 digit glyphs, one string per row, '#' = ink
_GLYPH_ROWS = {
    "0": ("###", "#.#", "#.#", "#.#", "###"),
    "1": (".#.", "##.", ".#.", ".#.", "###"),
    "2": ("###", "..#", "###", "#..", "###"),
    "3": ("###", "..#", "###", "..#", "###"),
    "4": ("#.#", "#.#", "###", "..#", "..#"),
    "5": ("###", "#..", "###", "..#", "###"),
    "6": ("###", "#..", "###", "#.#", "###"),
    "7": ("###", "..#", ".#.", ".#.", ".#."),
    "8": ("###", "#.#", "###", "#.#", "###"),
    "9": ("###", "#.#", "###", "..#", "###"),
}
GLYPHS = {d: np.array([[c == "#" for c in row] for row in rows]) for d, rows in _GLYPH_ROWS.items()}
GLYPH_W, GLYPH_H = 3, 5


def text_mask(text: str) -> np.ndarray:
    """Boolean ink mask of a digit string, glyphs separated by one blank column."""
    out = np.zeros((GLYPH_H, max(len(text) * (GLYPH_W + 1) - 1, 0)), dtype=bool)
    for i, ch in enumerate(text):
        if ch not in GLYPHS:
            raise ContractError(f"font has no glyph for {ch!r}")
        out[:, i * (GLYPH_W + 1):i * (GLYPH_W + 1) + GLYPH_W] = GLYPHS[ch]
    return out


def annotate(frame: Image, bbox: tuple[int, int, int, int], speed: float) -> Image:
    """Draw a 1-pixel box around ``bbox`` and the rounded speed just above it.

    The label goes one pixel above the box; when the box sits too close to
    the top edge for that, it goes one pixel below instead. Ink falling off
    the right or bottom edge is clipped.
    """
    require_model(frame, Model.RGB8, op="annotate")
    x0, y0, x1, y1 = bbox
    h, w = frame.shape
    if not (0 <= x0 <= x1 < w and 0 <= y0 <= y1 < h):
        raise ContractError(f"bbox {bbox} outside {w}x{h} frame")
    px = frame.pixels.copy()
    px[y0, x0:x1 + 1] = BOX_COLOR
    px[y1, x0:x1 + 1] = BOX_COLOR
    px[y0:y1 + 1, x0] = BOX_COLOR
    px[y0:y1 + 1, x1] = BOX_COLOR

    ink = text_mask(str(round_half_up(max(speed, 0.0))))
    ty = y0 - 1 - GLYPH_H
    if ty < 0:
        ty = y1 + 2
    th, tw = min(GLYPH_H, h - ty), min(ink.shape[1], w - x0)
    if th > 0 and tw > 0:
        region = px[ty:ty + th, x0:x0 + tw]
        region[ink[:th, :tw]] = TEXT_COLOR
    return Image(px, Model.RGB8)
