"""Synthetic road scenes with exact ground truth, and scoring against it.

Scenes are a static background plus solid rectangles moving at constant
pixel velocity, so area, centroid and displacement all have closed forms.
Salt-and-pepper noise comes from a pinned xorshift64* generator, which makes
every frame reproducible from the seed alone.
"""

from __future__ import annotations

import csv
import math
import statistics
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SpecError
from .imgcore import Image, Model
from .speed import CalibrationParams, SpeedRecord, round_half_up

_MASK64 = (1 << 64) - 1
XORSHIFT_MULTIPLIER = 0x2545F4914F6CDD1D
SEED_MIX = 0x9E3779B97F4A7C15


class XorShift64Star:
    """xorshift64* (shifts 12, 25, 27; multiplier 0x2545F4914F6CDD1D).

    The state is ``seed XOR 0x9E3779B97F4A7C15`` and falls back to that
    constant when the XOR gives zero.
    """

    def __init__(self, seed: int):
        self.state = ((seed & _MASK64) ^ SEED_MIX) or SEED_MIX

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & _MASK64
        x ^= x >> 27
        self.state = x
        return (x * XORSHIFT_MULTIPLIER) & _MASK64

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53


@dataclass(frozen=True)
class SceneObject:
    width: int
    height: int
    x: float  # top-left at frame 0
    y: float
    vx: float  # pixels per frame
    vy: float
    gray: int


@dataclass
class SceneSpec:
    width: int = 640
    height: int = 480
    n_frames: int = 100
    background: int | tuple[int, int] = 90  # level, or (left, right) horizontal gradient
    objects: list[SceneObject] = field(default_factory=list)
    noise: float = 0.0
    seed: int = 1

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise SpecError("scene dimensions must be positive")
        if self.n_frames < 1:
            raise SpecError("n_frames must be >= 1")
        if not 0.0 <= self.noise < 1.0:
            raise SpecError(f"noise density must lie in [0, 1), got {self.noise}")
        levels = self.background if isinstance(self.background, tuple) else (self.background,)
        if any(not 0 <= lv <= 255 for lv in levels):
            raise SpecError("background levels must lie in 0..255")
        for i, o in enumerate(self.objects):
            if o.width < 1 or o.height < 1:
                raise SpecError(f"object {i} has zero area")
            if not 0 <= o.gray <= 255:
                raise SpecError(f"object {i} gray level outside 0..255")


@dataclass
class ObjectTruth:
    id: int
    speed_px: float
    positions: dict[int, tuple[float, float]]  # frame -> centroid of the visible part
    areas: dict[int, int]

    def speed_kmh(self, params: CalibrationParams) -> float:
        return params.k * self.speed_px * params.v0


@dataclass
class SceneTruth:
    n_frames: int
    objects: list[ObjectTruth]

    def visible(self, frame: int) -> list[ObjectTruth]:
        return [o for o in self.objects if frame in o.positions]


def render_background(spec: SceneSpec) -> np.ndarray:
    if isinstance(spec.background, tuple):
        left, right = spec.background
        xs = np.arange(spec.width)
        span = max(spec.width - 1, 1)
        row = np.floor(left + (right - left) * xs / span + 0.5).astype(np.uint8)
        return np.tile(row, (spec.height, 1))
    return np.full((spec.height, spec.width), spec.background, dtype=np.uint8)


def _placed(o: SceneObject, i: int) -> tuple[int, int]:
    return round_half_up(o.x + o.vx * i), round_half_up(o.y + o.vy * i)


def _add_noise(px: np.ndarray, density: float, rng: XorShift64Star) -> None:
    """Flip pixels to 0 or 255, visiting raster positions by geometric skips."""
    flat = px.reshape(-1)
    n = flat.size
    log_keep = math.log1p(-density)
    pos = -1
    while True:
        pos += int(math.log1p(-rng.uniform()) / log_keep) + 1
        if pos >= n:
            return
        flat[pos] = 255 if rng.next_u64() >> 63 else 0


def generate_scene(spec: SceneSpec) -> tuple[list[Image], SceneTruth]:
    spec.validate()
    bg = render_background(spec)
    rng = XorShift64Star(spec.seed)
    truths = [ObjectTruth(id=i + 1, speed_px=math.hypot(o.vx, o.vy), positions={}, areas={})
              for i, o in enumerate(spec.objects)]
    frames = []
    for i in range(spec.n_frames):
        px = bg.copy()
        for o, t in zip(spec.objects, truths):
            left, top = _placed(o, i)
            x0, y0 = max(left, 0), max(top, 0)
            x1, y1 = min(left + o.width, spec.width), min(top + o.height, spec.height)
            if x0 >= x1 or y0 >= y1:
                continue
            px[y0:y1, x0:x1] = o.gray
            t.positions[i] = ((x0 + x1 - 1) / 2, (y0 + y1 - 1) / 2)
            t.areas[i] = (x1 - x0) * (y1 - y0)
        if spec.noise > 0:
            _add_noise(px, spec.noise, rng)
        frames.append(Image(px, Model.GRAY8))
    return frames, SceneTruth(spec.n_frames, truths)


def parse_scene_spec(text: str) -> SceneSpec:
    """Parse ``key = value`` lines; ``object = w h x y vx vy gray`` may repeat."""
    spec = SceneSpec()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            if key in ("width", "height", "n_frames", "seed"):
                setattr(spec, key, int(value))
            elif key == "noise":
                spec.noise = float(value)
            elif key == "background":
                parts = value.split()
                if parts[0] == "gradient" and len(parts) == 3:
                    spec.background = (int(parts[1]), int(parts[2]))
                elif len(parts) == 1:
                    spec.background = int(parts[0])
                else:
                    raise ValueError(value)
            elif key == "object":
                w, h, x, y, vx, vy, g = value.split()
                spec.objects.append(SceneObject(int(w), int(h), float(x), float(y),
                                                float(vx), float(vy), int(g)))
            else:
                raise SpecError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, SpecError):
                raise
            raise SpecError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    spec.validate()
    return spec


def write_truth_csv(path: str | Path, truth: SceneTruth) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["object_id", "frame", "cx", "cy", "speed_px_per_frame"])
        for o in truth.objects:
            for frame in sorted(o.positions):
                cx, cy = o.positions[frame]
                w.writerow([o.id, frame, f"{cx:.2f}", f"{cy:.2f}", f"{o.speed_px:.4f}"])


@dataclass
class Metrics:
    speed_error: dict[int, float]  # object id -> median relative error (nan if never measured)
    identity_switches: int
    missed: int  # visible object-frames with no matched record
    visible: int
    spurious_records: int
    spurious_tracks: dict[int, int]  # unassociated track id -> frames it lived
    track_objects: dict[int, int]  # track id -> majority object id

    @property
    def miss_rate(self) -> float:
        return self.missed / self.visible if self.visible else 0.0

    @property
    def max_speed_error(self) -> float:
        vals = [v for v in self.speed_error.values() if not math.isnan(v)]
        return max(vals) if vals else math.nan

    def long_spurious_tracks(self, min_frames: int = 5) -> list[int]:
        return [t for t, n in self.spurious_tracks.items() if n >= min_frames]


def evaluate(truth: SceneTruth, records: Sequence[SpeedRecord], params: CalibrationParams,
             warmup: int = 3, gate: float = 20.0) -> Metrics:
    """Score speed records against the ground truth.

    Each record is matched to the nearest visible object within ``gate``
    pixels; a track belongs to the object it matched most often. Identity
    switches count changes of matched object along a track. Speed error is
    the relative error of the smoothed speed, skipping each track's first
    ``warmup`` records.
    """
    by_track: dict[int, list[SpeedRecord]] = defaultdict(list)
    for r in sorted(records, key=lambda r: (r.track_id, r.frame)):
        by_track[r.track_id].append(r)

    def nearest(r: SpeedRecord) -> int | None:
        best, best_d = None, gate
        for o in truth.visible(r.frame):
            cx, cy = o.positions[r.frame]
            d = math.hypot(cx - r.cx, cy - r.cy)
            if d <= best_d:
                best, best_d = o.id, d
        return best

    switches = 0
    spurious_records = 0
    spurious_tracks = {}
    track_objects = {}
    seen: set[tuple[int, int]] = set()
    errors: dict[int, list[float]] = defaultdict(list)
    truth_by_id = {o.id: o for o in truth.objects}

    for tid, recs in by_track.items():
        matches = [nearest(r) for r in recs]
        spurious_records += sum(m is None for m in matches)
        hits = [m for m in matches if m is not None]
        for a, b in zip(hits, hits[1:]):
            switches += a != b
        if not hits:
            # a record exists only once a track has two centroids
            spurious_tracks[tid] = len(recs) + 1
            continue
        owner = Counter(hits).most_common(1)[0][0]
        track_objects[tid] = owner
        seen.update((r.frame, m) for r, m in zip(recs, matches) if m is not None)
        want = truth_by_id[owner].speed_kmh(params)
        for r in recs[warmup:]:
            if want > 0:
                errors[owner].append(abs(r.v_smoothed - want) / want)
            else:
                errors[owner].append(0.0 if r.v_smoothed == 0 else math.inf)

    visible = sum(len(o.positions) for o in truth.objects)
    missed = sum(1 for o in truth.objects for f in o.positions if (f, o.id) not in seen)
    return Metrics(
        speed_error={o.id: statistics.median(errors[o.id]) if errors[o.id] else math.nan
                     for o in truth.objects},
        identity_switches=switches,
        missed=missed,
        visible=visible,
        spurious_records=spurious_records,
        spurious_tracks=spurious_tracks,
        track_objects=track_objects,
    )
