"""Frame-to-frame vehicle identity by centroid distance."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

from .detect import Blob
from .errors import ContractError

DEFAULT_R_MAX = 50
DEFAULT_M_MAX = 3

Point = tuple[float, float]


def distance(a: Point, b: Point) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def radius_grow_match(center: Point, candidates: Sequence[Point], r_max: int = DEFAULT_R_MAX) -> int | None:
    """Grow a search circle around ``center`` one pixel at a time.

    At the first integer radius enclosing any candidate, the nearest enclosed
    candidate is returned (lowest index on ties). ``None`` if nothing falls
    within ``r_max``.
    """
    if r_max < 1:
        raise ContractError("r_max must be >= 1")
    dists = [distance(center, c) for c in candidates]
    for r in range(1, int(r_max) + 1):
        inside = [i for i, d in enumerate(dists) if d <= r]
        if inside:
            return min(inside, key=lambda i: (dists[i], i))
    return None


class TrackState(enum.Enum):
    ACTIVE = "active"
    TERMINATED = "terminated"


@dataclass
class Track:
    id: int
    history: list[tuple[int, float, float]] = field(default_factory=list)
    last_displacement: float | None = None
    misses: int = 0
    state: TrackState = TrackState.ACTIVE

    @property
    def centroid(self) -> Point:
        _, x, y = self.history[-1]
        return x, y

    @property
    def last_frame(self) -> int:
        return self.history[-1][0]

    @property
    def active(self) -> bool:
        return self.state is TrackState.ACTIVE


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]  # (track id, blob label)
    unmatched_tracks: list[int]
    unmatched_blobs: list[int]


def assign(tracks: Sequence[Track], detections: Sequence[Blob], r_max: float = DEFAULT_R_MAX) -> Assignment:
    """Greedy one-to-one matching on the globally sorted list of close pairs."""
    close = []
    for t in tracks:
        c = t.centroid
        for b in detections:
            d = distance(c, b.centroid)
            if d <= r_max:
                close.append((d, t.id, b.label))
    close.sort()
    used_t: set[int] = set()
    used_b: set[int] = set()
    pairs = []
    for _, tid, label in close:
        if tid in used_t or label in used_b:
            continue
        used_t.add(tid)
        used_b.add(label)
        pairs.append((tid, label))
    return Assignment(
        pairs=pairs,
        unmatched_tracks=[t.id for t in tracks if t.id not in used_t],
        unmatched_blobs=[b.label for b in detections if b.label not in used_b],
    )


class Tracker:
    """Owns every track of one run; ``step`` must be called in frame order."""

    def __init__(self, r_max: int = DEFAULT_R_MAX, m_max: int = DEFAULT_M_MAX):
        if r_max < 1:
            raise ContractError("r_max must be >= 1")
        if m_max < 1:
            raise ContractError("m_max must be >= 1")
        self.r_max = r_max
        self.m_max = m_max
        self.tracks: list[Track] = []
        self.next_id = 1
        self._last_frame: int | None = None

    @property
    def active_tracks(self) -> list[Track]:
        return [t for t in self.tracks if t.active]

    def step(self, frame: int, detections: Sequence[Blob]) -> dict[int, float]:
        """Advance by one frame.

        Returns the displacement in pixels per frame of every track that was
        matched this frame. When a track skipped frames the distance is divided
        by the frame gap.
        """
        if self._last_frame is not None and frame <= self._last_frame:
            raise ContractError(f"frame index {frame} not after {self._last_frame}")
        self._last_frame = frame

        active = self.active_tracks
        by_id = {t.id: t for t in active}
        by_label = {b.label: b for b in detections}
        result = assign(active, detections, self.r_max)

        moved = {}
        for tid, label in result.pairs:
            t = by_id[tid]
            cx, cy = by_label[label].centroid
            gap = frame - t.last_frame
            d = distance(t.centroid, (cx, cy)) / gap
            t.history.append((frame, cx, cy))
            t.last_displacement = d
            t.misses = 0
            moved[tid] = d

        for tid in result.unmatched_tracks:
            t = by_id[tid]
            t.misses += 1
            if t.misses >= self.m_max:
                t.state = TrackState.TERMINATED

        for label in sorted(result.unmatched_blobs):
            cx, cy = by_label[label].centroid
            self.tracks.append(Track(id=self.next_id, history=[(frame, cx, cy)]))
            self.next_id += 1
        return moved
