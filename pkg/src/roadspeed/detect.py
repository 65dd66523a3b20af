"""Binary foreground to labelled vehicles.

Connected components use a two-pass union-find over horizontal pixel runs;
components are numbered in raster order of their first pixel, so the label
map is fully determined by the input image.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ContractError
from .imgcore import Image, Model, require_model

log = logging.getLogger(__name__)

DEFAULT_MIN_AREA = 150
DEFAULT_CONNECTIVITY = 8

# Twelve fixed, well-separated colours used for component colouring.
PALETTE: tuple[tuple[int, int, int], ...] = (
    (230, 25, 75),
    (60, 180, 75),
    (255, 225, 25),
    (0, 130, 200),
    (245, 130, 48),
    (145, 30, 180),
    (70, 240, 240),
    (240, 50, 230),
    (210, 245, 60),
    (250, 190, 212),
    (0, 128, 128),
    (170, 110, 40),
)


class EdgeKernel(enum.Enum):
    PREWITT = "prewitt"
    SOBEL = "sobel"
    LAPLACIAN = "laplacian"


_GRADIENT_KERNELS = {
    EdgeKernel.PREWITT: np.array([[-1, 0, 1], [-1, 0, 1], [-1, 0, 1]]),
    EdgeKernel.SOBEL: np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]]),
}
_LAPLACIAN = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]])


def _correlate3(p: np.ndarray, kernel: np.ndarray, h: int, w: int) -> np.ndarray:
    out = np.zeros((h, w), dtype=np.int32)
    for dy in range(3):
        for dx in range(3):
            if kernel[dy, dx]:
                out += int(kernel[dy, dx]) * p[dy:dy + h, dx:dx + w]
    return out


def edge_magnitude(img: Image, kernel: EdgeKernel | str = EdgeKernel.PREWITT) -> Image:
    """Gradient magnitude ``|Gx| + |Gy|`` (Prewitt/Sobel) or ``|lap|``, clamped to 255."""
    require_model(img, Model.GRAY8, op="edge_magnitude")
    kernel = EdgeKernel(kernel)
    h, w = img.shape
    if h < 3 or w < 3:
        raise ContractError("edge_magnitude needs an image of at least 3x3")
    p = np.pad(img.pixels.astype(np.int32), 1, mode="edge")
    if kernel is EdgeKernel.LAPLACIAN:
        mag = np.abs(_correlate3(p, _LAPLACIAN, h, w))
    else:
        gx = _GRADIENT_KERNELS[kernel]
        mag = np.abs(_correlate3(p, gx, h, w)) + np.abs(_correlate3(p, gx.T, h, w))
    return Image(np.minimum(mag, 255), Model.GRAY8)


@dataclass(frozen=True, eq=False)
class LabelMap:
    labels: np.ndarray
    n_components: int

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabelMap):
            return NotImplemented
        return self.n_components == other.n_components and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True)
class Blob:
    label: int
    area: int
    bbox: tuple[int, int, int, int]  # min x, min y, max x, max y (inclusive)
    centroid: tuple[float, float]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        parent = self.parent
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        # smaller root wins, which keeps every root at its component's first run
        if ra < rb:
            self.parent[rb] = ra
        elif rb < ra:
            self.parent[ra] = rb


def _runs(px: np.ndarray):
    """Horizontal foreground runs in raster order as (row, start, stop) arrays."""
    h, w = px.shape
    padded = np.zeros((h, w + 2), dtype=np.int8)
    padded[:, 1:-1] = px != 0
    d = np.diff(padded, axis=1)
    rs, cs = np.nonzero(d == 1)
    re, ce = np.nonzero(d == -1)
    # nonzero is row-major, so starts and stops pair up in order
    assert np.array_equal(rs, re)
    return rs, cs, ce


def connected_components(img: Image, connectivity: int = DEFAULT_CONNECTIVITY) -> LabelMap:
    require_model(img, Model.BINARY, op="connected_components")
    if connectivity not in (4, 8):
        raise ContractError("connectivity must be 4 or 8")
    h, w = img.shape
    rows, starts, stops = _runs(img.pixels)
    n = len(rows)
    labels = np.zeros((h, w), dtype=np.int32)
    if n == 0:
        return LabelMap(labels, 0)

    slack = 1 if connectivity == 8 else 0
    uf = _UnionFind(n)
    row_first = np.searchsorted(rows, np.arange(h + 1))
    rows_l, starts_l, stops_l = rows.tolist(), starts.tolist(), stops.tolist()
    # first pass: union each run with the overlapping runs of the row above
    for i in range(n):
        r = rows_l[i]
        if r == 0:
            continue
        lo, hi = starts_l[i] - slack, stops_l[i] + slack
        j, j_end = int(row_first[r - 1]), int(row_first[r])
        while j < j_end and stops_l[j] <= lo:
            j += 1
        while j < j_end and starts_l[j] < hi:
            uf.union(i, j)
            j += 1

    # second pass: roots are first runs, so ordering roots by run index gives raster order
    roots = [uf.find(i) for i in range(n)]
    compact: dict[int, int] = {}
    run_label = np.empty(n, dtype=np.int32)
    for i, root in enumerate(roots):
        lab = compact.get(root)
        if lab is None:
            lab = compact[root] = len(compact) + 1
        run_label[i] = lab
    lengths = stops - starts
    flat_idx = np.repeat(rows * w + starts - np.cumsum(lengths) + lengths, lengths) + np.arange(lengths.sum())
    labels.reshape(-1)[flat_idx] = np.repeat(run_label, lengths)
    return LabelMap(labels, len(compact))


def centroid(pixels: Iterable) -> tuple[float, float]:
    """Mean (x, y) of a pixel set, each point given as ``(x, y)``."""
    pts = np.asarray(list(pixels), dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise ContractError("centroid of an empty pixel set")
    n = len(pts)
    return float(pts[:, 0].sum() / n), float(pts[:, 1].sum() / n)


def blob_stats(lm: LabelMap) -> list[Blob]:
    """Area, bounding box and centroid of every component, in label order."""
    n = lm.n_components
    if n == 0:
        return []
    flat = lm.labels.reshape(-1)
    idx = np.flatnonzero(flat)
    lab = flat[idx]
    ys, xs = np.divmod(idx, lm.width)
    area = np.bincount(lab, minlength=n + 1)
    sx = np.bincount(lab, weights=xs, minlength=n + 1)
    sy = np.bincount(lab, weights=ys, minlength=n + 1)
    big = np.iinfo(np.int64).max
    minx = np.full(n + 1, big); np.minimum.at(minx, lab, xs)
    miny = np.full(n + 1, big); np.minimum.at(miny, lab, ys)
    maxx = np.full(n + 1, -1); np.maximum.at(maxx, lab, xs)
    maxy = np.full(n + 1, -1); np.maximum.at(maxy, lab, ys)
    return [
        Blob(label=i, area=int(area[i]),
             bbox=(int(minx[i]), int(miny[i]), int(maxx[i]), int(maxy[i])),
             centroid=(float(sx[i] / area[i]), float(sy[i] / area[i])))
        for i in range(1, n + 1)
    ]


def filter_blobs(lm: LabelMap, min_area: int = DEFAULT_MIN_AREA) -> tuple[LabelMap, list[Blob]]:
    """Drop components smaller than ``min_area`` and renumber the rest compactly."""
    if lm.n_components == 0:
        return lm, []
    area = np.bincount(lm.labels.reshape(-1), minlength=lm.n_components + 1)
    keep = area >= min_area
    keep[0] = False
    remap = np.zeros(lm.n_components + 1, dtype=np.int32)
    remap[keep] = np.arange(1, int(keep.sum()) + 1)
    out = LabelMap(remap[lm.labels], int(keep.sum()))
    return out, blob_stats(out)


def _adjacency(blobs: list[Blob]) -> dict[int, set[int]]:
    """Components are neighbours when their bboxes, each grown by a pixel, overlap."""
    adj = {b.label: set() for b in blobs}
    for i, a in enumerate(blobs):
        ax0, ay0, ax1, ay1 = a.bbox
        for b in blobs[i + 1:]:
            bx0, by0, bx1, by1 = b.bbox
            if ax0 - 2 <= bx1 and bx0 <= ax1 + 2 and ay0 - 2 <= by1 and by0 <= ay1 + 2:
                adj[a.label].add(b.label)
                adj[b.label].add(a.label)
    return adj


def assign_colors(lm: LabelMap) -> tuple[dict[int, int], bool]:
    """Greedy palette index per label, visiting labels in order.

    Returns the mapping and whether the palette ran out, in which case the
    offending labels fall back to ``(label - 1) % len(PALETTE)``.
    """
    blobs = blob_stats(lm)
    adj = _adjacency(blobs)
    colors: dict[int, int] = {}
    exhausted = False
    for b in blobs:
        used = {colors[n] for n in adj[b.label] if n in colors}
        free = next((c for c in range(len(PALETTE)) if c not in used), None)
        if free is None:
            exhausted = True
            free = (b.label - 1) % len(PALETTE)
        colors[b.label] = free
    return colors, exhausted


def color_labels(lm: LabelMap) -> Image:
    colors, exhausted = assign_colors(lm)
    if exhausted:
        log.warning("colour palette exhausted; adjacent components may share a colour")
    lut = np.zeros((lm.n_components + 1, 3), dtype=np.uint8)
    for label, c in colors.items():
        lut[label] = PALETTE[c]
    return Image(lut[lm.labels], Model.RGB8)
