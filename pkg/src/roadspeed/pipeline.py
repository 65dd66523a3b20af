"""Pipeline configuration and orchestration.

Per frame: grayscale, road mask, background subtraction, threshold,
median (or mean) filter, morphology chain, component labelling, blob
filtering, tracking and speed estimation.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import detect, preprocess, speed, track
from .errors import ConfigError, RoadspeedError
from .imgcore import Image, Model, decode_pnm, gray_to_rgb, to_grayscale, widen_binary, write_pnm
from .preprocess import BackgroundModel, MorphOp, RoadMask, StructuringElement
from .speed import CalibrationParams, SpeedRecord

log = logging.getLogger(__name__)

FRAME_SUFFIXES = (".pnm", ".pgm", ".ppm")
STAGES = ("grayscale", "masked", "subtracted", "threshold", "filtered", "morphology", "labels")
CSV_HEADER = ("frame", "track_id", "cx", "cy", "displacement_px", "speed_kmh_inst",
              "speed_kmh_smoothed", "warming_up", "violation")
WARMUP_POINTS = 3


@dataclass
class PipelineConfig:
    input_dir: Path | None = None
    output_dir: Path | None = None
    fps: float = speed.DEFAULT_FPS
    threshold: int = preprocess.DEFAULT_THRESHOLD
    filter: str = "median"
    se_size: int = 3
    morphology: tuple[MorphOp, ...] = preprocess.DEFAULT_MORPH_CHAIN
    mask_polygon: list[tuple[float, float]] | None = None
    mask_image: Path | None = None
    background: str = "temporal_median"  # or a path to a background image
    background_frames: int = preprocess.DEFAULT_BACKGROUND_FRAMES
    min_area: int = detect.DEFAULT_MIN_AREA
    connectivity: int = detect.DEFAULT_CONNECTIVITY
    r_max: int = track.DEFAULT_R_MAX
    m_max: int = track.DEFAULT_M_MAX
    smoothing: int = speed.DEFAULT_SMOOTHING
    v0: float | None = None
    speed_limit: float | None = None
    dump_stages: bool = False

    def validate(self) -> None:
        if not self.fps > 0:
            raise ConfigError("fps must be positive")
        if not 0 <= self.threshold <= 255:
            raise ConfigError("threshold must lie in 0..255")
        if self.filter not in ("median", "mean"):
            raise ConfigError("filter must be 'median' or 'mean'")
        if self.se_size < 1 or self.se_size % 2 == 0:
            raise ConfigError("se_size must be a positive odd number")
        if self.background_frames < 1:
            raise ConfigError("background_frames must be >= 1")
        if self.min_area < 1:
            raise ConfigError("min_area must be >= 1")
        if self.connectivity not in (4, 8):
            raise ConfigError("connectivity must be 4 or 8")
        if self.r_max < 1:
            raise ConfigError("r_max must be >= 1")
        if self.m_max < 1:
            raise ConfigError("m_max must be >= 1")
        if self.smoothing < 1:
            raise ConfigError("smoothing must be >= 1")
        if self.v0 is not None and not self.v0 > 0:
            raise ConfigError("v0 must be positive")
        if self.speed_limit is not None and self.speed_limit < 0:
            raise ConfigError("speed_limit must be non-negative")
        if self.mask_polygon is not None and self.mask_image is not None:
            raise ConfigError("give either mask.polygon or mask.image, not both")

    @property
    def calibration(self) -> CalibrationParams:
        if self.v0 is None:
            raise ConfigError("v0 (calibration constant) is required")
        return CalibrationParams(k=self.fps, v0=self.v0, speed_limit=self.speed_limit)


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def parse_polygon(s: str) -> list[tuple[float, float]]:
    pts = []
    for tok in s.split():
        x, y = tok.split(",")
        pts.append((float(x), float(y)))
    return pts


def _parse_chain(s: str) -> tuple[MorphOp, ...]:
    return tuple(MorphOp(t.strip().lower()) for t in s.split(",") if t.strip())


def _optional_float(s: str) -> float | None:
    return None if s.strip().lower() in ("", "none") else float(s)


# config-file key -> (PipelineConfig attribute, parser)
CONFIG_KEYS: dict[str, tuple[str, Callable[[str], object]]] = {
    "input_dir": ("input_dir", Path),
    "output_dir": ("output_dir", Path),
    "fps": ("fps", float),
    "threshold": ("threshold", int),
    "filter": ("filter", str.strip),
    "se.size": ("se_size", int),
    "morphology": ("morphology", _parse_chain),
    "mask.polygon": ("mask_polygon", parse_polygon),
    "mask.image": ("mask_image", Path),
    "background": ("background", str.strip),
    "background.frames": ("background_frames", int),
    "min_area": ("min_area", int),
    "connectivity": ("connectivity", int),
    "r_max": ("r_max", int),
    "m_max": ("m_max", int),
    "smoothing": ("smoothing", int),
    "v0": ("v0", _optional_float),
    "speed_limit": ("speed_limit", _optional_float),
    "dump_stages": ("dump_stages", _parse_bool),
}


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        raw[key] = value
    return raw


def build_config(raw: dict[str, str], base_dir: Path | None = None) -> PipelineConfig:
    """Turn raw string values into a validated config. Relative paths resolve against ``base_dir``."""
    cfg = PipelineConfig()
    for key, value in raw.items():
        attr, parse = CONFIG_KEYS[key]
        try:
            parsed = parse(value)
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
        if isinstance(parsed, Path) and base_dir is not None and not parsed.is_absolute():
            parsed = base_dir / parsed
        setattr(cfg, attr, parsed)
    if base_dir is not None and cfg.background != "temporal_median":
        bg = Path(cfg.background)
        if not bg.is_absolute():
            cfg.background = str(base_dir / bg)
    cfg.validate()
    return cfg


def load_config(path: str | Path, overrides: dict[str, str] | None = None) -> PipelineConfig:
    path = Path(path)
    try:
        raw = parse_config_text(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = build_config(raw, base_dir=path.parent)
    return apply_overrides(cfg, overrides or {})


def apply_overrides(cfg: PipelineConfig, overrides: dict[str, str]) -> PipelineConfig:
    for key, value in overrides.items():
        attr, parse = CONFIG_KEYS[key]
        try:
            setattr(cfg, attr, parse(value))
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
    cfg.validate()
    return cfg


def list_frames(input_dir: Path | None) -> list[Path]:
    if input_dir is None:
        raise ConfigError("input_dir is required")
    if not Path(input_dir).is_dir():
        raise ConfigError(f"input directory {input_dir} does not exist")
    paths = sorted((p for p in Path(input_dir).iterdir()
                    if p.is_file() and p.suffix.lower() in FRAME_SUFFIXES), key=lambda p: p.name)
    if not paths:
        raise ConfigError(f"no frames (*.pnm, *.pgm, *.ppm) in {input_dir}")
    return paths


def read_frame(path: Path) -> Image:
    try:
        return decode_pnm(path.read_bytes())
    except (OSError, RoadspeedError) as exc:
        raise RoadspeedError(f"cannot read frame {path.name}: {exc}") from None


def as_gray(img: Image) -> Image:
    return to_grayscale(img) if img.model is Model.RGB8 else img


def make_mask(cfg: PipelineConfig, width: int, height: int) -> RoadMask:
    if cfg.mask_polygon is not None:
        return preprocess.rasterize_mask(cfg.mask_polygon, width, height)
    if cfg.mask_image is not None:
        m = RoadMask.from_image(cfg.mask_image)
        if m.mask.shape != (height, width):
            raise ConfigError(f"mask image {cfg.mask_image} is not {width}x{height}")
        return m
    return RoadMask(Image(np.ones((height, width), dtype=np.uint8), Model.BINARY), source="full-frame")


@dataclass
class FrameResult:
    frame: int
    blobs: list[detect.Blob]
    records: list[SpeedRecord]
    stages: dict[str, Image] = field(default_factory=dict)


class FramePipeline:
    """Runs the per-frame chain and owns the tracker for one sequence."""

    def __init__(self, cfg: PipelineConfig, mask: RoadMask, background: BackgroundModel):
        self.cfg = cfg
        self.params = cfg.calibration
        self.mask = mask
        self.background = background
        self.se = StructuringElement.square(cfg.se_size)
        self.tracker = track.Tracker(r_max=cfg.r_max, m_max=cfg.m_max)
        self.speeds: dict[int, list[float]] = {}
        self.timings: dict[str, list[float]] = {}

    def _timed(self, name: str, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        self.timings.setdefault(name, []).append((time.perf_counter() - t0) * 1e3)
        return out

    def detect(self, gray: Image, keep_stages: bool = False) -> tuple[list[detect.Blob], dict[str, Image]]:
        cfg, t = self.cfg, self._timed
        masked = t("mask", preprocess.apply_mask, gray, self.mask)
        diff = t("subtract", preprocess.subtract, masked, self.background)
        fg = t("threshold", preprocess.threshold, diff, cfg.threshold)
        if cfg.filter == "median":
            filtered = t("filter", preprocess.median_filter, fg)
        else:
            # mean filtering is defined on gray levels, so smooth the difference and re-threshold
            filtered = t("filter", lambda d: preprocess.threshold(preprocess.mean_filter(d), cfg.threshold), diff)
        clean = t("morphology", preprocess.clean_foreground, filtered, cfg.morphology, self.se)
        lm = t("label", detect.connected_components, clean, cfg.connectivity)
        lm, blobs = t("blobs", detect.filter_blobs, lm, cfg.min_area)
        stages = {}
        if keep_stages:
            stages = dict(zip(STAGES, (gray, masked, diff, widen_binary(fg), widen_binary(filtered),
                                       widen_binary(clean), detect.color_labels(lm))))
        return blobs, stages

    def track(self, frame: int, blobs: Sequence[detect.Blob]) -> list[SpeedRecord]:
        moved = self._timed("track", self.tracker.step, frame, blobs)
        by_id = {tr.id: tr for tr in self.tracker.tracks}
        records = []
        for tid in sorted(moved):
            tr = by_id[tid]
            s = moved[tid]
            v = speed.speed_from_displacement(s, self.params)
            hist = self.speeds.setdefault(tid, [])
            hist.append(v)
            v_s = speed.smooth(hist, self.cfg.smoothing)
            limit = self.params.speed_limit
            _, cx, cy = tr.history[-1]
            records.append(SpeedRecord(
                frame=frame, track_id=tid, cx=cx, cy=cy, displacement=s, v_inst=v, v_smoothed=v_s,
                warming_up=len(tr.history) < WARMUP_POINTS,
                violation=limit is not None and v_s > limit,
            ))
        return records

    def process(self, frame: int, gray: Image, keep_stages: bool = False) -> FrameResult:
        blobs, stages = self.detect(gray, keep_stages)
        return FrameResult(frame, blobs, self.track(frame, blobs), stages)


def render_annotations(gray: Image, result: FrameResult, tracker: track.Tracker) -> Image:
    out = gray_to_rgb(gray)
    by_centroid = {b.centroid: b for b in result.blobs}
    tracks = {t.id: t for t in tracker.tracks}
    for rec in result.records:
        _, cx, cy = tracks[rec.track_id].history[-1]
        blob = by_centroid.get((cx, cy))
        if blob is not None:
            out = speed.annotate(out, blob.bbox, rec.v_smoothed)
    return out


def background_for(cfg: PipelineConfig, frames: Iterable[Image], mask: RoadMask) -> BackgroundModel:
    """Temporal median over masked frames, or the configured image, masked the same way."""
    if cfg.background != "temporal_median":
        path = Path(cfg.background)
        img = as_gray(read_frame(path))
        if img.shape != mask.mask.shape:
            raise ConfigError(f"background image {path.name} does not match frame size")
        return BackgroundModel(preprocess.apply_mask(img, mask), built_from="supplied")
    masked = (preprocess.apply_mask(as_gray(f), mask) for f in frames)
    return preprocess.build_background(masked, cfg.background_frames)


def process_frames(frames: Sequence[Image], cfg: PipelineConfig) -> list[SpeedRecord]:
    """In-memory run over decoded frames; returns every speed record in frame order."""
    if not frames:
        raise ConfigError("no frames to process")
    h, w = frames[0].shape
    mask = make_mask(cfg, w, h)
    pipe = FramePipeline(cfg, mask, background_for(cfg, frames, mask))
    records = []
    for i, f in enumerate(frames):
        if f.shape != (h, w):
            raise RoadspeedError(f"frame {i} is {f.width}x{f.height}, expected {w}x{h}")
        records.extend(pipe.process(i, as_gray(f)).records)
    return records


def format_csv(records: Iterable[SpeedRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.frame, r.track_id, f"{r.cx:.2f}", f"{r.cy:.2f}", f"{r.displacement:.2f}",
                    f"{r.v_inst:.2f}", f"{r.v_smoothed:.2f}", int(r.warming_up), int(r.violation)])
    return buf.getvalue()


@dataclass
class RunSummary:
    frames: int
    tracks: int
    records: int
    mean_ms: float

    def as_text(self) -> str:
        return (f"frames = {self.frames}\ntracks = {self.tracks}\nrecords = {self.records}\n"
                f"mean_frame_ms = {self.mean_ms:.3f}\n")


def _open_sequence(cfg: PipelineConfig) -> tuple[list[Path], Image, FramePipeline]:
    paths = list_frames(cfg.input_dir)
    first = read_frame(paths[0])
    h, w = first.shape
    mask = make_mask(cfg, w, h)

    def bg_frames():
        yield first
        for p in paths[1:cfg.background_frames]:
            img = read_frame(p)
            if img.shape != (h, w):
                raise RoadspeedError(f"frame {p.name} is {img.width}x{img.height}, expected {w}x{h}")
            yield img

    return paths, first, FramePipeline(cfg, mask, background_for(cfg, bg_frames(), mask))


def run(cfg: PipelineConfig) -> RunSummary:
    """Process a frame directory and write speeds.csv, annotated frames and summary.txt."""
    cfg.validate()
    if cfg.output_dir is None:
        raise ConfigError("output_dir is required")
    paths, first, pipe = _open_sequence(cfg)
    h, w = first.shape
    out = Path(cfg.output_dir)
    (out / "annotated").mkdir(parents=True, exist_ok=True)
    if cfg.dump_stages:
        (out / "stages").mkdir(exist_ok=True)

    all_records: list[SpeedRecord] = []
    frame_ms = []
    for i, p in enumerate(paths):
        img = first if i == 0 else read_frame(p)
        if img.shape != (h, w):
            raise RoadspeedError(f"frame {p.name} is {img.width}x{img.height}, expected {w}x{h}")
        t0 = time.perf_counter()
        gray = as_gray(img)
        res = pipe.process(i, gray, keep_stages=cfg.dump_stages)
        frame_ms.append((time.perf_counter() - t0) * 1e3)
        all_records.extend(res.records)
        write_pnm(out / "annotated" / f"frame_{i:06d}.pnm", render_annotations(gray, res, pipe.tracker))
        for s, name in enumerate(STAGES, 1):
            if name in res.stages:
                write_pnm(out / "stages" / f"frame{i}_stage{s}.pnm", res.stages[name])

    (out / "speeds.csv").write_text(format_csv(all_records), encoding="utf-8", newline="\n")
    summary = RunSummary(frames=len(paths), tracks=len(pipe.tracker.tracks),
                         records=len(all_records), mean_ms=float(np.mean(frame_ms)))
    (out / "summary.txt").write_text(summary.as_text(), encoding="utf-8")
    log.info("processed %d frames, %d tracks", summary.frames, summary.tracks)
    return summary


BENCH_STAGES = ("decode", "grayscale", "mask", "subtract", "threshold", "filter",
                "morphology", "label", "blobs", "track")


@dataclass
class BenchReport:
    frames: int
    rows: list[tuple[str, float, float]]  # stage, mean ms, p95 ms

    @property
    def total_mean(self) -> float:
        return self.rows[-1][1]

    def as_table(self) -> str:
        lines = [f"{'stage':<12} {'mean_ms':>9} {'p95_ms':>9}"]
        lines += [f"{name:<12} {mean:9.3f} {p95:9.3f}" for name, mean, p95 in self.rows]
        lines.append(f"({self.frames} frames, single-threaded)")
        return "\n".join(lines)


def bench(cfg: PipelineConfig) -> BenchReport:
    """Single-threaded per-stage latency over the whole sequence."""
    cfg.validate()
    if cfg.v0 is None:
        cfg.v0 = 1.0  # speeds are not reported, any calibration will do
    paths, _, pipe = _open_sequence(cfg)
    h, w = pipe.mask.mask.shape
    for i, p in enumerate(paths):
        img = pipe._timed("decode", read_frame, p)
        if img.shape != (h, w):
            raise RoadspeedError(f"frame {p.name} is {img.width}x{img.height}, expected {w}x{h}")
        gray = pipe._timed("grayscale", as_gray, img)
        pipe.process(i, gray)
    per_stage = {name: np.asarray(pipe.timings[name]) for name in BENCH_STAGES}
    total = sum(per_stage.values())
    rows = [(name, float(v.mean()), float(np.percentile(v, 95))) for name, v in per_stage.items()]
    rows.append(("total", float(total.mean()), float(np.percentile(total, 95))))
    return BenchReport(frames=len(paths), rows=rows)
