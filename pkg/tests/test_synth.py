import math

import numpy as np
import pytest

from roadspeed.detect import connected_components, filter_blobs
from roadspeed.errors import SpecError
from roadspeed.imgcore import Image
from roadspeed.preprocess import threshold
from roadspeed.speed import CalibrationParams, SpeedRecord
from roadspeed.synth import (SceneObject, SceneSpec, XorShift64Star, evaluate, generate_scene,
                             parse_scene_spec, write_truth_csv)

PARAMS = CalibrationParams(k=25, v0=0.5)


def test_xorshift_reference_step():
    # one step by hand from the mixed state of seed 0
    x = 0x9E3779B97F4A7C15
    x ^= x >> 12
    x ^= (x << 25) & (2**64 - 1)
    x ^= x >> 27
    assert XorShift64Star(0).next_u64() == (x * 0x2545F4914F6CDD1D) % 2**64


def test_xorshift_deterministic_and_uniform():
    a, b = XorShift64Star(42), XorShift64Star(42)
    assert [a.next_u64() for _ in range(10)] == [b.next_u64() for _ in range(10)]
    us = [XorShift64Star(7).uniform()] + [a.uniform() for _ in range(20000)]
    assert all(0 <= u < 1 for u in us)
    assert abs(np.mean(us) - 0.5) < 0.01


def test_static_object_gives_identical_frames():
    spec = SceneSpec(width=60, height=40, n_frames=5, objects=[SceneObject(10, 8, 5, 5, 0, 0, 200)])
    frames, truth = generate_scene(spec)
    assert all(f == frames[0] for f in frames)
    assert truth.objects[0].speed_px == 0


def test_moving_rectangle_centroids():
    spec = SceneSpec(width=640, height=480, n_frames=10, objects=[SceneObject(20, 10, 50, 100, 3, 0, 200)])
    frames, truth = generate_scene(spec)
    obj = truth.objects[0]
    assert obj.speed_px == 3
    for i, f in enumerate(frames):
        assert obj.positions[i] == (59.5 + 3 * i, 104.5)
        # cross-check with the detector on the noiseless frame
        _, blobs = filter_blobs(connected_components(threshold(Image.gray(np.abs(
            f.pixels.astype(int) - 90)), 40)), 1)
        assert len(blobs) == 1 and blobs[0].centroid == obj.positions[i]


def test_empty_scene_is_background():
    spec = SceneSpec(width=30, height=20, n_frames=3, background=(10, 200))
    frames, truth = generate_scene(spec)
    assert truth.objects == []
    assert all(f == frames[0] for f in frames)
    assert frames[0].pixels[0, 0] == 10 and frames[0].pixels[0, -1] == 200


def test_clipped_object_truth():
    spec = SceneSpec(width=50, height=50, n_frames=4, objects=[SceneObject(10, 10, 40, 0, 5, 0, 255)])
    _, truth = generate_scene(spec)
    obj = truth.objects[0]
    assert obj.positions[0] == (44.5, 4.5)
    assert obj.positions[1] == (47.0, 4.5) and obj.areas[1] == 50
    assert 2 not in obj.positions


def test_noise_density_and_determinism():
    spec = SceneSpec(width=200, height=100, n_frames=3, noise=0.05, seed=9)
    f1, _ = generate_scene(spec)
    f2, _ = generate_scene(spec)
    assert all(a == b for a, b in zip(f1, f2))
    flipped = np.mean([(f.pixels != 90).mean() for f in f1])
    assert 0.04 < flipped < 0.06
    vals = np.concatenate([f.pixels[f.pixels != 90] for f in f1])
    assert set(np.unique(vals)) == {0, 255}
    f3, _ = generate_scene(SceneSpec(width=200, height=100, n_frames=3, noise=0.05, seed=10))
    assert f3[0] != f1[0]


@pytest.mark.parametrize("bad", [
    SceneSpec(objects=[SceneObject(0, 5, 0, 0, 1, 0, 200)]),
    SceneSpec(noise=1.0),
    SceneSpec(noise=-0.1),
    SceneSpec(n_frames=0),
])
def test_invalid_specs(bad):
    with pytest.raises(SpecError):
        generate_scene(bad)


def test_parse_scene_spec():
    spec = parse_scene_spec("""
        # two cars
        width = 320
        height = 240
        n_frames = 12
        background = gradient 60 120
        noise = 0.002
        seed = 5
        object = 20 10 5 30 3 0 200
        object = 24 12 300 120 -4 0 10
    """)
    assert (spec.width, spec.height, spec.n_frames, spec.seed) == (320, 240, 12, 5)
    assert spec.background == (60, 120)
    assert spec.objects[1] == SceneObject(24, 12, 300.0, 120.0, -4.0, 0.0, 10)


@pytest.mark.parametrize("text", ["noise = 1.5", "object = 1 2 3", "colour = red", "width"])
def test_parse_scene_spec_errors(text):
    with pytest.raises(SpecError):
        parse_scene_spec(text)


def test_truth_csv(tmp_path):
    spec = SceneSpec(width=100, height=50, n_frames=2, objects=[SceneObject(4, 2, 10, 10, 3, 4, 200)])
    _, truth = generate_scene(spec)
    write_truth_csv(tmp_path / "t.csv", truth)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "object_id,frame,cx,cy,speed_px_per_frame"
    assert lines[1] == "1,0,11.50,10.50,5.0000"
    assert lines[2] == "1,1,14.50,14.50,5.0000"


# --- evaluation ---------------------------------------------------------------

def _two_object_truth():
    spec = SceneSpec(width=400, height=200, n_frames=20, objects=[
        SceneObject(20, 10, 10, 30, 4, 0, 200), SceneObject(20, 10, 10, 150, 2, 0, 200)])
    return generate_scene(spec)[1]


def _records_following(truth, assignment, scale=1.0):
    """One record per frame for each (track id -> object id per frame) mapping."""
    recs = []
    objs = {o.id: o for o in truth.objects}
    for tid, per_frame in assignment.items():
        for frame, oid in per_frame:
            o = objs[oid]
            cx, cy = o.positions[frame]
            v = o.speed_kmh(PARAMS) * scale
            recs.append(SpeedRecord(frame, tid, cx, cy, o.speed_px * scale, v, v, False, False))
    return recs


def test_evaluate_perfect():
    truth = _two_object_truth()
    recs = _records_following(truth, {1: [(f, 1) for f in range(1, 20)], 2: [(f, 2) for f in range(1, 20)]})
    m = evaluate(truth, recs, PARAMS)
    assert m.speed_error == {1: 0.0, 2: 0.0}
    assert m.identity_switches == 0 and m.spurious_tracks == {}
    assert m.track_objects == {1: 1, 2: 2}
    assert m.missed == 2  # frame 0 of each object precedes its first displacement


def test_evaluate_ten_percent_high():
    truth = _two_object_truth()
    recs = _records_following(truth, {1: [(f, 1) for f in range(1, 20)]}, scale=1.1)
    m = evaluate(truth, recs, PARAMS)
    assert m.speed_error[1] == pytest.approx(0.10, abs=1e-12)
    assert math.isnan(m.speed_error[2])


def test_evaluate_counts_identity_switch():
    truth = _two_object_truth()
    jumping = [(f, 1) for f in range(1, 10)] + [(f, 2) for f in range(10, 20)]
    m = evaluate(truth, _records_following(truth, {7: jumping}), PARAMS)
    # brute-force: consecutive matched objects along the track differ exactly once
    assert m.identity_switches == 1
    assert m.track_objects == {7: 2}


def test_evaluate_spurious_track():
    truth = _two_object_truth()
    ghost = [SpeedRecord(f, 9, 390.0, 5.0, 0.0, 0.0, 0.0, False, False) for f in range(1, 8)]
    m = evaluate(truth, ghost, PARAMS)
    assert m.spurious_tracks == {9: 8}
    assert m.long_spurious_tracks(5) == [9]
    assert m.spurious_records == 7


def test_evaluate_empty_records():
    truth = _two_object_truth()
    m = evaluate(truth, [], PARAMS)
    assert m.miss_rate == 1.0
    assert m.identity_switches == 0
