import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadspeed.detect import (PALETTE, EdgeKernel, LabelMap, assign_colors, blob_stats, centroid,
                              color_labels, connected_components, edge_magnitude, filter_blobs)
from roadspeed.errors import ContractError
from roadspeed.imgcore import Image

from oracles import direct_centroid, flood_fill_components


def label_partition(lm):
    return {frozenset(map(tuple, np.argwhere(lm.labels == k))) for k in range(1, lm.n_components + 1)}


# --- edges -----------------------------------------------------------------

@pytest.mark.parametrize("kernel", list(EdgeKernel))
def test_edges_of_constant_image(kernel):
    img = Image.gray(np.full((5, 5), 120, dtype=np.uint8))
    assert not edge_magnitude(img, kernel).pixels.any()


def test_prewitt_vertical_step():
    px = np.zeros((5, 5), dtype=np.uint8)
    px[:, 2:] = 255
    out = edge_magnitude(Image.gray(px), "prewitt").pixels
    # |Gx| = 3 * 255 on the two columns flanking the step, zero elsewhere
    assert out[:, 1].tolist() == [255] * 5
    assert out[:, 2].tolist() == [255] * 5
    assert not out[:, [0, 3, 4]].any()


def test_sobel_gentle_ramp_unclamped():
    px = np.tile(np.array([0, 10, 20, 30, 40], dtype=np.uint8), (5, 1))
    out = edge_magnitude(Image.gray(px), EdgeKernel.SOBEL).pixels
    # interior: Gx = (1 + 2 + 1) * 20
    assert out[2, 2] == 80


def test_laplacian_spike_clamps():
    px = np.zeros((5, 5), dtype=np.uint8)
    px[2, 2] = 255
    out = edge_magnitude(Image.gray(px), "laplacian").pixels
    assert out[2, 2] == 255
    assert out[1, 2] == 255 and out[0, 0] == 0


def test_edges_need_3x3():
    with pytest.raises(ContractError):
        edge_magnitude(Image.gray(np.zeros((2, 5))), "sobel")


# --- connected components ---------------------------------------------------

def test_two_blocks():
    px = np.zeros((6, 8), dtype=np.uint8)
    px[0:2, 0:2] = 1
    px[3:5, 5:7] = 1
    lm = connected_components(Image.binary(px))
    assert lm.n_components == 2
    assert sorted(b.area for b in blob_stats(lm)) == [4, 4]


def test_diagonal_connectivity():
    px = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    assert connected_components(Image.binary(px), 8).n_components == 1
    assert connected_components(Image.binary(px), 4).n_components == 2


def test_empty_image():
    lm = connected_components(Image.binary(np.zeros((4, 4))))
    assert lm.n_components == 0
    assert not lm.labels.any()


def test_raster_order_numbering():
    px = np.array([
        [0, 0, 0, 1],
        [1, 0, 0, 1],
        [1, 0, 1, 1],
        [0, 0, 0, 0],
        [0, 1, 0, 0],
    ], dtype=np.uint8)
    lm = connected_components(Image.binary(px), 4)
    assert lm.labels.tolist() == [
        [0, 0, 0, 1],
        [2, 0, 0, 1],
        [2, 0, 1, 1],
        [0, 0, 0, 0],
        [0, 3, 0, 0],
    ]


def test_u_shape_merges_late():
    px = np.array([
        [1, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
    ], dtype=np.uint8)
    lm = connected_components(Image.binary(px), 4)
    assert lm.n_components == 1
    assert set(np.unique(lm.labels)) == {0, 1}


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), density=st.floats(0.1, 0.7), conn=st.sampled_from([4, 8]))
def test_components_match_flood_fill(seed, density, conn):
    rng = np.random.default_rng(seed)
    px = (rng.random((32, 32)) < density).astype(np.uint8)
    lm = connected_components(Image.binary(px), conn)
    assert label_partition(lm) == set(flood_fill_components(px.tolist(), conn))
    # first pixels of components appear in increasing raster order
    firsts = [np.flatnonzero(lm.labels.reshape(-1) == k)[0] for k in range(1, lm.n_components + 1)]
    assert firsts == sorted(firsts)


# --- blobs -----------------------------------------------------------------

def _lm_with_areas():
    px = np.zeros((30, 30), dtype=np.uint8)
    px[0, 0:3] = 1  # area 3
    px[10:30, 10:20] = 1  # area 200
    return connected_components(Image.binary(px))


def test_filter_min_area_one_is_identity():
    lm = _lm_with_areas()
    out, blobs = filter_blobs(lm, 1)
    assert out == lm
    assert [b.area for b in blobs] == [3, 200]


def test_filter_drops_small():
    out, blobs = filter_blobs(_lm_with_areas(), 150)
    assert out.n_components == 1
    assert [(b.label, b.area) for b in blobs] == [(1, 200)]
    assert blobs[0].bbox == (10, 10, 19, 29)
    assert blobs[0].centroid == (14.5, 19.5)
    assert set(np.unique(out.labels)) == {0, 1}


def test_filter_everything():
    out, blobs = filter_blobs(_lm_with_areas(), 1000)
    assert blobs == [] and out.n_components == 0 and not out.labels.any()


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_blob_invariants(seed):
    rng = np.random.default_rng(seed)
    px = (rng.random((24, 24)) < 0.35).astype(np.uint8)
    lm = connected_components(Image.binary(px))
    blobs = blob_stats(lm)
    assert sum(b.area for b in blobs) == int(px.sum())
    for b in blobs:
        x0, y0, x1, y1 = b.bbox
        assert x0 <= b.centroid[0] <= x1 and y0 <= b.centroid[1] <= y1
        assert b.area <= (x1 - x0 + 1) * (y1 - y0 + 1)
        pts = [(x, y) for y, x in np.argwhere(lm.labels == b.label)]
        assert b.centroid == pytest.approx(direct_centroid(pts), abs=1e-9)


def test_centroid_examples():
    assert centroid([(7, 3)]) == (7.0, 3.0)
    assert centroid([(10, 10), (11, 10), (10, 11), (11, 11)]) == (10.5, 10.5)
    cx, cy = centroid([(0, 0), (1, 0), (0, 1)])
    assert cx == pytest.approx(1 / 3, abs=1e-15) and cy == pytest.approx(1 / 3, abs=1e-15)


def test_centroid_empty():
    with pytest.raises(ContractError):
        centroid([])


# --- colouring ---------------------------------------------------------------

def test_single_component_gets_first_colour():
    px = np.zeros((5, 5), dtype=np.uint8)
    px[1:3, 1:3] = 1
    img = color_labels(connected_components(Image.binary(px)))
    assert tuple(img.pixels[1, 1]) == PALETTE[0]
    assert tuple(img.pixels[0, 0]) == (0, 0, 0)


def test_touching_components_differ():
    # diagonal contact: separate under 4-connectivity, neighbours for colouring
    px = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]], dtype=np.uint8)
    lm = connected_components(Image.binary(px), 4)
    colors, exhausted = assign_colors(lm)
    assert lm.n_components == 2 and not exhausted
    assert colors[1] != colors[2]


def test_chain_colouring():
    # A - B - C in a row with one-pixel gaps, A and C far apart
    px = np.zeros((3, 20), dtype=np.uint8)
    px[:, 0:4] = 1
    px[:, 5:9] = 1
    px[:, 10:14] = 1
    lm = connected_components(Image.binary(px))
    colors, _ = assign_colors(lm)
    assert [colors[1], colors[2], colors[3]] == [0, 1, 0]


def test_palette_exhaustion_warns(caplog):
    # 13 labels whose bboxes all contain the centre, so all are mutual neighbours
    labels = np.zeros((26, 26), dtype=np.int32)
    for k in range(13):
        labels[k, k] = labels[25 - k, 25 - k] = k + 1
    lm = LabelMap(labels, 13)
    colors, exhausted = assign_colors(lm)
    assert exhausted
    with caplog.at_level(logging.WARNING):
        color_labels(lm)
    assert "exhausted" in caplog.text


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_adjacent_labels_never_share_colour(seed):
    rng = np.random.default_rng(seed)
    px = (rng.random((20, 20)) < 0.3).astype(np.uint8)
    lm = connected_components(Image.binary(px), 4)
    colors, exhausted = assign_colors(lm)
    if exhausted:
        return
    L = np.pad(lm.labels, 1)
    h, w = lm.labels.shape
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            a = lm.labels
            b = L[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            sel = (a > 0) & (b > 0) & (a != b)
            for la, lb in zip(a[sel], b[sel]):
                assert colors[int(la)] != colors[int(lb)]
