import cv2
import numpy as np
import pytest
from shapely.geometry import Polygon

from pgspot.core import postprocess
from pgspot.core.evalkit import polygon_iou
from pgspot.core.labels import generate_label_maps
from pgspot.core.postprocess import extract_regions, order_centerline, restore_polygon, spot, thin_skeleton, to_records
from pgspot.core.synth import oracle_tcc
from pgspot.models.configs import SpotConfig
from pgspot.models.maps import CenterPointSequence, MapSet
from tests.conftest import rect_word


def shoelace(poly) -> float:
    x, y = np.asarray(poly)[:, 0], np.asarray(poly)[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def line_sequence(xs, y=10.0) -> CenterPointSequence:
    points = np.stack([np.asarray(xs, dtype=np.float64), np.full(len(xs), y)], axis=1)
    return CenterPointSequence(points, np.tile([1.0, 0.0], (len(xs), 1)))


def constant_tbo(upper_dy=-4.0, lower_dy=4.0, shape=(20, 20)):
    tbo = np.zeros(shape + (4,))
    tbo[..., 1] = upper_dy
    tbo[..., 3] = lower_dy
    return tbo


def ground_truth_maps(words, dims) -> MapSet:
    labels = generate_label_maps(words, dims)
    maps = labels.maps
    maps.tcc = oracle_tcc(words, dims, labels.owner)
    return maps


def test_two_blobs_two_regions_in_raster_order():
    tcl = np.zeros((10, 10, 1))
    tcl[6:9, 6:9] = 1.0
    tcl[1:3, 1:3] = 1.0
    regions = extract_regions(tcl, 0.5, 1)
    assert len(regions) == 2
    assert regions[0][1, 1] and regions[1][6, 6]


def test_empty_map_has_no_regions():
    assert extract_regions(np.zeros((8, 8)), 0.5, 1) == []


def test_diagonal_neighbours_join():
    tcl = np.zeros((6, 6))
    tcl[2, 2] = tcl[3, 3] = 1.0
    assert len(extract_regions(tcl, 0.5, 1)) == 1


def test_small_regions_are_dropped():
    tcl = np.zeros((6, 6))
    tcl[1, 1] = 1.0
    tcl[3:5, 3:5] = 1.0
    assert len(extract_regions(tcl, 0.5, 4)) == 1


def test_thin_rectangle_to_a_row():
    mask = np.zeros((7, 9), dtype=bool)
    mask[2:5, 2:7] = True
    ys, xs = np.nonzero(thin_skeleton(mask))
    assert set(ys) == {3}
    assert 1 <= len(xs) <= 5


def test_thin_single_pixel_is_kept():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 2] = True
    np.testing.assert_array_equal(thin_skeleton(mask), mask)


def _blob(seed):
    rng = np.random.default_rng(seed)
    noise = cv2.GaussianBlur(rng.random((24, 24)).astype(np.float32), (7, 7), 0)
    return noise > 0.5


def _has_block(skeleton) -> bool:
    return bool((skeleton[:-1, :-1] & skeleton[1:, :-1] & skeleton[:-1, 1:] & skeleton[1:, 1:]).any())


@pytest.mark.parametrize("seed", range(20))
def test_thinning_is_idempotent_and_inside(seed):
    mask = _blob(seed)
    once = thin_skeleton(mask)
    np.testing.assert_array_equal(thin_skeleton(once), once)
    assert not (once & ~mask).any()
    assert not _has_block(once)


def test_thinning_breaks_up_a_corner_block():
    mask = np.zeros((8, 12), dtype=bool)
    mask[3, 1:6] = True
    mask[4, 4:10] = True
    thinned = thin_skeleton(mask)
    assert not _has_block(thinned)
    assert cv2.connectedComponents(thinned.astype(np.uint8), connectivity=8)[0] == 2
    assert thinned[3, 1] and thinned[4, 9]


@pytest.mark.slow
def test_thinning_keeps_component_count():
    for seed in range(200):
        mask = _blob(seed)
        before = cv2.connectedComponents(mask.astype(np.uint8), connectivity=8)[0]
        thinned = thin_skeleton(mask)
        after = cv2.connectedComponents(thinned.astype(np.uint8), connectivity=8)[0]
        assert before == after
        assert not _has_block(thinned)


def _row_skeleton():
    skeleton = np.zeros((10, 12), dtype=bool)
    skeleton[5, 2:9] = True
    return skeleton


def test_order_follows_tdo():
    tdo = np.zeros((10, 12, 2))
    tdo[..., 0] = 1.0
    pi = order_centerline(_row_skeleton(), tdo)
    assert list(pi.points[:, 0]) == list(range(2, 9))
    pi = order_centerline(_row_skeleton(), -tdo)
    assert list(pi.points[:, 0]) == list(range(8, 1, -1))


def test_order_without_tdo_reads_left_to_right():
    tdo = np.zeros((10, 12, 2))
    tdo[..., 0] = -1.0
    pi = order_centerline(_row_skeleton(), tdo, use_tdo=False)
    assert list(pi.points[:, 0]) == list(range(2, 9))
    assert "no-tdo" in pi.flags


@pytest.mark.parametrize("seed", range(5))
def test_order_is_a_permutation_of_the_skeleton(seed, rng):
    skeleton = thin_skeleton(_blob(seed))
    tdo = rng.normal(size=skeleton.shape + (2,))
    pi = order_centerline(skeleton, tdo)
    ys, xs = np.nonzero(skeleton)
    assert len(pi) == len(xs)
    assert sorted(map(tuple, pi.points.astype(int).tolist())) == sorted(zip(xs.tolist(), ys.tolist()))


def test_order_flags_weak_direction():
    pi = order_centerline(_row_skeleton(), np.zeros((10, 12, 2)))
    assert "weak-direction" in pi.flags
    assert list(pi.points[:, 0]) == list(range(2, 9))


def test_order_along_an_arc():
    cx, cy, r = 12.0, 2.0, 10.0
    xs = np.arange(7, 18)
    ys = np.round(cy + np.sqrt(r * r - (xs - cx) ** 2)).astype(int)
    skeleton = np.zeros((16, 24), dtype=bool)
    skeleton[ys, xs] = True
    tdo = np.zeros((16, 24, 2))
    theta = np.arctan2(ys - cy, xs - cx)
    tdo[ys, xs] = np.stack([np.sin(theta), -np.cos(theta)], axis=1)
    pi = order_centerline(skeleton, tdo)
    angles = np.arctan2(pi.points[:, 1] - cy, pi.points[:, 0] - cx)
    assert np.all(np.diff(angles) < 0)


def test_restore_rectangle_from_constant_offsets():
    polygon, flags = restore_polygon(line_sequence(range(5, 16)), constant_tbo(), expand_ratio=0.0)
    assert flags == []
    assert len(polygon) == 14
    shape = Polygon(polygon)
    assert shape.bounds == pytest.approx((5.0, 6.0, 15.0, 14.0))
    assert shape.area == pytest.approx(80.0)
    assert shoelace(polygon) > 0


def test_restore_extends_the_ends():
    polygon, _ = restore_polygon(line_sequence(range(5, 16)), constant_tbo(), expand_ratio=0.3)
    assert Polygon(polygon).bounds == pytest.approx((2.6, 6.0, 17.4, 14.0))


def test_restore_reaches_the_region_ends():
    region = np.zeros((20, 20), dtype=bool)
    region[9:12, 5:16] = True
    pi = line_sequence(range(7, 14))
    polygon, _ = restore_polygon(pi, constant_tbo(), expand_ratio=0.0, region=region)
    assert Polygon(polygon).bounds == pytest.approx((4.5, 6.0, 15.5, 14.0))
    polygon, _ = restore_polygon(pi, constant_tbo(), expand_ratio=0.15, region=region)
    assert Polygon(polygon).bounds == pytest.approx((3.3, 6.0, 16.7, 14.0))


def test_restore_two_points_is_a_quad():
    polygon, _ = restore_polygon(line_sequence([5, 6]), constant_tbo())
    assert len(polygon) == 4
    assert Polygon(polygon).is_valid and shoelace(polygon) > 0


def test_restore_single_point_is_widened():
    polygon, flags = restore_polygon(line_sequence([5]), constant_tbo())
    assert "single-point" in flags
    assert len(polygon) == 4 and Polygon(polygon).area > 0


def test_restore_keeps_clockwise_when_borders_swap():
    polygon, _ = restore_polygon(line_sequence(range(5, 16)), constant_tbo(4.0, -4.0), expand_ratio=0.0)
    assert shoelace(polygon) > 0
    assert Polygon(polygon).area == pytest.approx(80.0)


def test_restore_keeps_every_point_without_a_vertex_cap():
    polygon, _ = restore_polygon(line_sequence(range(5, 16)), constant_tbo(), max_vertices=None)
    assert len(polygon) == 22


def test_spot_on_empty_maps():
    assert spot(MapSet.empty(16, 16)) == []


@pytest.mark.parametrize("text", ["AB", "AA"])
def test_spot_round_trip_of_a_word(text):
    word = rect_word(8, 8, 104, 44, text)
    results = spot(ground_truth_maps([word], (16, 32)))
    assert len(results) == 1
    assert results[0].transcript == text
    assert polygon_iou(results[0].pixel_polygon(), word.poly) >= 0.8


def test_shrunk_center_lines_keep_touching_words_apart():
    words = [rect_word(8, 8, 104, 44, "AB"), rect_word(8, 44, 104, 80, "CD")]
    results = spot(ground_truth_maps(words, (24, 28)))
    assert [r.transcript for r in results] == ["AB", "CD"]


def test_spot_reads_backwards_without_tdo():
    word = rect_word(8, 8, 104, 44, "AB")
    maps = ground_truth_maps([word], (16, 32))
    maps.tdo = -maps.tdo
    assert spot(maps)[0].transcript == "BA"
    assert spot(maps, SpotConfig(use_tdo=False))[0].transcript == "AB"


def test_no_suppression_or_cropping_step():
    names = [name.lower() for name in dir(postprocess)]
    assert not any(word in name for name in names for word in ("nms", "suppress", "crop", "roi"))


def test_records_are_in_input_pixels():
    word = rect_word(8, 8, 104, 44, "AB")
    results = spot(ground_truth_maps([word], (16, 32)))
    record = to_records(results, with_points=True)[0]
    np.testing.assert_allclose(record.poly, results[0].polygon * 4)
    np.testing.assert_allclose(record.points, results[0].center.points * 4)
    assert to_records(results)[0].points is None
