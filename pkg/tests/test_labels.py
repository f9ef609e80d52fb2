import numpy as np
import pytest
from shapely.geometry import Point, Polygon
from shapely.ops import unary_union

from pgspot.core.errors import AnnotationError
from pgspot.core.labels import QuadChain, decompose_to_quads, generate_label_maps, sample_centerline
from pgspot.models.annotation import WordAnnotation
from tests.conftest import rect_word, rotated_word

DIMS = (16, 16)


def band_word(centers, normals, half_height, text):
    top = centers - half_height * normals
    bottom = centers + half_height * normals
    poly = np.concatenate([top, bottom[::-1]])
    return WordAnnotation(poly=[tuple(p) for p in poly], text=text)


def arc_word(center, radius, start, stop, count, half_height, text="CURVE"):
    theta = np.linspace(start, stop, count)
    radial = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    return band_word(np.asarray(center) + radius * radial, -radial, half_height, text)


def test_rectangle_is_one_quad(word_box):
    quads = decompose_to_quads(word_box)
    assert len(quads) == 1
    np.testing.assert_allclose(quads[0], [(8, 8), (48, 8), (48, 40), (8, 40)])


def test_eight_vertices_give_three_quads():
    top = [(0, 0), (10, 0), (20, 0), (30, 0)]
    bottom = [(30, 10), (20, 10), (10, 10), (0, 10)]
    assert len(decompose_to_quads(WordAnnotation(poly=top + bottom, text="ABC"))) == 3


def test_s_curve_quads_tile_the_polygon():
    x = np.linspace(10, 130, 7)
    y = 40 + 12 * np.sin(np.linspace(0, 2 * np.pi, 7))
    word = band_word(np.stack([x, y], axis=1), np.tile([0.0, 1.0], (7, 1)), 6.0, "SCURVE")
    quads = decompose_to_quads(word)
    assert len(word.poly) == 14 and len(quads) == 6
    union = unary_union([Polygon(q) for q in quads]).area
    assert union == pytest.approx(Polygon(word.poly).area, rel=0.01)


def test_self_intersecting_annotation_is_rejected():
    with pytest.raises(ValueError):
        WordAnnotation(poly=[(0, 0), (10, 10), (10, 0), (0, 10)], text="X")


def test_tdo_magnitude_follows_character_count(word_box):
    maps = generate_label_maps([word_box], DIMS).maps
    assert maps.tcl[6, 6, 0] == 1.0
    np.testing.assert_allclose(maps.tdo[6, 6], (2.5, 0.0))
    on = maps.tcl[..., 0] > 0
    np.testing.assert_allclose(maps.tdo[on], np.tile([2.5, 0.0], (on.sum(), 1)))


def test_centerline_cell_has_symmetric_border_offsets(word_box):
    maps = generate_label_maps([word_box], DIMS).maps
    np.testing.assert_allclose(maps.tbo[6, 6], (0.0, -4.0, 0.0, 4.0), atol=1e-12)


def test_tcl_is_shrunk_inside_the_word(word_box):
    maps = generate_label_maps([word_box], DIMS).maps
    ys, xs = np.nonzero(maps.tcl[..., 0])
    assert set(ys) == {5, 6, 7}
    assert xs.min() == 4 and xs.max() == 10


def test_rotated_word_reverses_tdo():
    maps = generate_label_maps([rotated_word(8, 8, 48, 40, "WORD")], DIMS).maps
    np.testing.assert_allclose(maps.tdo[6, 6], (-2.5, 0.0))
    np.testing.assert_allclose(maps.tbo[6, 6], (0.0, 4.0, 0.0, -4.0), atol=1e-12)


def test_first_word_keeps_shared_cells():
    a = rect_word(8, 8, 48, 40, "AB")
    b = rect_word(8, 8, 48, 40, "ABCD")
    labels = generate_label_maps([a, b], DIMS)
    assert (labels.owner[labels.maps.tcl[..., 0] > 0] == 0).all()
    np.testing.assert_allclose(labels.maps.tdo[6, 6], (5.0, 0.0))


def test_ignore_words_mark_the_ignore_mask():
    labels = generate_label_maps([rect_word(8, 8, 48, 40, "###", ignore=True)], DIMS)
    assert labels.ignore[6, 6]
    assert labels.maps.tcc.sum() == 0.0


def test_tiny_word_is_skipped_with_warning(caplog):
    labels = generate_label_maps([rect_word(8, 8, 10, 30, "A")], DIMS)
    assert labels.maps.tcl.sum() == 0.0
    assert "smaller than one map cell" in caplog.text


def test_empty_transcript_needs_ignore_flag():
    with pytest.raises(AnnotationError):
        generate_label_maps([rect_word(8, 8, 48, 40, "")], DIMS)


def test_sampling_meets_the_length_bound(word_box):
    pi = sample_centerline(rect_word(8, 8, 48, 40, "AB"), DIMS)
    assert len(pi) == 11 and pi.feasible
    np.testing.assert_allclose(pi.points[:, 1], 6.0)
    np.testing.assert_allclose(np.diff(pi.points[:, 0]), 1.0)


def test_sampling_shrinks_the_step_when_needed():
    pi = sample_centerline(rect_word(8, 8, 48, 40, "ABCDEFG"), DIMS)
    assert pi.feasible and len(pi) >= 15


def test_sampling_flags_infeasible_words():
    pi = sample_centerline(rect_word(8, 8, 48, 40, "A" * 30), DIMS)
    assert not pi.feasible


def test_sampling_follows_a_u_shaped_word():
    word = arc_word((48, 32), 20, 4 * np.pi / 3, -np.pi / 3, 13, 6.0)
    pi = sample_centerline(word, (20, 24))
    steps = np.linalg.norm(np.diff(pi.points, axis=0), axis=1)
    assert np.all(steps <= 1.0 + 1e-9) and np.all(steps > 0.5)
    dx = np.diff(pi.points[:, 0])
    assert (dx > 0).any() and (dx < 0).any()
    chain = QuadChain(word)
    np.testing.assert_allclose(pi.points[0], chain.centers[0], atol=1e-9)


def test_sampling_refuses_ignore_words():
    with pytest.raises(AnnotationError):
        sample_centerline(rect_word(8, 8, 48, 40, "###", ignore=True), DIMS)


@pytest.fixture
def u_word():
    # radius 12 cells, spanning 5/3 pi of arc
    return arc_word((96, 80), 48, 4 * np.pi / 3, -np.pi / 3, 13, 14.0)


def test_border_offsets_land_on_the_word_boundary(u_word):
    maps = generate_label_maps([u_word], (40, 48)).maps
    ys, xs = np.nonzero(maps.tcl[..., 0] > 0)
    assert len(xs) > 20
    boundary = Polygon(np.asarray(u_word.poly) / 4).exterior
    cells = np.stack([xs, ys], axis=1).astype(np.float64)
    for border in (cells + maps.tbo[ys, xs, :2], cells + maps.tbo[ys, xs, 2:]):
        assert max(boundary.distance(Point(x, y)) for x, y in border) <= 1.0


def test_direction_offsets_add_up_to_the_center_line(u_word):
    maps = generate_label_maps([u_word], (40, 48)).maps
    on = maps.tcl[..., 0] > 0
    step = np.linalg.norm(maps.tdo[on], axis=1).mean()
    arc = 12.0 * 5 * np.pi / 3
    assert step * len(u_word.text) == pytest.approx(arc, rel=0.05)
