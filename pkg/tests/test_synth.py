import numpy as np
import pytest
from shapely.geometry import Point, Polygon

from pgspot.core.ctc import CHARSET, gather_points, greedy_decode
from pgspot.core.evalkit import detection_hmean, e2e_score
from pgspot.core.labels import generate_label_maps, sample_centerline
from pgspot.core.postprocess import spot, to_records
from pgspot.core.synth import oracle_tcc, perturb, render_scene, scene_maps, scene_record
from pgspot.models.configs import NoiseConfig, SceneConfig, SpotConfig
from pgspot.models.reports import ImageResults
from tests.conftest import rect_word


def test_same_seed_same_scene():
    a, b = render_scene(5), render_scene(5)
    np.testing.assert_array_equal(a.image, b.image)
    assert a.annotations == b.annotations
    assert not np.array_equal(a.image, render_scene(6).image)


def test_straight_words_have_four_vertices():
    for seed in range(5):
        scene = render_scene(seed, SceneConfig(curved_fraction=0.0))
        assert scene.annotations
        assert all(len(w.poly) == 4 for w in scene.annotations)


def test_curved_words_have_one_edge_vertex_per_glyph_boundary():
    scene = render_scene(2, SceneConfig(curved_fraction=1.0, curvature_range=(0.1, 0.2)))
    for word in scene.annotations:
        assert len(word.poly) == 2 * (len(word.text) + 1)


def test_upside_down_twin_reverses_reading_direction():
    one_word = dict(min_words=1, max_words=1, curved_fraction=0.0)
    upright = render_scene(9, SceneConfig(rotation_range=(0.0, 0.0), **one_word))
    flipped = render_scene(9, SceneConfig(rotation_range=(180.0, 180.0), **one_word))
    assert upright.annotations[0].text == flipped.annotations[0].text
    a = generate_label_maps(upright.annotations, upright.map_dims).maps
    b = generate_label_maps(flipped.annotations, flipped.map_dims).maps
    both = (a.tcl[..., 0] > 0) & (b.tcl[..., 0] > 0)
    assert both.any()
    np.testing.assert_allclose(b.tdo[both], -a.tdo[both], atol=1e-6)


def test_oracle_is_background_away_from_words():
    scene = render_scene(3)
    tcc = oracle_tcc(scene)
    assert tcc.shape == scene.map_dims + (37,)
    shapes = [Polygon(np.asarray(w.poly) / 4).buffer(1.0) for w in scene.annotations]
    ys, xs = np.nonzero(tcc.argmax(axis=2) != CHARSET.blank)
    assert len(ys) > 0
    assert all(any(s.contains(Point(x, y)) for s in shapes) for x, y in zip(xs, ys))
    assert (oracle_tcc([], (6, 6)).argmax(axis=2) == CHARSET.blank).all()


def test_oracle_separates_repeated_characters():
    word = rect_word(8, 8, 104, 44, "AA")
    dims = (16, 32)
    pi = sample_centerline(word, dims)
    assert greedy_decode(gather_points(oracle_tcc([word], dims), pi))[0] == "AA"


def test_perturb_without_noise_is_a_copy():
    maps = scene_maps(render_scene(1))
    out = perturb(maps, NoiseConfig())
    assert out is not maps
    for name in ("tcl", "tbo", "tdo", "tcc"):
        np.testing.assert_array_equal(getattr(out, name), getattr(maps, name))


def test_full_flip_rate_inverts_the_center_line():
    maps = scene_maps(render_scene(1))
    out = perturb(maps, NoiseConfig(tcl_flip_rate=1.0))
    np.testing.assert_array_equal(out.tcl, 1.0 - maps.tcl)
    np.testing.assert_array_equal(out.tcc, maps.tcc)


def test_label_noise_moves_the_argmax():
    maps = scene_maps(render_scene(1))
    out = perturb(maps, NoiseConfig(tcc_label_noise=1.0), seed=4)
    assert (out.tcc.argmax(axis=2) != maps.tcc.argmax(axis=2)).all()


def test_scene_record_carries_the_image_size():
    scene = render_scene(0, SceneConfig(width=96, height=64))
    record = scene_record(scene, "images/scene_00000.pgm")
    assert (record.width, record.height) == (96, 64)
    assert record.words == scene.annotations


def test_oracle_keeps_each_center_line_to_its_owner():
    first, second = rect_word(8, 8, 104, 44, "AB"), rect_word(8, 30, 104, 66, "CD")
    dims = (20, 32)
    labels = generate_label_maps([first, second], dims)
    owned = labels.owner == 0
    assert owned.any()
    alone = oracle_tcc([first], dims)
    np.testing.assert_array_equal(oracle_tcc([first, second], dims, labels.owner)[owned], alone[owned])
    assert (oracle_tcc([first, second], dims)[owned] != alone[owned]).any()


def test_perturbation_grows_with_the_noise_level():
    maps = scene_maps(render_scene(1))
    levels = [0.0, 0.05, 0.2, 0.5]
    swapped = [
        (perturb(maps, NoiseConfig(tcc_label_noise=r), seed=3).tcc.argmax(axis=2) != maps.tcc.argmax(axis=2)).mean()
        for r in levels
    ]
    flipped = [np.abs(perturb(maps, NoiseConfig(tcl_flip_rate=r), seed=3).tcl - maps.tcl).mean() for r in levels]
    jittered = [np.abs(perturb(maps, NoiseConfig(offset_jitter=r), seed=3).tbo - maps.tbo).mean() for r in levels]
    for series in (swapped, flipped, jittered):
        assert series[0] == 0.0
        assert all(a < b for a, b in zip(series, series[1:]))


def oracle_results(seeds, config=None):
    preds, gts = [], []
    for seed in seeds:
        scene = render_scene(seed, config)
        name = f"scene_{seed:05d}"
        preds.append(ImageResults(image=name, results=to_records(spot(scene_maps(scene)))))
        gts.append(scene_record(scene, name))
    return preds, gts


def test_short_curved_word_restores_tightly():
    preds, gts = oracle_results([25])
    det = detection_hmean(preds, gts)
    assert det.fp == 0 and det.fn == 0
    assert min(pair.iou for pair in det.pairs) >= 0.8


@pytest.mark.slow
def test_oracle_maps_spot_every_word():
    preds, gts = oracle_results(range(100))
    det = detection_hmean(preds, gts)
    assert det.hmean == 1.0
    assert e2e_score(preds, gts).hmean == 1.0
    assert len(det.pairs) == sum(len(gt.words) for gt in gts)
    assert min(pair.iou for pair in det.pairs) >= 0.8


@pytest.mark.slow
def test_upside_down_scenes_read_backwards_without_the_direction_map():
    config = SceneConfig(rotation_range=(180.0, 180.0))
    for seed in range(50):
        scene = render_scene(seed, config)
        maps = scene_maps(scene)
        texts = sorted(word.text for word in scene.annotations)
        assert sorted(r.transcript for r in spot(maps)) == texts
        backwards = sorted(r.transcript for r in spot(maps, SpotConfig(use_tdo=False)))
        assert backwards == sorted(text[::-1] for text in texts)
