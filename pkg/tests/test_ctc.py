import math

import numpy as np
import pytest

from pgspot.core.autodiff import Node, backward_pass, finite_diff_check, softmax_rows
from pgspot.core.ctc import (
    CHARSET,
    ctc_loss_bruteforce,
    ctc_loss_grad,
    ctc_loss_node,
    encode_transcript,
    gather_points,
    greedy_decode,
    pg_ctc_loss,
    required_frames,
)
from pgspot.core.errors import InfeasibleAlignmentError, OracleScaleError, PointOutOfBoundsError
from pgspot.models.maps import CenterPointSequence

BLANK = CHARSET.blank


def sequence(points) -> CenterPointSequence:
    points = np.asarray(points, dtype=np.float64)
    return CenterPointSequence(points, np.tile([1.0, 0.0], (len(points), 1)))


def one_hot_rows(classes, hot=0.9):
    rows = np.full((len(classes), CHARSET.num_classes), (1 - hot) / (CHARSET.num_classes - 1))
    rows[np.arange(len(classes)), classes] = hot
    return rows


def test_encode_transcript():
    assert encode_transcript("Move").indices == (12, 14, 21, 4)
    assert encode_transcript("A1").indices == (0, 26)
    encoded = encode_transcript("CAFÉ")
    assert encoded.ignore and encoded.indices == ()


def test_required_frames_counts_repeats():
    assert required_frames([0, 1]) == 2
    assert required_frames([0, 0]) == 3
    assert required_frames([11, 4, 4, 19]) == 5


def test_gather_points_one_hot_spike():
    tcc = np.zeros((4, 5, 37))
    tcc[1, 2, 7] = 50.0
    probs = gather_points(tcc, sequence([(2, 1)]))
    np.testing.assert_allclose(probs.probs[0], np.eye(37)[7], atol=1e-12)


def test_gather_points_nearest_cell_and_empty():
    tcc = np.zeros((4, 5, 37))
    tcc[2, 2, 3] = 50.0
    assert gather_points(tcc, sequence([(2.4, 1.6)])).probs[0].argmax() == 3
    empty = gather_points(tcc, sequence(np.zeros((0, 2))))
    assert len(empty) == 0


def test_gather_points_reports_first_outside_point():
    tcc = np.zeros((4, 5, 37))
    with pytest.raises(PointOutOfBoundsError) as info:
        gather_points(tcc, sequence([(1, 1), (9, 1), (10, 1)]))
    assert info.value.index == 1


def test_ctc_single_alignment():
    probs = np.full((1, 37), 0.7 / 36)
    probs[0, 0] = 0.3
    loss, _ = ctc_loss_grad(probs, [0])
    assert loss == pytest.approx(-math.log(0.3), abs=1e-12)


def test_ctc_uniform_five_alignments():
    probs = np.full((3, 37), 1 / 37)
    loss, _ = ctc_loss_grad(probs, [0, 1])
    expected = -math.log(5 * (1 / 37) ** 3)
    assert loss == pytest.approx(expected, abs=1e-10)
    assert ctc_loss_bruteforce(probs, [0, 1]) == pytest.approx(expected, abs=1e-10)


def test_ctc_gradient_rows_sum_to_zero(rng):
    probs = softmax_rows(rng.normal(size=(5, 37)))
    _, grad = ctc_loss_grad(probs, [3, 3])
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-12)


def test_ctc_infeasible_is_distinct_error():
    probs = np.full((2, 37), 1 / 37)
    with pytest.raises(InfeasibleAlignmentError, match="infeasible"):
        ctc_loss_grad(probs, [0, 0])


def test_bruteforce_sentinels():
    probs = np.full((2, 37), 1 / 37)
    assert ctc_loss_bruteforce(probs, [0, 1, 2]) == math.inf
    assert ctc_loss_bruteforce(probs, [0, 0]) == math.inf
    with pytest.raises(OracleScaleError):
        ctc_loss_bruteforce(np.full((7, 37), 1 / 37), [0])


def _random_instance(rng):
    frames = int(rng.integers(1, 7))
    while True:
        length = int(rng.integers(1, frames + 1))
        label = [int(c) for c in rng.integers(0, 4, size=length)]
        if required_frames(label) <= frames:
            break
    probs = softmax_rows(rng.normal(scale=2.0, size=(frames, 37)))
    return probs, label


def test_forward_backward_matches_enumeration():
    rng = np.random.default_rng(7)
    for _ in range(100):
        probs, label = _random_instance(rng)
        loss, _ = ctc_loss_grad(probs, label)
        assert abs(loss - ctc_loss_bruteforce(probs, label)) <= 1e-8


@pytest.mark.slow
def test_forward_backward_matches_enumeration_500():
    rng = np.random.default_rng(11)
    for _ in range(500):
        probs, label = _random_instance(rng)
        loss, _ = ctc_loss_grad(probs, label)
        assert abs(loss - ctc_loss_bruteforce(probs, label)) <= 1e-8


@pytest.mark.parametrize("frames", [5, 6])
def test_ctc_node_gradient(frames, rng):
    err = finite_diff_check(lambda n: ctc_loss_node(n, [0, 1]), rng.normal(size=(frames, 37)))
    assert err <= 1e-4


def test_pg_ctc_single_instance_is_plain_ctc(rng):
    tcc = rng.normal(size=(3, 4, 37))
    pi = sequence([(0, 1), (1, 1), (2, 1), (3, 1)])
    loss = pg_ctc_loss(Node.leaf(tcc), [(pi, (4, 5))])
    expected, _ = ctc_loss_grad(gather_points(tcc, pi), (4, 5))
    assert loss.item() == pytest.approx(expected, abs=1e-12)


def test_pg_ctc_adds_disjoint_instances(rng):
    tcc = rng.normal(size=(3, 4, 37))
    a = (sequence([(0, 0), (1, 0), (2, 0)]), (1,))
    b = (sequence([(0, 2), (1, 2), (2, 2), (3, 2)]), (2, 3))
    both = pg_ctc_loss(Node.leaf(tcc), [a, b]).item()
    alone = pg_ctc_loss(Node.leaf(tcc), [a]).item() + pg_ctc_loss(Node.leaf(tcc), [b]).item()
    assert both == pytest.approx(alone, abs=1e-12)


def test_pg_ctc_shared_cell_gradient_accumulates(rng):
    tcc = rng.normal(size=(2, 3, 37))
    a = (sequence([(0, 0), (1, 0), (2, 0)]), (0,))
    b = (sequence([(2, 0), (2, 1)]), (1,))

    def grad_of(pairs):
        leaf = Node.leaf(tcc)
        backward_pass(pg_ctc_loss(leaf, pairs))
        return leaf.grad

    shared = grad_of([a, b])[0, 2]
    np.testing.assert_allclose(shared, grad_of([a])[0, 2] + grad_of([b])[0, 2], atol=1e-12)
    assert finite_diff_check(lambda n: pg_ctc_loss(n, [a, b]), tcc) <= 1e-4


def test_pg_ctc_skips_infeasible_pairs(rng, caplog):
    tcc = rng.normal(size=(2, 3, 37))
    short = (sequence([(0, 0)]), (0, 1))
    ok = (sequence([(0, 1), (1, 1), (2, 1)]), (2,))
    loss = pg_ctc_loss(Node.leaf(tcc), [short, ok]).item()
    assert loss == pytest.approx(pg_ctc_loss(Node.leaf(tcc), [ok]).item())
    assert "Skipping instance" in caplog.text
    with pytest.raises(InfeasibleAlignmentError):
        pg_ctc_loss(Node.leaf(tcc), [short])


def test_greedy_decode_collapse_rules():
    assert greedy_decode(one_hot_rows([0, 0, BLANK, 1, 1]))[0] == "AB"
    assert greedy_decode(one_hot_rows([0, BLANK, 0]))[0] == "AA"
    assert greedy_decode(one_hot_rows([BLANK, BLANK])) == ("", 1.0)
    assert greedy_decode(np.zeros((0, 37))) == ("", 1.0)


def test_greedy_decode_confidence_is_geometric_mean():
    rows = one_hot_rows([0, BLANK, 1])
    rows[2] = one_hot_rows([1], hot=0.4)[0]
    text, conf = greedy_decode(rows)
    assert text == "AB"
    assert conf == pytest.approx(math.sqrt(0.9 * 0.4))


def test_pg_ctc_gradient_is_zero_off_the_gathered_cells(rng):
    tcc = rng.normal(size=(4, 6, 37))
    pi = sequence([(0, 1), (1, 1), (2, 1), (3, 2), (4, 2)])
    leaf = Node.leaf(tcc)
    backward_pass(pg_ctc_loss(leaf, [(pi, (7, 8))]))
    gathered = np.zeros((4, 6), dtype=bool)
    gathered[[1, 1, 1, 2, 2], [0, 1, 2, 3, 4]] = True
    assert np.abs(leaf.grad[gathered]).sum() > 0
    np.testing.assert_array_equal(leaf.grad[~gathered], 0.0)
