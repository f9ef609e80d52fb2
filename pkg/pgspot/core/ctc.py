"""Character codec, point gathering and CTC loss/decoding on gathered sequences."""
import logging
import math
import string
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np

from pgspot.core.autodiff import Node, add_all, gather_rows, make_node, reshape, scale, softmax_rows
from pgspot.core.errors import (
    AnnotationError,
    InfeasibleAlignmentError,
    NumericError,
    OracleScaleError,
    PointOutOfBoundsError,
)
from pgspot.models.maps import CenterPointSequence, CharProbSequence

BRUTEFORCE_MAX_FRAMES = 6


class Charset:
    """26 letters, 10 digits and a trailing blank that doubles as background."""

    def __init__(self, alphabet: str = string.ascii_uppercase + string.digits):
        self.alphabet = alphabet
        self.blank = len(alphabet)
        self.index = {char: i for i, char in enumerate(alphabet)}

    @property
    def num_classes(self) -> int:
        return len(self.alphabet) + 1

    def decode(self, indices) -> str:
        return "".join(self.alphabet[i] for i in indices if i != self.blank)


CHARSET = Charset()


class EncodedTranscript(NamedTuple):
    indices: Tuple[int, ...]
    ignore: bool  # True when the text holds characters outside the alphabet


def encode_transcript(text: str, charset: Charset = CHARSET) -> EncodedTranscript:
    folded = text.upper()
    if any(char not in charset.index for char in folded):
        logging.debug(f"Transcript '{text}' leaves the alphabet, sample kept for detection only")
        return EncodedTranscript((), True)
    if not folded:
        raise AnnotationError("empty transcript on a non-ignore sample")
    return EncodedTranscript(tuple(charset.index[char] for char in folded), False)


def required_frames(label: Sequence[int]) -> int:
    """Shortest sequence able to emit ``label``: one frame per symbol plus a blank between repeats."""
    label = list(label)
    return len(label) + sum(1 for a, b in zip(label, label[1:]) if a == b)


def _cells_in_bounds(pi: CenterPointSequence, height: int, width: int) -> np.ndarray:
    cells = pi.cells()
    outside = np.flatnonzero(
        (cells[:, 0] < 0) | (cells[:, 0] >= width) | (cells[:, 1] < 0) | (cells[:, 1] >= height)
    )
    if outside.size:
        first = int(outside[0])
        raise PointOutOfBoundsError(first, pi.points[first], (width, height))
    return cells


def gather_points(tcc: np.ndarray, pi: CenterPointSequence) -> CharProbSequence:
    """Softmax of the TCC logits at the nearest cell of every center point."""
    height, width, classes = tcc.shape
    if len(pi) == 0:
        return CharProbSequence(np.zeros((0, classes)), pi)
    cells = _cells_in_bounds(pi, height, width)
    return CharProbSequence(softmax_rows(tcc[cells[:, 1], cells[:, 0]]), pi)


def _as_probs(probs: Union[CharProbSequence, np.ndarray]) -> np.ndarray:
    arr = probs.probs if isinstance(probs, CharProbSequence) else probs
    return np.asarray(arr, dtype=np.float64)


def _extended_label(label: Sequence[int], blank: int) -> np.ndarray:
    ext = np.full(2 * len(label) + 1, blank, dtype=np.int64)
    ext[1::2] = label
    return ext


def ctc_loss_grad(
    probs: Union[CharProbSequence, np.ndarray], label: Sequence[int], blank: int = CHARSET.blank
) -> Tuple[float, np.ndarray]:
    """Negative log-likelihood of ``label`` and its gradient with respect to the pre-softmax logits.

    Forward-backward runs in log space; ``beta`` includes the emission at its own
    frame, so the state posterior is ``alpha + beta - log p``.
    """
    P = _as_probs(probs)
    label = [int(c) for c in label]
    frames = len(P)
    if not label:
        raise AnnotationError("CTC label is empty")
    need = required_frames(label)
    if frames < need:
        raise InfeasibleAlignmentError(frames, need)

    ext = _extended_label(label, blank)
    states = len(ext)
    with np.errstate(divide="ignore"):
        logp = np.log(P[:, ext])
    skip = np.zeros(states, dtype=bool)
    skip[2:] = (ext[2:] != blank) & (ext[2:] != ext[:-2])

    alpha = np.full((frames, states), -np.inf)
    alpha[0, :2] = logp[0, :2]
    for t in range(1, frames):
        prev = alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        acc[2:] = np.where(skip[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:])
        alpha[t] = acc + logp[t]

    beta = np.full((frames, states), -np.inf)
    beta[-1, -2:] = logp[-1, -2:]
    for t in range(frames - 2, -1, -1):
        nxt = beta[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        acc[:-2] = np.where(skip[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2])
        beta[t] = acc + logp[t]

    loglik = np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    if not np.isfinite(loglik):
        raise NumericError("CTC likelihood underflowed to zero")
    with np.errstate(invalid="ignore"):
        post = np.where(np.isfinite(logp), alpha + beta - logp - loglik, -np.inf)
    occupancy = np.exp(post)
    gamma = np.zeros_like(P)
    for s in range(states):
        gamma[:, ext[s]] += occupancy[:, s]
    return float(-loglik), P - gamma


def ctc_loss_bruteforce(
    probs: Union[CharProbSequence, np.ndarray], label: Sequence[int], blank: int = CHARSET.blank
) -> float:
    """Exhaustive alignment sum, used as an oracle for ``ctc_loss_grad``.

    Frames carrying a class outside the label and the blank can never collapse
    to the label, so only sequences over those classes are enumerated; the sum
    equals the one over every class sequence.
    """
    P = _as_probs(probs)
    frames = len(P)
    if frames > BRUTEFORCE_MAX_FRAMES:
        raise OracleScaleError(f"brute-force CTC is limited to {BRUTEFORCE_MAX_FRAMES} frames, got {frames}")
    label = np.asarray([int(c) for c in label], dtype=np.int64)
    if len(label) == 0 or len(label) > frames:
        return math.inf

    classes = np.array(sorted(set(label.tolist()) | {blank}), dtype=np.int64)
    grid = np.indices((len(classes),) * frames).reshape(frames, -1).T
    seq = classes[grid]
    prev = np.concatenate([np.full((len(seq), 1), -1), seq[:, :-1]], axis=1)
    keep = (seq != blank) & (seq != prev)
    position = np.clip(np.cumsum(keep, axis=1) - 1, 0, len(label) - 1)
    valid = (keep.sum(axis=1) == len(label)) & np.all(~keep | (seq == label[position]), axis=1)
    if not valid.any():
        return math.inf
    total = np.prod(P[np.arange(frames), seq[valid]], axis=1).sum()
    return -math.log(total) if total > 0 else math.inf


def ctc_loss_node(logits: Node, label: Sequence[int], blank: int = CHARSET.blank) -> Node:
    """Fused softmax + CTC loss registered as one autodiff primitive."""
    loss, grad = ctc_loss_grad(softmax_rows(logits.value), label, blank)
    return make_node("ctc_loss", np.asarray(loss), (logits,), lambda g: (g * grad,))


def pg_ctc_loss(
    tcc: Node,
    sequences: Sequence[Tuple[CenterPointSequence, Sequence[int]]],
    reduction: str = "sum",
) -> Node:
    """Sum of CTC losses of the sequences gathered from one H x W x 37 logit map.

    Gradients scatter back to the gathered cells and accumulate where
    sequences share a cell.
    """
    height, width, classes = tcc.shape
    flat = reshape(tcc, (height * width, classes))
    terms = []
    for pi, label in sequences:
        need = required_frames(label) if len(label) else math.inf
        if not pi.feasible or len(pi) < need:
            logging.warning(f"Skipping instance {pi.instance_id}: {len(pi)} points cannot host a label of {len(label)}")
            continue
        cells = _cells_in_bounds(pi, height, width)
        terms.append(ctc_loss_node(gather_rows(flat, cells[:, 1] * width + cells[:, 0]), label))
    if not terms:
        raise InfeasibleAlignmentError(0, 0, detail="infeasible: no sequence can host its label")
    total = add_all(terms)
    if reduction == "mean":
        total = scale(total, 1.0 / len(terms))
    return total


def greedy_decode(probs: Union[CharProbSequence, np.ndarray], charset: Charset = CHARSET) -> Tuple[str, float]:
    """Best-path decoding: argmax per row, collapse repeats, drop blanks.

    Ties resolve to the lowest class index. Confidence is the geometric mean of
    the winning probabilities of the emitting frames (1.0 when nothing is emitted).
    """
    P = _as_probs(probs)
    if len(P) == 0:
        return "", 1.0
    best = P.argmax(axis=1)
    prev = np.concatenate([[-1], best[:-1]])
    emit = (best != charset.blank) & (best != prev)
    if not emit.any():
        return "", 1.0
    text = "".join(charset.alphabet[i] for i in best[emit])
    winners = P[np.arange(len(P)), best][emit]
    return text, float(np.exp(np.mean(np.log(winners))))
