"""Graph refinement of gathered character probabilities.

A semantic graph over the gathered TCC rows and a visual graph over the
gathered 128-channel features share one adjacency built from point distances;
their outputs are concatenated and classified again.
"""
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from pgspot.core.autodiff import (
    Node,
    affine,
    concat_columns,
    gather_rows,
    matmul,
    relu,
    softmax_rows,
)
from pgspot.core.config import settings
from pgspot.core.ctc import CHARSET, Charset, gather_points, greedy_decode
from pgspot.core.errors import DataError, NumericError
from pgspot.models.maps import CenterPointSequence, CharProbSequence, SpottingResult

VISUAL_CHANNELS = 128
GRAPH_DIMS = ((256, 128), (128, 64), (64, 64))

# name -> shape; graph layer weights take the [X | GX] concatenation, hence 2 * d_in rows
PARAMETER_SHAPES: Dict[str, Tuple[int, ...]] = {
    "sem_embed_w": (settings.NUM_CLASSES, 256),
    "sem_embed_b": (256,),
    **{f"sem_graph{i}_w": (2 * d_in, d_out) for i, (d_in, d_out) in enumerate(GRAPH_DIMS, 1)},
    "vis_t1_w": (VISUAL_CHANNELS, 256),
    "vis_t1_b": (256,),
    "vis_t2_w": (256, 256),
    "vis_t2_b": (256,),
    **{f"vis_graph{i}_w": (2 * d_in, d_out) for i, (d_in, d_out) in enumerate(GRAPH_DIMS, 1)},
    "head1_w": (128, 128),
    "head1_b": (128,),
    "head2_w": (128, settings.NUM_CLASSES),
    "head2_b": (settings.NUM_CLASSES,),
}


@dataclass
class GraphMatrices:
    A: np.ndarray  # N x N adjacency, A_ii = 1
    lam: np.ndarray  # N degree entries, sum of each row of A
    G: np.ndarray  # N x N symmetric normalization of A


def build_graph(pi) -> GraphMatrices:
    """Adjacency ``1 - D / max(D)`` over the points of ``pi`` and its symmetric normalization."""
    points = pi.points if isinstance(pi, CenterPointSequence) else np.asarray(pi, dtype=np.float64).reshape(-1, 2)
    n = len(points)
    if n == 0:
        raise DataError("cannot build a graph over an empty point sequence")
    dist = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    far = float(dist.max())
    A = np.ones((n, n)) if n == 1 or far == 0 else 1.0 - dist / far
    lam = A.sum(axis=1)
    inv = 1.0 / np.sqrt(lam)
    G = inv[:, None] * A * inv[None, :]
    return GraphMatrices(A=A, lam=lam, G=G)


def graph_conv(x: Node, g: Node, w: Node) -> Node:
    """``relu([X | G X] W)``."""
    if g.shape != (x.shape[0], x.shape[0]) or w.shape[0] != 2 * x.shape[1]:
        raise NumericError(f"graph_conv: incompatible shapes X{x.shape} G{g.shape} W{w.shape}")
    return relu(matmul(concat_columns(x, matmul(g, x)), w))


class GrmWeights:
    """Trainable parameters of the refinement module, stored as plain arrays."""

    def __init__(self, params: Dict[str, np.ndarray]):
        missing = set(PARAMETER_SHAPES) - set(params)
        if missing:
            raise DataError(f"refinement weights are missing {sorted(missing)}")
        for name, shape in PARAMETER_SHAPES.items():
            if params[name].shape != shape:
                raise DataError(f"refinement weight '{name}' has shape {params[name].shape}, expected {shape}")
        self.params = {name: np.asarray(params[name], dtype=np.float64) for name in PARAMETER_SHAPES}

    @classmethod
    def init(cls, seed: int = 0) -> "GrmWeights":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in PARAMETER_SHAPES.items():
            if len(shape) == 1:
                params[name] = np.zeros(shape)
            else:
                params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        return cls(params)

    def leaves(self) -> Dict[str, Node]:
        return {name: Node.leaf(value, name) for name, value in self.params.items()}

    def to_tensors(self) -> Dict[str, np.ndarray]:
        return {f"grm.{name}": value for name, value in self.params.items()}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "GrmWeights":
        return cls({name[len("grm."):]: value for name, value in tensors.items() if name.startswith("grm.")})


class GrmInput(NamedTuple):
    points: np.ndarray  # N x 2 map coordinates
    semantic: np.ndarray  # N x 37 gathered probabilities
    visual: np.ndarray  # N x 128 gathered features


def grm_input(pi: CenterPointSequence, tcc: np.ndarray, fvis: np.ndarray) -> GrmInput:
    if fvis.shape[:2] != tcc.shape[:2] or fvis.shape[2] != VISUAL_CHANNELS:
        raise DataError(f"visual features {fvis.shape} do not align with the TCC map {tcc.shape}")
    probs = gather_points(tcc, pi)
    cells = pi.cells()
    return GrmInput(pi.points, probs.probs, fvis[cells[:, 1], cells[:, 0]])


def _branch(x: Node, g: Node, p: Dict[str, Node], prefix: str) -> Node:
    for i in range(1, len(GRAPH_DIMS) + 1):
        x = graph_conv(x, g, p[f"{prefix}_graph{i}_w"])
    return x


def forward_batch(
    weights: Dict[str, Node], inputs: Sequence[GrmInput], max_len: int = settings.GRM_MAX_LEN
) -> Tuple[Node, List[np.ndarray]]:
    """Logits for every real node of a padded, block-diagonal batch.

    Sequences are padded with zero rows to the longest one in the batch, not to
    ``max_len``; ``max_len`` only bounds that length. Padded nodes connect only
    to themselves, so the real rows come out the same for any padded length.
    Returns the logits of the real rows (concatenated in input order) and each
    sequence's row indices.
    """
    length = max(len(item.points) for item in inputs)
    if length > max_len:
        raise DataError(f"sequence of {length} points exceeds the refinement limit of {max_len}")
    total = length * len(inputs)
    semantic = np.zeros((total, settings.NUM_CLASSES))
    visual = np.zeros((total, VISUAL_CHANNELS))
    G = np.eye(total)
    rows, spans, start = [], [], 0
    for b, item in enumerate(inputs):
        n, offset = len(item.points), b * length
        semantic[offset: offset + n] = item.semantic
        visual[offset: offset + n] = item.visual
        G[offset: offset + n, offset: offset + n] = build_graph(item.points).G
        rows.extend(range(offset, offset + n))
        spans.append(np.arange(start, start + n))
        start += n

    p = weights
    g = Node.leaf(G, "graph")
    x_s = relu(affine(Node.leaf(semantic, "semantic"), p["sem_embed_w"], p["sem_embed_b"]))
    x_v = relu(affine(Node.leaf(visual, "visual"), p["vis_t1_w"], p["vis_t1_b"]))
    x_v = relu(affine(x_v, p["vis_t2_w"], p["vis_t2_b"]))
    fused = concat_columns(_branch(x_v, g, p, "vis"), _branch(x_s, g, p, "sem"))
    hidden = relu(affine(fused, p["head1_w"], p["head1_b"]))
    logits = affine(hidden, p["head2_w"], p["head2_b"])
    return gather_rows(logits, rows), spans


def _windows(n: int, size: int, overlap: int) -> List[int]:
    stride = size - overlap
    starts = list(range(0, n - size, stride))
    starts.append(n - size)
    return starts


def _refine_windowed(item: GrmInput, weights: "GrmWeights", size: int, overlap: int) -> np.ndarray:
    n = len(item.points)
    starts = _windows(n, size, overlap)
    pieces = [
        GrmInput(item.points[s: s + size], item.semantic[s: s + size], item.visual[s: s + size]) for s in starts
    ]
    logits, spans = forward_batch(weights.leaves(), pieces, size)
    probs = softmax_rows(logits.value)
    out = np.zeros((n, settings.NUM_CLASSES))
    for k, (s, span) in enumerate(zip(starts, spans)):
        lo = 0 if k == 0 else (s + starts[k - 1] + size) // 2
        hi = n if k == len(starts) - 1 else (starts[k + 1] + s + size) // 2
        out[lo:hi] = probs[span][lo - s: hi - s]
    return out


def refine_batch(
    items: Sequence[Tuple[CenterPointSequence, np.ndarray, np.ndarray]],
    weights: GrmWeights,
    max_len: int = settings.GRM_MAX_LEN,
    overlap: int = settings.GRM_WINDOW_OVERLAP,
) -> List[CharProbSequence]:
    """Refine several (pi, tcc, fvis) triples; short sequences share one padded graph."""
    inputs = [grm_input(pi, tcc, fvis) if len(pi) else None for pi, tcc, fvis in items]
    out: List[Optional[CharProbSequence]] = [None] * len(items)
    batched = [i for i, item in enumerate(inputs) if item is not None and len(item.points) <= max_len]
    if batched:
        logits, spans = forward_batch(weights.leaves(), [inputs[i] for i in batched], max_len)
        probs = softmax_rows(logits.value)
        for i, span in zip(batched, spans):
            out[i] = CharProbSequence(probs[span], items[i][0])
    for i, item in enumerate(inputs):
        pi = items[i][0]
        if item is None:
            out[i] = CharProbSequence(np.zeros((0, settings.NUM_CLASSES)), pi)
        elif len(item.points) > max_len:
            logging.info(f"Refining instance {pi.instance_id} of {len(pi)} points in windows of {max_len}")
            windowed = replace(pi, flags=pi.flags + ["windowed"])
            out[i] = CharProbSequence(_refine_windowed(item, weights, max_len, overlap), windowed)
    return out


def refine(pi: CenterPointSequence, tcc: np.ndarray, fvis: np.ndarray, weights: GrmWeights) -> CharProbSequence:
    return refine_batch([(pi, tcc, fvis)], weights)[0]


def refine_results(
    results: Sequence[SpottingResult],
    tcc: np.ndarray,
    fvis: np.ndarray,
    weights: GrmWeights,
    charset: Charset = CHARSET,
) -> List[SpottingResult]:
    """Re-decode spotted words from refined probabilities; geometry is kept."""
    refined = refine_batch([(r.center, tcc, fvis) for r in results], weights)
    updated = []
    for result, probs in zip(results, refined):
        text, confidence = greedy_decode(probs, charset)
        extra = [f for f in probs.points.flags if f not in result.flags] + ["refined"]
        updated.append(
            replace(result, transcript=text, confidence=confidence, flags=result.flags + extra, probs=probs.probs)
        )
    return updated
