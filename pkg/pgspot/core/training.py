"""Losses, the per-pixel toy model and the gradient-descent loops that fit it.

The toy model stands in for a convolutional backbone: every map cell sees a
5 x 5 patch of the 4 x 4 average-pooled image, runs it through a shared two
layer perceptron and four heads. Its 128-channel hidden layer is the visual
feature map handed to graph refinement.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from pgspot.core.autodiff import (
    Node,
    affine,
    add_all,
    backward_pass,
    gather_rows,
    make_node,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
)
from pgspot.core.config import settings
from pgspot.core.ctc import CHARSET, ctc_loss_node, encode_transcript, greedy_decode, pg_ctc_loss
from pgspot.core.errors import DataError, InfeasibleAlignmentError, NumericError, TrainingDivergedError
from pgspot.core.grm import GrmInput, GrmWeights, forward_batch, grm_input
from pgspot.core.labels import generate_label_maps, sample_centerline
from pgspot.core.synth import perturb
from pgspot.models.annotation import WordAnnotation
from pgspot.models.configs import LossWeights, NoiseConfig, TrainConfig
from pgspot.models.maps import CenterPointSequence, LabelMaps, MapSet
from pgspot.models.reports import EpochRecord

DICE_EPS = 1e-6
PATCH = 5
HIDDEN = (64, 128)
HEADS = (("tcl", 1), ("tdo", 2), ("tbo", 4), ("tcc", settings.NUM_CLASSES))
GRM_EVAL_BATCH = 8

Sequences = List[Tuple[CenterPointSequence, Tuple[int, ...]]]


# Loss primitives

def dice_loss_node(pred: Node, target, mask=None) -> Node:
    p = pred.value
    t = np.asarray(target, dtype=np.float64)
    m = np.ones_like(p) if mask is None else np.asarray(mask, dtype=np.float64)
    if t.shape != p.shape or m.shape != p.shape:
        raise NumericError(f"dice_loss: shape mismatch pred{p.shape} target{t.shape} mask{m.shape}")
    inter = float((m * p * t).sum())
    union = float((m * p * p).sum() + (m * t * t).sum())
    value = 1.0 - (2.0 * inter + DICE_EPS) / (union + DICE_EPS)

    def backward(g):
        d = -(2.0 * m * t * (union + DICE_EPS) - (2.0 * inter + DICE_EPS) * 2.0 * m * p) / (union + DICE_EPS) ** 2
        return (g * d,)

    return make_node("dice_loss", np.asarray(value), (pred,), backward)


def smooth_l1_node(pred: Node, target, mask=None) -> Node:
    """Mean smooth-L1 over the elements selected by ``mask`` (0 when nothing is selected)."""
    p = pred.value
    t = np.asarray(target, dtype=np.float64)
    m = np.ones_like(p) if mask is None else np.broadcast_to(np.asarray(mask, dtype=np.float64), p.shape)
    if t.shape != p.shape:
        raise NumericError(f"smooth_l1: shape mismatch pred{p.shape} target{t.shape}")
    count = float(m.sum())
    x = p - t
    small = np.abs(x) < 1.0
    elem = np.where(small, 0.5 * x * x, np.abs(x) - 0.5)
    value = float((m * elem).sum()) / count if count > 0 else 0.0
    slope = np.where(small, x, np.sign(x)) * m / max(count, 1.0)
    return make_node("smooth_l1", np.asarray(value), (pred,), lambda g: (g * slope,))


def dice_loss(pred, target, mask=None) -> float:
    return dice_loss_node(Node.leaf(pred), target, mask).item()


def smooth_l1(pred, target, mask=None) -> float:
    return smooth_l1_node(Node.leaf(pred), target, mask).item()


@dataclass
class MapNodes:
    tcl: Node  # H x W scores in [0, 1]
    tbo: Node  # H x W x 4
    tdo: Node  # H x W x 2
    tcc: Node  # H x W x 37 logits

    @classmethod
    def from_maps(cls, maps: MapSet) -> "MapNodes":
        return cls(
            Node.leaf(maps.tcl[..., 0], "tcl"),
            Node.leaf(maps.tbo, "tbo"),
            Node.leaf(maps.tdo, "tdo"),
            Node.leaf(maps.tcc, "tcc"),
        )


def multitask_loss(
    pred: Union[MapNodes, MapSet],
    gt: LabelMaps,
    sequences: Sequences,
    weights: LossWeights = LossWeights(),
    reduction: str = "sum",
) -> Tuple[Node, Dict[str, float]]:
    """Weighted dice + smooth-L1 + PG-CTC loss. Returns the loss node and the unweighted terms.

    Cells of ignore-flagged words take no part in any term.
    """
    if isinstance(pred, MapSet):
        pred = MapNodes.from_maps(pred)
    care = ~np.asarray(gt.ignore, dtype=bool)
    positive = (gt.maps.tcl[..., 0] > 0) & care
    terms: Dict[str, Node] = {}
    if weights.tcl > 0:
        terms["tcl"] = dice_loss_node(pred.tcl, gt.maps.tcl[..., 0], care)
    if weights.tbo > 0:
        terms["tbo"] = smooth_l1_node(pred.tbo, gt.maps.tbo, positive[..., None])
    if weights.tdo > 0:
        terms["tdo"] = smooth_l1_node(pred.tdo, gt.maps.tdo, positive[..., None])
    if weights.tcc > 0 and sequences:
        try:
            terms["tcc"] = pg_ctc_loss(pred.tcc, sequences, reduction)
        except InfeasibleAlignmentError:
            logging.warning("No feasible recognition sample in this batch, PG-CTC term skipped")
    if not terms:
        return Node.leaf(0.0, "zero"), {name: 0.0 for name in ("tcl", "tbo", "tdo", "tcc")}
    total = add_all([scale(node, getattr(weights, name)) for name, node in terms.items()])
    values = {name: (terms[name].item() if name in terms else 0.0) for name in ("tcl", "tbo", "tdo", "tcc")}
    return total, values


def recognition_sequences(words: Sequence[WordAnnotation], dims: Tuple[int, int]) -> Sequences:
    """Feasible (center sequence, label) pairs of the non-ignore, in-alphabet words."""
    out = []
    for index, word in enumerate(words):
        if word.ignore:
            continue
        encoded = encode_transcript(word.text)
        if encoded.ignore:
            continue
        pi = sample_centerline(word, dims, instance_id=index)
        if pi.feasible:
            out.append((pi, encoded.indices))
    return out


def fit_direct_maps(
    words: Sequence[WordAnnotation], dims: Tuple[int, int], iterations: int = 500, step: float = 0.5
) -> Tuple[np.ndarray, List[float]]:
    """Gradient descent on a free TCC logit map under PG-CTC alone.

    Starts from all-zero logits; cells never gathered keep their initial value.
    Returns the final map and the loss trace (one entry per evaluation).
    """
    sequences = recognition_sequences(words, dims)
    if not sequences:
        raise InfeasibleAlignmentError(0, 0, detail="infeasible: no word can host its transcript")
    height, width = dims
    logits = np.zeros((height, width, settings.NUM_CLASSES))
    trace: List[float] = []
    for i in range(iterations + 1):
        leaf = Node.leaf(logits, "tcc")
        loss = pg_ctc_loss(leaf, sequences)
        trace.append(loss.item())
        if not math.isfinite(trace[-1]) or trace[-1] > 10.0 * trace[0]:
            raise TrainingDivergedError(f"direct map fit diverged at iteration {i}: loss {trace[-1]:.4g}", trace)
        if i == iterations:
            break
        backward_pass(loss)
        logits = logits - step * leaf.grad
    return logits, trace


# Optimizers

class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        for name, grad in grads.items():
            params[name] = params[name] - self.lr * grad


class Adam:
    """Adam with bias-corrected moments, one pair of moment arrays per parameter name."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]):
        self.t += 1
        for name, grad in grads.items():
            m = self.beta1 * self.m.get(name, 0.0) + (1.0 - self.beta1) * grad
            v = self.beta2 * self.v.get(name, 0.0) + (1.0 - self.beta2) * grad * grad
            self.m[name], self.v[name] = m, v
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            params[name] = params[name] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig) -> Union[Sgd, Adam]:
    if config.optimizer == "sgd":
        return Sgd(config.lr)
    return Adam(config.lr)


# Toy model

def pool_image(image: np.ndarray, scale_: int = settings.MAP_SCALE) -> np.ndarray:
    """Average-pool a grayscale image by ``scale_`` x ``scale_`` blocks (edge padded)."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    H, W = -(-h // scale_), -(-w // scale_)
    padded = np.pad(img, ((0, H * scale_ - h), (0, W * scale_ - w)), mode="edge")
    return padded.reshape(H, scale_, W, scale_).mean(axis=(1, 3))


def image_patches(image: np.ndarray) -> np.ndarray:
    """(H*W) x 25 matrix of 5 x 5 neighbourhoods of every map cell."""
    pooled = pool_image(image) - 0.5
    r = PATCH // 2
    windows = np.lib.stride_tricks.sliding_window_view(np.pad(pooled, r, mode="edge"), (PATCH, PATCH))
    return windows.reshape(-1, PATCH * PATCH)


@dataclass
class ToyOutput:
    maps: MapNodes
    fvis: Node  # (H*W) x 128
    leaves: Dict[str, Node]


class ToyModel:
    def __init__(self, params: Dict[str, np.ndarray]):
        for name, shape in self.shapes().items():
            if name not in params:
                raise DataError(f"toy model checkpoint is missing '{name}'")
            if params[name].shape != shape:
                raise DataError(f"toy model weight '{name}' has shape {params[name].shape}, expected {shape}")
        self.params = {name: np.asarray(params[name], dtype=np.float64) for name in self.shapes()}

    @staticmethod
    def shapes() -> Dict[str, Tuple[int, ...]]:
        dims = (PATCH * PATCH,) + HIDDEN
        shapes = {}
        for i in range(len(HIDDEN)):
            shapes[f"hidden{i + 1}_w"] = (dims[i], dims[i + 1])
            shapes[f"hidden{i + 1}_b"] = (dims[i + 1],)
        for head, channels in HEADS:
            shapes[f"{head}_w"] = (HIDDEN[-1], channels)
            shapes[f"{head}_b"] = (channels,)
        return shapes

    @classmethod
    def init(cls, seed: int = 0) -> "ToyModel":
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in cls.shapes().items():
            params[name] = np.zeros(shape) if len(shape) == 1 else rng.normal(0.0, np.sqrt(2.0 / shape[0]), shape)
        return cls(params)

    def leaves(self) -> Dict[str, Node]:
        return {name: Node.leaf(value, name) for name, value in self.params.items()}

    def forward(self, patches: np.ndarray, height: int, width: int, leaves: Optional[Dict[str, Node]] = None) -> ToyOutput:
        """Run the model on a patch matrix covering a ``height`` x ``width`` grid."""
        p = leaves or self.leaves()
        x = Node.leaf(patches, "patches")
        for i in range(len(HIDDEN)):
            x = relu(affine(x, p[f"hidden{i + 1}_w"], p[f"hidden{i + 1}_b"]))
        heads = {head: affine(x, p[f"{head}_w"], p[f"{head}_b"]) for head, _ in HEADS}
        maps = MapNodes(
            tcl=reshape(sigmoid(heads["tcl"]), (height, width)),
            tbo=reshape(heads["tbo"], (height, width, 4)),
            tdo=reshape(heads["tdo"], (height, width, 2)),
            tcc=reshape(heads["tcc"], (height, width, settings.NUM_CLASSES)),
        )
        return ToyOutput(maps=maps, fvis=x, leaves=p)

    def predict(self, image: np.ndarray) -> Tuple[MapSet, np.ndarray]:
        """Plain-array maps and the H x W x 128 visual feature map of one image."""
        height, width = pool_image(image).shape
        out = self.forward(image_patches(image), height, width)
        maps = MapSet(
            tcl=out.maps.tcl.value[..., None],
            tbo=out.maps.tbo.value,
            tdo=out.maps.tdo.value,
            tcc=out.maps.tcc.value,
        )
        return maps, out.fvis.value.reshape(height, width, HIDDEN[-1])

    def to_tensors(self) -> Dict[str, np.ndarray]:
        return {f"toy.{name}": value for name, value in self.params.items()}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "ToyModel":
        return cls({name[len("toy."):]: value for name, value in tensors.items() if name.startswith("toy.")})


# Training data

@dataclass
class TrainingSample:
    name: str
    image: np.ndarray  # grayscale in [0, 1]
    words: List[WordAnnotation]
    labels: LabelMaps
    sequences: Sequences = field(default_factory=list)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.labels.maps.height, self.labels.maps.width


def prepare_sample(name: str, image: np.ndarray, words: Sequence[WordAnnotation]) -> TrainingSample:
    h, w = np.asarray(image).shape
    dims = (-(-h // settings.MAP_SCALE), -(-w // settings.MAP_SCALE))
    return TrainingSample(
        name=name,
        image=np.asarray(image, dtype=np.float64),
        words=list(words),
        labels=generate_label_maps(words, dims),
        sequences=recognition_sequences(words, dims),
    )


def _stack(batch: Sequence[TrainingSample]) -> Tuple[np.ndarray, LabelMaps, Sequences]:
    """Stack samples of equal size vertically into one tall grid."""
    height, _ = batch[0].dims
    patches = np.concatenate([image_patches(s.image) for s in batch])
    maps = MapSet(*(np.concatenate([getattr(s.labels.maps, n) for s in batch]) for n in ("tcl", "tbo", "tdo", "tcc")))
    labels = LabelMaps(
        maps=maps,
        ignore=np.concatenate([s.labels.ignore for s in batch]),
        owner=np.concatenate([s.labels.owner for s in batch]),
    )
    sequences = []
    for b, sample in enumerate(batch):
        for pi, label in sample.sequences:
            sequences.append((replace(pi, points=pi.points + [0.0, b * height]), label))
    return patches, labels, sequences


def _batches(samples: Sequence[TrainingSample], order: np.ndarray, size: int) -> List[List[TrainingSample]]:
    """Consecutive batches in ``order``, each restricted to one image size."""
    groups: Dict[Tuple[int, int], List[TrainingSample]] = {}
    for i in order:
        groups.setdefault(samples[i].dims, []).append(samples[i])
    batches = []
    for group in groups.values():
        batches.extend(group[k: k + size] for k in range(0, len(group), size))
    return batches


def mixed_epoch(sources: Sequence[Sequence[TrainingSample]], ratios: Optional[Sequence[float]], rng) -> List[TrainingSample]:
    """One epoch of samples drawn from several sources in the given proportions."""
    if ratios is None or len(sources) == 1:
        pool = [s for source in sources for s in source]
        return [pool[i] for i in rng.permutation(len(pool))]
    if len(ratios) != len(sources) or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise DataError(f"mixing ratios {list(ratios)} do not match {len(sources)} sources")
    size = sum(len(s) for s in sources)
    drawn = []
    for source, ratio in zip(sources, ratios):
        count = int(round(size * ratio / sum(ratios)))
        if not source or count == 0:
            continue
        reps = -(-count // len(source))
        idx = np.concatenate([rng.permutation(len(source)) for _ in range(reps)])[:count]
        drawn.extend(source[i] for i in idx)
    return [drawn[i] for i in rng.permutation(len(drawn))]


def fit_toy_model(
    sources: Union[Sequence[TrainingSample], Sequence[Sequence[TrainingSample]]],
    config: TrainConfig = TrainConfig(),
    ratios: Optional[Sequence[float]] = None,
    model: Optional[ToyModel] = None,
    evaluate=None,
) -> Tuple[ToyModel, List[EpochRecord]]:
    """Mini-batch gradient descent of the toy model on the multitask loss.

    ``sources`` is either one list of samples or several lists mixed by
    ``ratios``. ``evaluate(model) -> dict`` supplies per-epoch metrics.
    """
    if sources and isinstance(sources[0], TrainingSample):
        sources = [sources]
    rng = np.random.default_rng(config.seed)
    model = model or ToyModel.init(config.seed)
    optimizer = make_optimizer(config)
    records: List[EpochRecord] = []
    trace: List[float] = []

    epochs = range(1, config.epochs + 1)
    for epoch in tqdm(epochs, desc="train", disable=not config.progress):
        samples = mixed_epoch(sources, ratios, rng)
        totals = {"tcl": 0.0, "tbo": 0.0, "tdo": 0.0, "tcc": 0.0}
        losses = []
        for batch in _batches(samples, np.arange(len(samples)), config.batch_size):
            patches, labels, sequences = _stack(batch)
            height, width = labels.maps.height, labels.maps.width
            try:
                out = model.forward(patches, height, width)
                loss, terms = multitask_loss(out.maps, labels, sequences, config.weights, reduction="mean")
                grads = backward_pass(loss).by_name()
            except NumericError as e:
                raise TrainingDivergedError(f"epoch {epoch}: {e}", trace + losses) from e
            losses.append(loss.item())
            for name, value in terms.items():
                totals[name] += value
            optimizer.step(model.params, {name: grads[name] for name in model.params if name in grads})
        mean = float(np.mean(losses)) if losses else 0.0
        if not math.isfinite(mean):
            raise TrainingDivergedError(f"epoch {epoch}: loss is not finite", trace + [mean])
        trace.append(mean)
        metrics = {}
        if evaluate is not None and config.eval_every and epoch % config.eval_every == 0:
            metrics = evaluate(model)
        n = max(len(losses), 1)
        record = EpochRecord(epoch=epoch, loss=mean, terms={k: v / n for k, v in totals.items()}, metrics=metrics)
        records.append(record)
        logging.info(f"Epoch {epoch}: loss {mean:.4f} {metrics}")
    return model, records


# Graph refinement training

@dataclass
class GrmSample:
    input: GrmInput
    label: Tuple[int, ...]


def grm_samples(
    base: ToyModel, samples: Sequence[TrainingSample], noise: Optional[NoiseConfig] = None, seed: int = 0
) -> List[GrmSample]:
    """Cache the frozen base outputs gathered at the ground-truth center sequences."""
    out = []
    for k, sample in enumerate(samples):
        maps, fvis = base.predict(sample.image)
        if noise is not None:
            maps = perturb(maps, noise, seed + k)
        for pi, label in sample.sequences:
            if len(pi) > settings.GRM_MAX_LEN:
                logging.warning(f"{sample.name}: skipping a {len(pi)}-point sequence longer than {settings.GRM_MAX_LEN}")
                continue
            out.append(GrmSample(grm_input(pi, maps.tcc, fvis), label))
    return out


def fit_grm(
    base: ToyModel,
    samples: Sequence[TrainingSample],
    config: TrainConfig = TrainConfig(),
    noise: Optional[NoiseConfig] = None,
    weights: Optional[GrmWeights] = None,
) -> Tuple[GrmWeights, List[EpochRecord]]:
    """Train only the refinement weights with CTC on the refined rows; the base stays frozen."""
    cached = grm_samples(base, samples, noise, config.seed)
    if not cached:
        raise DataError("no recognition sequence available for refinement training")
    rng = np.random.default_rng(config.seed)
    weights = weights or GrmWeights.init(config.seed)
    optimizer = make_optimizer(config)
    records: List[EpochRecord] = []
    trace: List[float] = []
    for epoch in tqdm(range(1, config.epochs + 1), desc="train-grm", disable=not config.progress):
        order = rng.permutation(len(cached))
        losses = []
        for k in range(0, len(order), config.batch_size):
            batch = [cached[i] for i in order[k: k + config.batch_size]]
            try:
                leaves = weights.leaves()
                logits, spans = forward_batch(leaves, [s.input for s in batch])
                terms = []
                for sample, span in zip(batch, spans):
                    try:
                        terms.append(ctc_loss_node(gather_rows(logits, span), sample.label))
                    except InfeasibleAlignmentError:
                        continue
                if not terms:
                    continue
                loss = scale(add_all(terms), 1.0 / len(terms))
                grads = backward_pass(loss).by_name()
            except NumericError as e:
                raise TrainingDivergedError(f"epoch {epoch}: {e}", trace + losses) from e
            losses.append(loss.item())
            optimizer.step(weights.params, {name: grads[name] for name in weights.params if name in grads})
        mean = float(np.mean(losses)) if losses else 0.0
        trace.append(mean)
        records.append(EpochRecord(epoch=epoch, loss=mean, terms={"ctc": mean}))
        logging.info(f"Refinement epoch {epoch}: loss {mean:.4f}")
    return weights, records


def grm_exact_match(
    base: ToyModel, weights: GrmWeights, samples: Sequence[TrainingSample], noise: Optional[NoiseConfig] = None, seed: int = 0
) -> Tuple[float, float]:
    """Exact-match rate of coarse and refined decoding along the ground-truth center sequences."""
    cached = grm_samples(base, samples, noise, seed)
    if not cached:
        return 0.0, 0.0
    coarse = refined = 0
    for k in range(0, len(cached), GRM_EVAL_BATCH):
        batch = cached[k: k + GRM_EVAL_BATCH]
        logits, spans = forward_batch(weights.leaves(), [s.input for s in batch])
        probs = softmax_rows(logits.value)
        for sample, span in zip(batch, spans):
            target = CHARSET.decode(sample.label)
            coarse += greedy_decode(sample.input.semantic)[0] == target
            refined += greedy_decode(probs[span])[0] == target
    return coarse / len(cached), refined / len(cached)
