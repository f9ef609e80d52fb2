"""Detection / end-to-end metrics and the per-stage latency benchmark."""
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import cv2
import editdistance
import numpy as np
import pandas as pd
from shapely.geometry import Polygon

from pgspot.core.errors import UsageError
from pgspot.core.grm import refine_results
from pgspot.core.postprocess import spot, to_records
from pgspot.models.annotation import ImageRecord
from pgspot.models.configs import SpotConfig
from pgspot.models.reports import ImageResults, MatchPair, MatchReport, StageTiming, TimingReport

DONT_CARE_OVERLAP = 0.5
LEXICON_MODES = ("none", "strong", "weak", "generic")


def _polygon(points) -> Optional[Polygon]:
    arr = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(arr) < 3:
        return None
    poly = Polygon(arr)
    return poly if poly.is_valid and poly.area > 0 else None


def polygon_iou(a, b) -> float:
    pa = a if isinstance(a, Polygon) else _polygon(a)
    pb = b if isinstance(b, Polygon) else _polygon(b)
    if pa is None or pb is None:
        return 0.0
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return float(inter / union) if union > 0 else 0.0


@dataclass
class ImageMatch:
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)  # (pred, gt, iou)
    counted_preds: List[int] = field(default_factory=list)
    counted_gts: List[int] = field(default_factory=list)
    flagged: List[Tuple[int, str]] = field(default_factory=list)


def match_image(pred_polys: Sequence, gts: ImageRecord, iou_threshold: float = 0.5) -> ImageMatch:
    """Greedy one-to-one matching by descending IoU with don't-care filtering."""
    match = ImageMatch()
    care = [(j, _polygon(w.poly)) for j, w in enumerate(gts.words) if not w.ignore]
    dont_care = [_polygon(w.poly) for w in gts.words if w.ignore]
    dont_care = [p for p in dont_care if p is not None]
    match.counted_gts = [j for j, _ in care]

    preds = []
    for i, points in enumerate(pred_polys):
        poly = _polygon(points)
        if poly is None:
            match.flagged.append((i, "invalid-polygon"))
            match.counted_preds.append(i)
            continue
        if any(poly.intersection(d).area > DONT_CARE_OVERLAP * poly.area for d in dont_care):
            continue
        match.counted_preds.append(i)
        preds.append((i, poly))

    candidates = []
    for i, pp in preds:
        for j, gp in care:
            if gp is None:
                continue
            iou = polygon_iou(pp, gp)
            if iou >= iou_threshold:
                candidates.append((-iou, i, j))
    used_pred, used_gt = set(), set()
    for neg, i, j in sorted(candidates):
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        match.pairs.append((i, j, -neg))
    return match


def _index(gts: Sequence[ImageRecord]) -> Dict[str, ImageRecord]:
    return {record.image: record for record in gts}


def _finish(report: MatchReport, n_pred: int, n_gt: int, ious: List[float]) -> MatchReport:
    report.fp = n_pred - report.tp
    report.fn = n_gt - report.tp
    report.precision = report.tp / n_pred if n_pred else 0.0
    report.recall = report.tp / n_gt if n_gt else 0.0
    total = report.precision + report.recall
    report.hmean = 2 * report.precision * report.recall / total if total > 0 else 0.0
    report.tightness = float(np.mean(ious)) if ious else 0.0
    return report


def _images(preds: Sequence[ImageResults], gts: Sequence[ImageRecord]) -> List[Tuple[ImageResults, ImageRecord]]:
    by_name = _index(gts)
    seen = {p.image for p in preds}
    out = []
    for p in preds:
        gt = by_name.get(p.image)
        if gt is None:
            logging.warning(f"Predictions for '{p.image}' have no ground truth, counting them as false positives")
            gt = ImageRecord(image=p.image, width=1, height=1)
        out.append((p, gt))
    for gt in gts:
        if gt.image not in seen:
            out.append((ImageResults(image=gt.image), gt))
    return out


def detection_hmean(
    preds: Sequence[ImageResults], gts: Sequence[ImageRecord], iou_threshold: float = 0.5
) -> MatchReport:
    report = MatchReport()
    n_pred = n_gt = 0
    ious = []
    for pred, gt in _images(preds, gts):
        match = match_image([r.poly for r in pred.results], gt, iou_threshold)
        n_pred += len(match.counted_preds)
        n_gt += len(match.counted_gts)
        report.tp += len(match.pairs)
        for i, j, iou in match.pairs:
            report.pairs.append(MatchPair(image=pred.image, pred=i, gt=j, iou=iou))
            ious.append(iou)
        report.flagged.extend((pred.image, i, flag) for i, flag in match.flagged)
    return _finish(report, n_pred, n_gt, ious)


class Lexicon:
    """Word lists for lexicon-corrected end-to-end scoring."""

    def __init__(self, mode: str = "none", words: Sequence[str] = (), per_image: Optional[Mapping[str, Sequence[str]]] = None):
        if mode not in LEXICON_MODES:
            raise UsageError(f"unknown lexicon mode '{mode}', expected one of {', '.join(LEXICON_MODES)}")
        self.mode = mode
        self.per_image = {k: sorted({w.upper() for w in v}) for k, v in (per_image or {}).items()}
        if mode == "weak" and self.per_image:
            words = [w for v in self.per_image.values() for w in v]
        self.words = sorted({w.upper() for w in words})

    def entries(self, image: str) -> List[str]:
        if self.mode == "strong":
            return self.per_image.get(image, [])
        return self.words

    def correct(self, text: str, image: str = "") -> str:
        """Nearest entry by edit distance, ties to the lexicographically first one."""
        if self.mode == "none":
            return text
        entries = self.entries(image)
        if not entries:
            return text
        folded = text.upper()
        return min(entries, key=lambda w: (editdistance.eval(folded, w), w))


def e2e_score(
    preds: Sequence[ImageResults],
    gts: Sequence[ImageRecord],
    lexicon: Optional[Lexicon] = None,
    iou_threshold: float = 0.5,
) -> MatchReport:
    """Exact-match end-to-end F-score: a matched pair counts when transcripts agree case-insensitively."""
    lexicon = lexicon or Lexicon()
    report = MatchReport()
    n_pred = n_gt = 0
    ious = []
    for pred, gt in _images(preds, gts):
        match = match_image([r.poly for r in pred.results], gt, iou_threshold)
        n_pred += len(match.counted_preds)
        n_gt += len(match.counted_gts)
        for i, j, iou in match.pairs:
            text = lexicon.correct(pred.results[i].text, pred.image)
            if text.upper() == gt.words[j].text.upper():
                report.tp += 1
                report.pairs.append(MatchPair(image=pred.image, pred=i, gt=j, iou=iou))
                ious.append(iou)
        report.flagged.extend((pred.image, i, flag) for i, flag in match.flagged)
    return _finish(report, n_pred, n_gt, ious)


def report_table(reports: Mapping[str, MatchReport]) -> str:
    """Aligned-column summary, one row per named report."""
    frame = pd.DataFrame(
        [
            {"": name, "P": r.precision, "R": r.recall, "F": r.hmean, "TP": r.tp, "FP": r.fp, "FN": r.fn, "IoU": r.tightness}
            for name, r in reports.items()
        ]
    ).set_index("")
    return frame.to_string(float_format=lambda v: f"{v:.4f}")


# Timing

def pin_threads(count: int):
    cv2.setNumThreads(count)


def benchmark_timing(
    stages: Mapping[str, Callable[[], Any]],
    repetitions: int = 30,
    warmup: int = 3,
    decoded_stage: str = "post",
    single_thread: bool = False,
) -> TimingReport:
    """Wall-clock statistics of each stage callable; warm-up runs are discarded."""
    if repetitions < 30:
        raise UsageError(f"timing needs at least 30 repetitions, got {repetitions}")
    if single_thread:
        pin_threads(1)
    report = TimingReport(single_thread=single_thread)
    for name, stage in stages.items():
        for _ in range(warmup):
            stage()
        samples = []
        result = None
        for _ in range(repetitions):
            start = time.perf_counter()
            result = stage()
            samples.append((time.perf_counter() - start) * 1000.0)
        ms = pd.Series(samples)
        report.stages.append(
            StageTiming(
                stage=name,
                runs=repetitions,
                median_ms=float(ms.median()),
                p95_ms=float(ms.quantile(0.95)),
                mean_ms=float(ms.mean()),
            )
        )
        if name == decoded_stage and isinstance(result, list):
            report.decoded = len(result)
    return report


def timing_table(report: TimingReport) -> str:
    frame = pd.DataFrame([s.model_dump() for s in report.stages]).set_index("stage")
    return frame.to_string(float_format=lambda v: f"{v:.3f}")


def spotting_stages(model, image: np.ndarray, grm=None, config: Optional[SpotConfig] = None) -> Dict[str, Callable[[], Any]]:
    """The three pipeline stages: model forward, post-processing, graph refinement."""
    maps, fvis = model.predict(image)
    results = spot(maps, config)
    stages: Dict[str, Callable[[], Any]] = {
        "forward": lambda: model.predict(image),
        "post": lambda: spot(maps, config),
    }
    if grm is not None:
        stages["refine"] = lambda: refine_results(results, maps.tcc, fvis, grm)
    return stages


def evaluate_model(model, samples, config: Optional[SpotConfig] = None, iou_threshold: float = 0.5) -> Dict[str, float]:
    """Detection and end-to-end hmean of ``model`` on training samples."""
    preds, gts = [], []
    for sample in samples:
        maps, _ = model.predict(sample.image)
        preds.append(ImageResults(image=sample.name, results=to_records(spot(maps, config))))
        h, w = sample.image.shape
        gts.append(ImageRecord(image=sample.name, width=w, height=h, words=sample.words))
    det = detection_hmean(preds, gts, iou_threshold)
    e2e = e2e_score(preds, gts, iou_threshold=iou_threshold)
    return {"det_hmean": round(det.hmean, 6), "e2e_hmean": round(e2e.hmean, 6)}
