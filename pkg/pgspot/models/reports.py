from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel


class ResultRecord(BaseModel):
    poly: List[Tuple[float, float]]  # input pixels (map coordinates x 4)
    text: str
    conf: float
    flags: List[str] = []
    points: Optional[List[Tuple[float, float]]] = None  # center sequence in input pixels


class ImageResults(BaseModel):
    image: str
    results: List[ResultRecord] = []


class MatchPair(BaseModel):
    image: str
    pred: int
    gt: int
    iou: float


class MatchReport(BaseModel):
    pairs: List[MatchPair] = []
    tp: int = 0
    fp: int = 0
    fn: int = 0
    precision: float = 0.0
    recall: float = 0.0
    hmean: float = 0.0
    tightness: float = 0.0  # mean IoU over true positives
    flagged: List[Tuple[str, int, str]] = []  # (image, prediction index, flag)


class StageTiming(BaseModel):
    stage: str
    runs: int
    median_ms: float
    p95_ms: float
    mean_ms: float


class TimingReport(BaseModel):
    stages: List[StageTiming] = []
    decoded: int = 0
    single_thread: bool = False


class EpochRecord(BaseModel):
    epoch: int
    loss: float
    terms: Dict[str, float] = {}
    metrics: Dict[str, float] = {}
