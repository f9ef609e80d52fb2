"""Shared loaders used by several subcommands."""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, List, Optional, Tuple, TypeVar

from pgspot.core.config import settings
from pgspot.core.errors import UsageError
from pgspot.core.grm import GrmWeights
from pgspot.core.training import ToyModel, TrainingSample, prepare_sample
from pgspot.models.annotation import ImageRecord
from pgspot.models.configs import SpotConfig
from pgspot.utils.binary_io import load_checkpoint
from pgspot.utils.image_utils import load_graymap
from pgspot.utils.jsonl_utils import load_dataset

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Map over a thread pool capped by PGSPOT_THREADS; results keep input order."""
    items = list(items)
    workers = max(1, min(threads or settings.THREADS, len(items) or 1))
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def resolve_image(annotations: str, image: str) -> Path:
    """Image paths in a dataset are relative to the dataset file."""
    path = Path(image)
    return path if path.is_absolute() else Path(annotations).parent / path


def load_images(annotations: str) -> List[Tuple[ImageRecord, Path]]:
    return [(record, resolve_image(annotations, record.image)) for record in load_dataset(annotations)]


def load_samples(annotations: str) -> List[TrainingSample]:
    def build(item):
        record, path = item
        return prepare_sample(record.image, load_graymap(path), record.words)

    samples = parallel_map(build, load_images(annotations))
    logging.info(f"Loaded {len(samples)} training samples from {annotations}")
    return samples


def load_model(path: str) -> ToyModel:
    return ToyModel.from_tensors(load_checkpoint(path))


def load_grm(path: str) -> GrmWeights:
    return GrmWeights.from_tensors(load_checkpoint(path))


def add_spot_arguments(parser):
    parser.add_argument("--threshold", type=float, default=settings.TCL_THRESHOLD, help="TCL binarization threshold")
    parser.add_argument("--min-area", type=int, default=settings.MIN_AREA, help="smallest kept region, in cells")
    parser.add_argument("--expand", type=float, default=settings.EXPAND_RATIO, help="end extension as a fraction of end height")
    parser.add_argument("--max-vertices", type=int, default=settings.MAX_VERTICES, help="0 keeps every border point")
    parser.add_argument("--no-tdo", action="store_true", help="order center points left to right instead of by TDO")


def spot_config(args) -> SpotConfig:
    try:
        return SpotConfig(
            tcl_threshold=args.threshold,
            min_area=args.min_area,
            expand_ratio=args.expand,
            max_vertices=args.max_vertices or None,
            use_tdo=not args.no_tdo,
        )
    except ValueError as e:
        raise UsageError(f"invalid post-processing options: {e}")


def parse_pair(text: str, name: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--{name} expects two comma separated numbers, got '{text}'")
    return lo, hi
