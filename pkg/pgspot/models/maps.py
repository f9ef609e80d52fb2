from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from pgspot.core.config import settings
from pgspot.core.errors import DataError

MAP_CHANNELS = (("tcl", 1), ("tbo", 4), ("tdo", 2), ("tcc", 37))


@dataclass
class MapSet:
    tcl: np.ndarray  # H x W x 1, text center line score in [0, 1]
    tbo: np.ndarray  # H x W x 4, upper (dx, dy) then lower (dx, dy) border offsets in cells
    tdo: np.ndarray  # H x W x 2, offset to the next reading position in cells
    tcc: np.ndarray  # H x W x 37, character logits; channel 36 is background
    scale: int = settings.MAP_SCALE

    def __post_init__(self):
        height, width = self.tcl.shape[:2]
        for name, channels in MAP_CHANNELS:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (height, width, channels):
                raise DataError(f"map '{name}' has shape {arr.shape}, expected {(height, width, channels)}")
            if not np.all(np.isfinite(arr)):
                raise DataError(f"map '{name}' contains non-finite values")
            setattr(self, name, arr)
        if self.scale != settings.MAP_SCALE:
            raise DataError(f"map scale is fixed to {settings.MAP_SCALE}, got {self.scale}")

    @classmethod
    def empty(cls, height: int, width: int) -> "MapSet":
        return cls(*(np.zeros((height, width, channels)) for _, channels in MAP_CHANNELS))

    @property
    def height(self) -> int:
        return self.tcl.shape[0]

    @property
    def width(self) -> int:
        return self.tcl.shape[1]

    def copy(self) -> "MapSet":
        return MapSet(self.tcl.copy(), self.tbo.copy(), self.tdo.copy(), self.tcc.copy(), self.scale)


@dataclass
class LabelMaps:
    maps: MapSet  # tcl / tbo / tdo filled, tcc left at zero
    ignore: np.ndarray  # H x W bool, cells owned by ignore-flagged words
    owner: np.ndarray  # H x W int, index of the word owning a tcl cell, -1 elsewhere


@dataclass
class CenterPointSequence:
    points: np.ndarray  # N x 2 map coordinates (x, y) in reading order
    directions: np.ndarray  # N x 2 unit reading directions
    instance_id: int = 0
    feasible: bool = True  # False when the sequence is too short for its transcript
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(-1, 2)
        if len(self.points) != len(self.directions):
            raise DataError("center sequence points and directions differ in length")

    def __len__(self) -> int:
        return len(self.points)

    def cells(self) -> np.ndarray:
        """Nearest map cell (col, row) of each point."""
        return np.floor(self.points + 0.5).astype(np.int64)

    def mean_direction(self) -> np.ndarray:
        d = self.directions.mean(axis=0) if len(self) else np.zeros(2)
        norm = np.linalg.norm(d)
        return d / norm if norm > 0 else np.array([1.0, 0.0])


@dataclass
class CharProbSequence:
    probs: np.ndarray  # N x 37, rows sum to one
    points: CenterPointSequence

    def __len__(self) -> int:
        return len(self.probs)


@dataclass
class SpottingResult:
    polygon: np.ndarray  # 2k x 2 map coordinates, clockwise
    transcript: str
    confidence: float
    center: CenterPointSequence
    flags: List[str] = field(default_factory=list)
    probs: np.ndarray = None  # gathered N x 37 probabilities, kept for refinement

    def pixel_polygon(self, scale: int = settings.MAP_SCALE) -> List[Tuple[float, float]]:
        return [(float(x) * scale, float(y) * scale) for x, y in self.polygon]
