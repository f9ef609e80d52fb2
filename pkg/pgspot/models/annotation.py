from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, field_validator, model_validator
from shapely.geometry import Polygon


class WordAnnotation(BaseModel):
    poly: List[Tuple[float, float]]  # 2n vertices in input pixels: top edge left to right, then bottom edge right to left
    text: str = ""  # transcript
    ignore: bool = False  # detection-only / don't-care word

    @field_validator("poly")
    @classmethod
    def check_vertex_count(cls, poly):
        if len(poly) < 4 or len(poly) % 2:
            raise ValueError(f"polygon needs an even vertex count >= 4, got {len(poly)}")
        return poly

    @model_validator(mode="after")
    def check_simple(self):
        if not Polygon(self.poly).is_valid:
            raise ValueError("polygon is self-intersecting or degenerate")
        return self

    @property
    def polygon(self) -> np.ndarray:
        """Vertices as a (2n, 2) float array."""
        return np.asarray(self.poly, dtype=np.float64)

    @property
    def top_edge(self) -> np.ndarray:
        """Upper edge vertices in reading order."""
        pts = self.polygon
        return pts[: len(pts) // 2]

    @property
    def bottom_edge(self) -> np.ndarray:
        """Lower edge vertices in reading order (stored reversed in ``poly``)."""
        pts = self.polygon
        return pts[len(pts) // 2:][::-1]


class ImageRecord(BaseModel):
    image: str  # path or id
    width: int
    height: int
    words: List[WordAnnotation] = []

    @field_validator("width", "height")
    @classmethod
    def check_positive(cls, value):
        if value <= 0:
            raise ValueError("image extents must be positive")
        return value
