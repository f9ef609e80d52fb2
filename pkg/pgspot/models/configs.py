from typing import Literal, Optional, Tuple

from pydantic import BaseModel, Field, model_validator

from pgspot.core.config import settings


class SpotConfig(BaseModel):
    tcl_threshold: float = Field(settings.TCL_THRESHOLD, gt=0.0, lt=1.0)
    min_area: int = Field(settings.MIN_AREA, ge=1)
    expand_ratio: float = Field(settings.EXPAND_RATIO, ge=0.0)  # end extension, fraction of end height
    max_vertices: Optional[int] = Field(settings.MAX_VERTICES, ge=4)  # None keeps every border point
    use_tdo: bool = True  # False orders points by the dominant-axis rule


class SceneConfig(BaseModel):
    width: int = Field(192, ge=32)
    height: int = Field(192, ge=32)
    min_words: int = Field(1, ge=1, le=3)
    max_words: int = Field(3, ge=1, le=3)
    min_chars: int = Field(3, ge=1)
    max_chars: int = Field(5, ge=1)
    curvature_range: Tuple[float, float] = (0.0, 0.2)  # sagitta as a fraction of the word length
    curved_fraction: float = Field(0.5, ge=0.0, le=1.0)
    rotation_range: Tuple[float, float] = (-20.0, 20.0)  # degrees
    glyph_scale: int = Field(4, ge=1)  # input pixels per font pixel
    noise: float = Field(0.0, ge=0.0)  # background noise sigma

    @model_validator(mode="after")
    def check_ranges(self):
        if self.min_words > self.max_words or self.min_chars > self.max_chars:
            raise ValueError("minimum counts must not exceed maximum counts")
        for name in ("curvature_range", "rotation_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo} > {hi}")
        return self


class NoiseConfig(BaseModel):
    tcl_flip_rate: float = Field(0.0, ge=0.0, le=1.0)
    offset_jitter: float = Field(0.0, ge=0.0)  # sigma in cells, applied to tbo and tdo
    tcc_noise: float = Field(0.0, ge=0.0)  # logit noise sigma
    tcc_label_noise: float = Field(0.0, ge=0.0, le=1.0)  # rate of swapping a cell's dominant class


class LossWeights(BaseModel):
    tcl: float = Field(1.0, ge=0.0)
    tbo: float = Field(1.0, ge=0.0)
    tdo: float = Field(1.0, ge=0.0)
    tcc: float = Field(5.0, ge=0.0)

    @classmethod
    def parse(cls, text: str) -> "LossWeights":
        """Build from a ``"1,1,1,5"`` style string."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected four comma separated weights, got '{text}'")
        return cls(**dict(zip(("tcl", "tbo", "tdo", "tcc"), (float(p) for p in parts))))


class TrainConfig(BaseModel):
    epochs: int = Field(30, ge=0)
    lr: float = Field(0.002, gt=0.0)
    batch_size: int = Field(2, ge=1)
    optimizer: Literal["adam", "sgd"] = "adam"
    seed: int = 0
    weights: LossWeights = LossWeights()
    eval_every: int = Field(1, ge=0)  # 0 disables per-epoch spotting metrics
    progress: bool = False
