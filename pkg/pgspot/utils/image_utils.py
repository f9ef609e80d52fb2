from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from pgspot.core.errors import DataError

PathLike = Union[str, Path]


def save_graymap(path: PathLike, image: np.ndarray):
    """Write a [0, 1] grayscale array as an 8-bit portable graymap."""
    pixels = np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(pixels).save(path, format="PPM")


def load_graymap(path: PathLike) -> np.ndarray:
    """Read any Pillow-readable image as grayscale in [0, 1]."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"), dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise DataError(f"{path}: image not found")
    except (UnidentifiedImageError, OSError) as e:
        raise DataError(f"{path}: cannot decode image - {e}")
