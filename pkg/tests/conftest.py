import numpy as np
import pytest

from pgspot.core.grm import PARAMETER_SHAPES, GrmWeights
from pgspot.models.annotation import WordAnnotation


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long calibration tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def rect_word(x0, y0, x1, y1, text="WORD", ignore=False) -> WordAnnotation:
    """Axis-aligned word box in input pixels, top edge first."""
    return WordAnnotation(poly=[(x0, y0), (x1, y0), (x1, y1), (x0, y1)], text=text, ignore=ignore)


def rotated_word(x0, y0, x1, y1, text="WORD") -> WordAnnotation:
    """The same box read upside down: the top edge runs right to left along the bottom."""
    return WordAnnotation(poly=[(x1, y1), (x0, y1), (x0, y0), (x1, y0)], text=text)


def passthrough_weights() -> GrmWeights:
    """Refinement weights that carry the gathered probabilities straight to the logits."""
    params = {name: np.zeros(shape) for name, shape in PARAMETER_SHAPES.items()}
    c = PARAMETER_SHAPES["head2_b"][0]
    params["sem_embed_w"][:c, :c] = np.eye(c)
    for i in (1, 2, 3):
        params[f"sem_graph{i}_w"][:c, :c] = np.eye(c)
    vis_out = PARAMETER_SHAPES["vis_graph3_w"][1]
    params["head1_w"][vis_out: vis_out + c, :c] = np.eye(c)
    params["head2_w"][:c, :c] = np.eye(c)
    return GrmWeights(params)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def word_box():
    # 40 x 32 px box -> 10 x 8 cells, centre line at map row 6
    return rect_word(8, 8, 48, 40, "WORD")
