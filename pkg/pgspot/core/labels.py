"""Ground-truth maps and center point sequences from word polygons.

All geometry below works in map coordinates: input pixels divided by the map
scale, with the center of cell (row r, col c) at the point (c, r). That is input
pixel (scale * c, scale * r), the top-left pixel of the block the cell pools and
not its center. ``postprocess.to_records`` scales back with the same convention.
"""
import logging
from typing import List, Sequence, Tuple

import numpy as np
from shapely import intersects_xy
from shapely.geometry import Polygon

from pgspot.core.config import settings
from pgspot.core.errors import AnnotationError
from pgspot.models.annotation import WordAnnotation
from pgspot.models.maps import CenterPointSequence, LabelMaps, MapSet


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def decompose_to_quads(annotation: WordAnnotation) -> List[np.ndarray]:
    """Split a 2n-vertex word polygon into its n-1 quadrangles, in reading order.

    Quad i is (top[i], top[i+1], bottom[i+1], bottom[i]); zero-area quads are dropped.
    """
    if not Polygon(annotation.poly).is_valid:
        raise AnnotationError(f"word '{annotation.text}' has a self-intersecting polygon")
    top, bottom = annotation.top_edge, annotation.bottom_edge
    quads = []
    for i in range(len(top) - 1):
        quad = np.array([top[i], top[i + 1], bottom[i + 1], bottom[i]])
        if abs(_signed_area(quad)) < 1e-9:
            logging.warning(f"Dropping degenerate quadrangle {i} of word '{annotation.text}'")
            continue
        quads.append(quad)
    return quads


class QuadChain:
    """Cross-sections of a word in map coordinates and the midline they define."""

    def __init__(self, annotation: WordAnnotation, scale: int = settings.MAP_SCALE):
        quads = decompose_to_quads(annotation)
        if not quads:
            raise AnnotationError(f"word '{annotation.text}' has no usable quadrangle")
        quads = [q / scale for q in quads]
        self.quads = quads
        self.top = np.array([q[0] for q in quads] + [quads[-1][1]])
        self.bottom = np.array([q[3] for q in quads] + [quads[-1][2]])
        self.centers = 0.5 * (self.top + self.bottom)
        self.lengths = np.linalg.norm(np.diff(self.centers, axis=0), axis=1)
        self.cumulative = np.concatenate([[0.0], np.cumsum(self.lengths)])
        self.total_length = float(self.cumulative[-1])
        directions = np.diff(self.centers, axis=0)
        norms = np.linalg.norm(directions, axis=1, keepdims=True)
        self.directions = np.where(norms > 1e-12, directions / np.maximum(norms, 1e-12), [[1.0, 0.0]])
        self.normals = np.stack([-self.directions[:, 1], self.directions[:, 0]], axis=1)

    def __len__(self) -> int:
        return len(self.quads)

    def locate(self, arc: float) -> Tuple[int, float]:
        """Quad index and in-quad fraction of the midline point at arc length ``arc``."""
        i = int(np.clip(np.searchsorted(self.cumulative, arc, side="right") - 1, 0, len(self) - 1))
        t = (arc - self.cumulative[i]) / self.lengths[i] if self.lengths[i] > 0 else 0.0
        return i, float(np.clip(t, 0.0, 1.0))

    def shrunk(self, height_ratio: float, end_ratio: float) -> Tuple[np.ndarray, np.ndarray, int]:
        """Cross-sections of the text center line region and the index of its first quad."""
        ends = (np.linalg.norm(self.top[0] - self.bottom[0]), np.linalg.norm(self.top[-1] - self.bottom[-1]))
        cut = end_ratio * min(min(ends), self.total_length)
        i_s, t_s = self.locate(cut)
        i_e, t_e = self.locate(self.total_length - cut)
        top = [self.top[i_s] + t_s * (self.top[i_s + 1] - self.top[i_s])]
        bottom = [self.bottom[i_s] + t_s * (self.bottom[i_s + 1] - self.bottom[i_s])]
        top += list(self.top[i_s + 1: i_e + 1])
        bottom += list(self.bottom[i_s + 1: i_e + 1])
        top.append(self.top[i_e] + t_e * (self.top[i_e + 1] - self.top[i_e]))
        bottom.append(self.bottom[i_e] + t_e * (self.bottom[i_e + 1] - self.bottom[i_e]))
        top, bottom = np.array(top), np.array(bottom)
        span = bottom - top
        return top + height_ratio * span, bottom - height_ratio * span, i_s

    def border_offsets(self, quad: int, points: np.ndarray) -> np.ndarray:
        """Offsets from ``points`` to the upper and lower edges along the quad's normal."""
        n = self.normals[quad]
        out = np.zeros((len(points), 4))
        for k, (a, b) in enumerate(((self.top[quad], self.top[quad + 1]), (self.bottom[quad], self.bottom[quad + 1]))):
            edge = b - a
            denom = float(_cross(n, edge))
            if abs(denom) > 1e-9:
                lam = _cross(a - points, edge) / denom
                out[:, 2 * k: 2 * k + 2] = lam[:, None] * n
            else:
                t = np.clip(((points - a) @ edge) / max(float(edge @ edge), 1e-12), 0.0, 1.0)
                out[:, 2 * k: 2 * k + 2] = a + t[:, None] * edge - points
        return out

    def arc_positions(self, points: np.ndarray, quad: int) -> np.ndarray:
        """Arc length along the midline of the projections of ``points`` onto quad ``quad``."""
        a, b = self.centers[quad], self.centers[quad + 1]
        seg = b - a
        t = np.clip(((points - a) @ seg) / max(float(seg @ seg), 1e-12), 0.0, 1.0)
        return self.cumulative[quad] + t * self.lengths[quad]


def cells_in_polygon(poly: np.ndarray, height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """Integer cell centers (x, y) covered by ``poly``, boundary included."""
    x0 = max(int(np.floor(poly[:, 0].min())), 0)
    x1 = min(int(np.ceil(poly[:, 0].max())), width - 1)
    y0 = max(int(np.floor(poly[:, 1].min())), 0)
    y1 = min(int(np.ceil(poly[:, 1].max())), height - 1)
    if x1 < x0 or y1 < y0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    ys, xs = np.mgrid[y0: y1 + 1, x0: x1 + 1]
    xs, ys = xs.ravel(), ys.ravel()
    inside = intersects_xy(Polygon(poly), xs.astype(np.float64), ys.astype(np.float64))
    return xs[inside], ys[inside]


def generate_label_maps(
    annotations: Sequence[WordAnnotation],
    dims: Tuple[int, int],
    height_ratio: float = settings.TCL_HEIGHT_SHRINK,
    end_ratio: float = settings.TCL_END_SHRINK,
    scale: int = settings.MAP_SCALE,
) -> LabelMaps:
    """Rasterize TCL and fill TBO / TDO for every word; ``dims`` is (H, W) in cells."""
    height, width = dims
    maps = MapSet.empty(height, width)
    ignore = np.zeros((height, width), dtype=bool)
    owner = np.full((height, width), -1, dtype=np.int64)

    for index, word in enumerate(annotations):
        if not word.ignore and len(word.text) == 0:
            raise AnnotationError(f"word {index} has an empty transcript and is not flagged ignore")
        extent = word.polygon.max(axis=0) - word.polygon.min(axis=0)
        if np.any(extent < scale):
            logging.warning(f"Skipping word {index} ('{word.text}'): smaller than one map cell")
            continue
        chain = QuadChain(word, scale)
        top, bottom, first = chain.shrunk(height_ratio, end_ratio)
        step = chain.total_length / max(len(word.text), 1)
        filled = 0
        for k in range(len(top) - 1):
            quad = first + k
            region = np.array([top[k], top[k + 1], bottom[k + 1], bottom[k]])
            if abs(_signed_area(region)) < 1e-12:
                continue
            xs, ys = cells_in_polygon(region, height, width)
            free = owner[ys, xs] < 0
            xs, ys = xs[free], ys[free]
            if not len(xs):
                continue
            points = np.stack([xs, ys], axis=1).astype(np.float64)
            maps.tcl[ys, xs, 0] = 1.0
            maps.tbo[ys, xs] = chain.border_offsets(quad, points)
            maps.tdo[ys, xs] = chain.directions[quad] * step
            owner[ys, xs] = index
            ignore[ys, xs] = word.ignore
            filled += len(xs)
        if filled == 0:
            logging.warning(f"Word {index} ('{word.text}') produced no center line cells")
    return LabelMaps(maps=maps, ignore=ignore, owner=owner)


def sample_centerline(
    annotation: WordAnnotation,
    dims: Tuple[int, int],
    instance_id: int = 0,
    step: float = settings.SAMPLE_STEP,
    min_step: float = settings.MIN_SAMPLE_STEP,
    scale: int = settings.MAP_SCALE,
) -> CenterPointSequence:
    """Densely sample the word midline in reading order.

    The step shrinks from ``step`` toward ``min_step`` until the sequence holds
    at least 2L+1 points; if even ``min_step`` cannot reach that, the sequence
    is flagged infeasible for recognition.
    """
    if annotation.ignore:
        raise AnnotationError("cannot sample a center line for an ignore-flagged word")
    height, width = dims
    chain = QuadChain(annotation, scale)
    total = chain.total_length
    needed = 2 * len(annotation.text) + 1

    def count(s: float) -> int:
        return int(np.floor(total / s + 1e-9)) + 1

    if count(step) < needed and total > 0:
        step = max(min_step, total / (needed - 1))
    n = count(step) if total > 0 else 1
    arcs = np.arange(n) * step
    points = np.stack(
        [np.interp(arcs, chain.cumulative, chain.centers[:, 0]), np.interp(arcs, chain.cumulative, chain.centers[:, 1])],
        axis=1,
    )
    quads = [chain.locate(a)[0] for a in arcs]
    points[:, 0] = np.clip(points[:, 0], 0, width - 1)
    points[:, 1] = np.clip(points[:, 1], 0, height - 1)
    feasible = n >= needed
    if not feasible:
        logging.warning(f"Word '{annotation.text}' is too short for recognition: {n} points < {needed}")
    return CenterPointSequence(
        points=points,
        directions=chain.directions[quads],
        instance_id=instance_id,
        feasible=feasible,
    )
