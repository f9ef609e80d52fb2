"""Single-shot inference path: map set in, spotted words out.

Regions come from connected components of the TCL map, their skeletons are
read as center point sequences, border offsets restore the polygon and the
gathered TCC rows are decoded. There is no suppression or cropping step.
"""
import logging
from typing import List, Optional, Tuple

import cv2
import numpy as np
from shapely.geometry import MultiPoint, Polygon
from shapely.geometry.polygon import orient
from skimage.morphology import skeletonize

from pgspot.core.config import settings
from pgspot.core.ctc import CHARSET, Charset, gather_points, greedy_decode
from pgspot.models.configs import SpotConfig
from pgspot.models.maps import CenterPointSequence, MapSet, SpottingResult
from pgspot.models.reports import ResultRecord

WEAK_DIRECTION = 1e-6


def extract_regions(
    tcl: np.ndarray, threshold: float = settings.TCL_THRESHOLD, min_area: int = settings.MIN_AREA
) -> List[np.ndarray]:
    """8-connected components of ``tcl >= threshold``, in raster order of their first cell."""
    score = np.asarray(tcl, dtype=np.float64)
    if score.ndim == 3:
        score = score[..., 0]
    binary = (score >= threshold).astype(np.uint8)
    count, labels = cv2.connectedComponents(binary, connectivity=8)
    if count <= 1:
        return []
    ids, first = np.unique(labels.ravel(), return_index=True)
    regions = []
    for label in ids[np.argsort(first)]:
        if label == 0:
            continue
        mask = labels == label
        area = int(mask.sum())
        if area < min_area:
            logging.debug(f"Dropping region of {area} cells (< {min_area})")
            continue
        regions.append(mask)
    return regions


def _is_simple(window: np.ndarray) -> bool:
    """Whether deleting the center of a 3 x 3 window keeps the local topology."""
    ring = window.astype(np.uint8)
    ring[1, 1] = 0
    if cv2.connectedComponents(ring, connectivity=8)[0] - 1 != 1:
        return False
    background = (~window).astype(np.uint8)
    _, labels = cv2.connectedComponents(background, connectivity=4)
    touching = labels[[0, 1, 1, 2], [1, 0, 2, 1]]
    return len(set(touching[touching > 0].tolist())) == 1


def _end_count(window: np.ndarray) -> int:
    """Pixels with exactly one 8-neighbour among the inner 3 x 3 of a 5 x 5 window."""
    count = 0
    for i in range(1, 4):
        for j in range(1, 4):
            if window[i, j] and window[i - 1: i + 2, j - 1: j + 2].sum() == 2:
                count += 1
    return count


def _prune_blocks(skeleton: np.ndarray) -> np.ndarray:
    """Delete one pixel of every all-set 2 x 2 block where that keeps the topology.

    Pixels whose removal also keeps the local endpoint count are preferred.
    """
    grid = np.pad(skeleton, 2)
    while True:
        blocks = grid[:-1, :-1] & grid[1:, :-1] & grid[:-1, 1:] & grid[1:, 1:]
        removed = False
        for y, x in zip(*np.nonzero(blocks)):
            cells = [(y, x), (y, x + 1), (y + 1, x), (y + 1, x + 1)]
            if not all(grid[c] for c in cells):
                continue
            fallback = None
            for cy, cx in cells:
                if not _is_simple(grid[cy - 1: cy + 2, cx - 1: cx + 2]):
                    continue
                window = grid[cy - 2: cy + 3, cx - 2: cx + 3]
                ends = _end_count(window)
                grid[cy, cx] = False
                if _end_count(window) == ends:
                    fallback = None
                    removed = True
                    break
                grid[cy, cx] = True
                fallback = fallback or (cy, cx)
            if fallback is not None:
                grid[fallback] = False
                removed = True
        if not removed:
            return grid[2:-2, 2:-2]


def thin_skeleton(mask: np.ndarray) -> np.ndarray:
    """One-cell-wide 8-connected skeleton, thinned until it no longer changes.

    Corner and junction pixels that ``skeletonize`` leaves as 2 x 2 blocks are
    pruned; a block is kept only when every one of its pixels joins parts the
    others cannot.
    """
    current = np.asarray(mask, dtype=bool)
    while True:
        thinned = _prune_blocks(skeletonize(current))
        if np.array_equal(thinned, current):
            return thinned
        current = thinned


def _dominant_axis(points: np.ndarray) -> np.ndarray:
    extent = points.max(axis=0) - points.min(axis=0)
    return np.array([1.0, 0.0]) if extent[0] >= extent[1] else np.array([0.0, 1.0])


def order_centerline(
    skeleton: np.ndarray, tdo: np.ndarray, use_tdo: bool = True, instance_id: int = 0
) -> CenterPointSequence:
    """Skeleton cells sorted by their projection on the mean TDO direction.

    Ties fall back to the projection on the perpendicular, then to raster order.
    """
    ys, xs = np.nonzero(skeleton)
    points = np.stack([xs, ys], axis=1).astype(np.float64)
    flags = []
    if use_tdo:
        mean = np.asarray(tdo, dtype=np.float64)[ys, xs].mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < WEAK_DIRECTION:
            direction = _dominant_axis(points)
            flags.append("weak-direction")
        else:
            direction = mean / norm
    else:
        direction = _dominant_axis(points)
        flags.append("no-tdo")
    perp = np.array([-direction[1], direction[0]])
    order = np.lexsort((np.arange(len(points)), points @ perp, points @ direction))
    return CenterPointSequence(
        points=points[order],
        directions=np.tile(direction, (len(points), 1)),
        instance_id=instance_id,
        flags=flags,
    )


def _lookup(offsets: np.ndarray, points: np.ndarray) -> np.ndarray:
    height, width = offsets.shape[:2]
    cells = np.floor(points + 0.5).astype(np.int64)
    cx = np.clip(cells[:, 0], 0, width - 1)
    cy = np.clip(cells[:, 1], 0, height - 1)
    return offsets[cy, cx]


def _signed_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _even_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull with positive orientation, padded to an even vertex count >= 4."""
    hull = MultiPoint([tuple(p) for p in points]).convex_hull
    if not isinstance(hull, Polygon) or hull.area <= 0:
        lo, hi = points.min(axis=0) - 0.5, points.max(axis=0) + 0.5
        return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])
    ring = np.asarray(orient(hull, sign=1.0).exterior.coords)[:-1]
    while len(ring) < 4 or len(ring) % 2:
        edges = np.linalg.norm(np.roll(ring, -1, axis=0) - ring, axis=1)
        k = int(edges.argmax())
        mid = 0.5 * (ring[k] + ring[(k + 1) % len(ring)])
        ring = np.insert(ring, k + 1, mid, axis=0)
    return ring


def _reach(region: np.ndarray, end: np.ndarray, outward: np.ndarray, height: float) -> float:
    """Distance from ``end`` to the edge of ``region`` along ``outward``, within the word band."""
    ys, xs = np.nonzero(region)
    cells = np.stack([xs, ys], axis=1).astype(np.float64) - end
    along = cells @ outward
    across = np.abs(cells @ np.array([-outward[1], outward[0]]))
    near = across <= 0.5 * height
    if not near.any():
        return 0.0
    return max(float(along[near].max()), 0.0) + 0.5


def restore_polygon(
    pi: CenterPointSequence,
    tbo: np.ndarray,
    expand_ratio: float = settings.EXPAND_RATIO,
    max_vertices: Optional[int] = settings.MAX_VERTICES,
    region: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, List[str]]:
    """Link the upper and lower border points of ``pi`` into one clockwise polygon.

    Each end moves outward by ``expand_ratio`` times its restored height; given
    the center line ``region``, it first moves to the region's edge, which the
    skeleton ends fall short of.

    Returns the 2k x 2 polygon in map coordinates and any flags raised.
    """
    flags = []
    points = pi.points
    if len(points) == 1:
        d = pi.mean_direction()
        points = np.stack([points[0] - 0.5 * d, points[0] + 0.5 * d])
        flags.append("single-point")
    offsets = _lookup(np.asarray(tbo, dtype=np.float64), points)
    upper = points + offsets[:, :2]
    lower = points + offsets[:, 2:]

    n = len(points)
    if expand_ratio > 0 or region is not None:
        k = min(3, n - 1)
        for end, inner in ((0, k), (n - 1, n - 1 - k)):
            outward = points[end] - points[inner]
            norm = np.linalg.norm(outward)
            if norm < 1e-12:
                continue
            outward = outward / norm
            height = float(np.linalg.norm(upper[end] - lower[end]))
            reach = _reach(region, points[end], outward, height) if region is not None else 0.0
            shift = (reach + expand_ratio * height) * outward
            upper[end] = upper[end] + shift
            lower[end] = lower[end] + shift

    if max_vertices and 2 * n > max_vertices:
        keep = np.unique(np.round(np.linspace(0, n - 1, max_vertices // 2)).astype(np.int64))
        upper, lower = upper[keep], lower[keep]

    polygon = np.concatenate([upper, lower[::-1]])
    if not Polygon(polygon).is_valid:
        logging.debug(f"Restored polygon of instance {pi.instance_id} self-intersects, using its convex hull")
        return _even_hull(polygon), flags + ["degenerate"]
    if _signed_area(polygon) < 0:
        polygon = np.concatenate([lower, upper[::-1]])
    return polygon, flags


def _spot_region(
    index: int, region: np.ndarray, skeleton: np.ndarray, maps: MapSet, config: SpotConfig, charset: Charset
) -> SpottingResult:
    if not skeleton.any():
        ys, xs = np.nonzero(region)
        mid = len(xs) // 2
        skeleton = np.zeros_like(region)
        skeleton[ys[mid], xs[mid]] = True
    pi = order_centerline(skeleton, maps.tdo, config.use_tdo, instance_id=index)
    polygon, flags = restore_polygon(pi, maps.tbo, config.expand_ratio, config.max_vertices, region)
    probs = gather_points(maps.tcc, pi)
    text, confidence = greedy_decode(probs, charset)
    return SpottingResult(
        polygon=polygon,
        transcript=text,
        confidence=confidence,
        center=pi,
        flags=pi.flags + flags,
        probs=probs.probs,
    )


def spot(maps: MapSet, config: Optional[SpotConfig] = None, charset: Charset = CHARSET) -> List[SpottingResult]:
    """Detect and read every text instance of one map set, in region order."""
    config = config or SpotConfig()
    regions = extract_regions(maps.tcl, config.tcl_threshold, config.min_area)
    if not regions:
        return []
    skeleton = thin_skeleton(np.logical_or.reduce(regions))
    results = []
    for index, region in enumerate(regions):
        try:
            results.append(_spot_region(index, region, skeleton & region, maps, config, charset))
        except Exception as e:
            logging.warning(f"Region {index} failed, keeping its hull: {e}")
            ys, xs = np.nonzero(region)
            cells = np.stack([xs, ys], axis=1).astype(np.float64)
            results.append(
                SpottingResult(
                    polygon=_even_hull(cells),
                    transcript="",
                    confidence=0.0,
                    center=CenterPointSequence(cells[:1], np.array([[1.0, 0.0]]), instance_id=index),
                    flags=["failed"],
                )
            )
    return results


def to_records(
    results: List[SpottingResult], scale: int = settings.MAP_SCALE, with_points: bool = False
) -> List[ResultRecord]:
    """Results as JSON-facing records in input pixels.

    Map point (x, y) scales to pixel (scale * x, scale * y): cell (r, c) stands
    for pixel (scale * c, scale * r), its top-left pixel, not the center of the
    scale x scale block it pools (half a cell minus half a pixel further right and
    down). Label maps use the same convention, so oracle polygons land on their
    annotations and a trained model's border offsets absorb the shift.
    """
    records = []
    for result in results:
        points = None
        if with_points:
            points = [(float(x) * scale, float(y) * scale) for x, y in result.center.points]
        records.append(
            ResultRecord(
                poly=result.pixel_polygon(scale),
                text=result.transcript,
                conf=round(float(result.confidence), 6),
                flags=list(result.flags),
                points=points,
            )
        )
    return records
