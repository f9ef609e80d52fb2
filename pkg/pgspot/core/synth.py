"""Deterministic synthetic scenes: words stamped from a built-in bitmap font
along straight or curved baselines, with their polygons, ground-truth maps,
an ideal TCC map and controlled map noise."""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from shapely.geometry import Polygon

from pgspot.core.config import settings
from pgspot.core.ctc import CHARSET, encode_transcript
from pgspot.core.labels import QuadChain, cells_in_polygon, generate_label_maps
from pgspot.models.annotation import ImageRecord, WordAnnotation
from pgspot.models.configs import NoiseConfig, SceneConfig
from pgspot.models.maps import MapSet

ORACLE_LOGIT = 10.0
GLYPH_CORE = (0.2, 0.8)  # fraction of a glyph's span that carries its class
PLACEMENT_ATTEMPTS = 100
WORD_GAP = 4.0  # pixels kept free around every word

# 5 x 7 glyphs, one string per row
FONT: Dict[str, Tuple[str, ...]] = {
    char: tuple(rows.split())
    for char, rows in {
        "A": ".###. #...# #...# ##### #...# #...# #...#",
        "B": "####. #...# #...# ####. #...# #...# ####.",
        "C": ".###. #...# #.... #.... #.... #...# .###.",
        "D": "####. #...# #...# #...# #...# #...# ####.",
        "E": "##### #.... #.... ####. #.... #.... #####",
        "F": "##### #.... #.... ####. #.... #.... #....",
        "G": ".###. #...# #.... #.### #...# #...# .###.",
        "H": "#...# #...# #...# ##### #...# #...# #...#",
        "I": ".###. ..#.. ..#.. ..#.. ..#.. ..#.. .###.",
        "J": "..### ...#. ...#. ...#. ...#. #..#. .##..",
        "K": "#...# #..#. #.#.. ##... #.#.. #..#. #...#",
        "L": "#.... #.... #.... #.... #.... #.... #####",
        "M": "#...# ##.## #.#.# #.#.# #...# #...# #...#",
        "N": "#...# #...# ##..# #.#.# #..## #...# #...#",
        "O": ".###. #...# #...# #...# #...# #...# .###.",
        "P": "####. #...# #...# ####. #.... #.... #....",
        "Q": ".###. #...# #...# #...# #.#.# #..#. .##.#",
        "R": "####. #...# #...# ####. #.#.. #..#. #...#",
        "S": ".#### #.... #.... .###. ....# ....# ####.",
        "T": "##### ..#.. ..#.. ..#.. ..#.. ..#.. ..#..",
        "U": "#...# #...# #...# #...# #...# #...# .###.",
        "V": "#...# #...# #...# #...# #...# .#.#. ..#..",
        "W": "#...# #...# #...# #.#.# #.#.# #.#.# .#.#.",
        "X": "#...# #...# .#.#. ..#.. .#.#. #...# #...#",
        "Y": "#...# #...# .#.#. ..#.. ..#.. ..#.. ..#..",
        "Z": "##### ....# ...#. ..#.. .#... #.... #####",
        "0": ".###. #...# #..## #.#.# ##..# #...# .###.",
        "1": "..#.. .##.. ..#.. ..#.. ..#.. ..#.. .###.",
        "2": ".###. #...# ....# ...#. ..#.. .#... #####",
        "3": "##### ...#. ..#.. ...#. ....# #...# .###.",
        "4": "...#. ..##. .#.#. #..#. ##### ...#. ...#.",
        "5": "##### #.... ####. ....# ....# #...# .###.",
        "6": "..##. .#... #.... ####. #...# #...# .###.",
        "7": "##### ....# ...#. ..#.. .#... .#... .#...",
        "8": ".###. #...# #...# .###. #...# #...# .###.",
        "9": ".###. #...# #...# .#### ....# ...#. .##..",
    }.items()
}
ADVANCE = 6  # font pixels per character
BAND = 9  # font pixels across the word band: 7 glyph rows and one of padding on each side


@dataclass
class Scene:
    image: np.ndarray  # H x W grayscale in [0, 1]
    annotations: List[WordAnnotation]
    seed: int
    flags: List[str] = field(default_factory=list)

    @property
    def map_dims(self) -> Tuple[int, int]:
        h, w = self.image.shape
        return -(-h // settings.MAP_SCALE), -(-w // settings.MAP_SCALE)


class Baseline:
    """Arc-length parameterized word midline in image pixels."""

    def __init__(self, length: float, sagitta: float, angle: float, center: Tuple[float, float]):
        t = np.linspace(0.0, 1.0, 257)[:, None]
        if sagitta == 0:
            local = np.hstack([t * length, np.zeros_like(t)])
        else:
            p0, p1, p2 = np.array([0.0, 0.0]), np.array([length / 2, -2.0 * sagitta]), np.array([length, 0.0])
            local = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t ** 2 * p2
            arc = np.linalg.norm(np.diff(local, axis=0), axis=1).sum()
            local = local * (length / arc)
        local = local - 0.5 * (local[0] + local[-1])
        c, s = np.cos(np.radians(angle)), np.sin(np.radians(angle))
        self.points = local @ np.array([[c, s], [-s, c]]) + np.asarray(center)
        self.arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(self.points, axis=0), axis=1))])
        tangents = np.gradient(self.points, axis=0)
        self.tangents = tangents / np.linalg.norm(tangents, axis=1, keepdims=True)
        self.length = float(self.arc[-1])

    def at(self, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Points and unit normals (toward the bottom edge) at arc lengths ``u``."""
        u = np.asarray(u, dtype=np.float64)
        pts = np.stack([np.interp(u, self.arc, self.points[:, k]) for k in range(2)], axis=-1)
        tan = np.stack([np.interp(u, self.arc, self.tangents[:, k]) for k in range(2)], axis=-1)
        tan = tan / np.linalg.norm(tan, axis=-1, keepdims=True)
        return pts, np.stack([-tan[..., 1], tan[..., 0]], axis=-1)


def word_polygon(baseline: Baseline, n_chars: int, height: float, curved: bool) -> np.ndarray:
    """Band outline: top edge left to right, then bottom edge right to left."""
    u = np.array([0.0, baseline.length]) if not curved else np.linspace(0.0, baseline.length, n_chars + 1)
    pts, normals = baseline.at(u)
    top = pts - 0.5 * height * normals
    bottom = pts + 0.5 * height * normals
    return np.concatenate([top, bottom[::-1]])


def stamp_word(image: np.ndarray, baseline: Baseline, text: str, glyph_scale: int, ink: float = 1.0):
    """Forward-map every set font pixel, oversampled, onto the image along the baseline."""
    sub = 2 * glyph_scale
    frac = ((np.arange(sub) + 0.5) / sub - 0.5) * glyph_scale
    du, dv = np.meshgrid(frac, frac)
    us, vs = [], []
    for i, char in enumerate(text):
        for row, line in enumerate(FONT[char]):
            for col, bit in enumerate(line):
                if bit == "#":
                    us.append((i * ADVANCE + 1 + col) * glyph_scale)
                    vs.append((row - 3) * glyph_scale)
    if not us:
        return
    u = (np.asarray(us)[:, None] + du.ravel()).ravel()
    v = (np.asarray(vs)[:, None] + dv.ravel()).ravel()
    pts, normals = baseline.at(u)
    xy = np.floor(pts + v[:, None] * normals + 0.5).astype(np.int64)
    h, w = image.shape
    keep = (xy[:, 0] >= 0) & (xy[:, 0] < w) & (xy[:, 1] >= 0) & (xy[:, 1] < h)
    image[xy[keep, 1], xy[keep, 0]] = ink


def render_scene(seed: int, config: Optional[SceneConfig] = None) -> Scene:
    """Render a scene of 1-3 non-overlapping words; the same (seed, config) gives the same bytes."""
    config = config or SceneConfig()
    rng = np.random.default_rng(seed)
    image = np.zeros((config.height, config.width))
    band = BAND * config.glyph_scale
    count = int(rng.integers(config.min_words, config.max_words + 1))
    placed: List[Polygon] = []
    words, flags = [], []
    for _ in range(count):
        n_chars = int(rng.integers(config.min_chars, config.max_chars + 1))
        text = "".join(CHARSET.alphabet[int(i)] for i in rng.integers(0, len(CHARSET.alphabet), n_chars))
        curved = bool(rng.random() < config.curved_fraction)
        length = n_chars * ADVANCE * config.glyph_scale
        for _attempt in range(PLACEMENT_ATTEMPTS):
            sagitta = 0.0
            if curved:
                sagitta = rng.uniform(*config.curvature_range) * length * rng.choice([-1.0, 1.0])
            angle = rng.uniform(*config.rotation_range)
            center = (rng.uniform(0, config.width), rng.uniform(0, config.height))
            baseline = Baseline(length, sagitta, angle, center)
            poly = word_polygon(baseline, n_chars, band, curved)
            inside = (poly.min() >= 0) and (poly[:, 0].max() <= config.width - 1) and (poly[:, 1].max() <= config.height - 1)
            shape = Polygon(poly)
            if not inside or not shape.is_valid:
                continue
            if any(shape.buffer(WORD_GAP).intersects(other) for other in placed):
                continue
            placed.append(shape)
            stamp_word(image, baseline, text, config.glyph_scale)
            words.append(WordAnnotation(poly=[tuple(map(float, p)) for p in poly], text=text))
            break
        else:
            logging.warning(f"Scene {seed}: no free spot for word '{text}' after {PLACEMENT_ATTEMPTS} attempts")
            flags.append("fewer-words")
            break
    if config.noise > 0:
        image = np.clip(image + rng.normal(0.0, config.noise, image.shape), 0.0, 1.0)
    return Scene(image=image, annotations=words, seed=seed, flags=flags)


def oracle_tcc(
    scene: Union[Scene, Sequence[WordAnnotation]],
    dims: Optional[Tuple[int, int]] = None,
    owner: Optional[np.ndarray] = None,
) -> np.ndarray:
    """The TCC map a perfect network would emit for the scene's words.

    Each cell inside a word gets the arc-length position of its projection on
    the midline; the central part of glyph i's share of that length carries
    +10 for the character, every other cell +10 for background. With the
    ``owner`` map of the label maps, center line cells owned by one word are
    never written by another.
    """
    words = scene.annotations if isinstance(scene, Scene) else list(scene)
    if dims is None:
        dims = scene.map_dims
    height, width = dims
    tcc = np.zeros((height, width, settings.NUM_CLASSES))
    tcc[..., CHARSET.blank] = ORACLE_LOGIT
    for index, word in enumerate(words):
        if word.ignore:
            continue
        encoded = encode_transcript(word.text)
        if encoded.ignore:
            continue
        chain = QuadChain(word)
        n = len(encoded.indices)
        for quad in range(len(chain)):
            xs, ys = cells_in_polygon(chain.quads[quad], height, width)
            if owner is not None:
                mine = (owner[ys, xs] < 0) | (owner[ys, xs] == index)
                xs, ys = xs[mine], ys[mine]
            if not len(xs):
                continue
            arc = chain.arc_positions(np.stack([xs, ys], axis=1).astype(np.float64), quad)
            pos = arc / max(chain.total_length, 1e-12) * n
            glyph = np.clip(np.floor(pos).astype(np.int64), 0, n - 1)
            within = pos - glyph
            core = (within >= GLYPH_CORE[0]) & (within <= GLYPH_CORE[1])
            labels = np.asarray(encoded.indices)[glyph[core]]
            tcc[ys[core], xs[core], :] = 0.0
            tcc[ys[core], xs[core], labels] = ORACLE_LOGIT
    return tcc


def scene_maps(scene: Scene, with_oracle: bool = True) -> MapSet:
    """Ground-truth map set of a scene, optionally with the oracle TCC."""
    labels = generate_label_maps(scene.annotations, scene.map_dims)
    maps = labels.maps
    if with_oracle:
        maps.tcc = oracle_tcc(scene, owner=labels.owner)
    return maps


def perturb(maps: MapSet, noise: NoiseConfig, seed: int = 0) -> MapSet:
    """Independent per-cell noise on every map; all-zero noise returns an equal copy."""
    rng = np.random.default_rng(seed)
    out = maps.copy()
    shape = (out.height, out.width)
    if noise.tcl_flip_rate > 0:
        flip = rng.random(shape) < noise.tcl_flip_rate
        out.tcl[flip] = 1.0 - out.tcl[flip]
    if noise.offset_jitter > 0:
        out.tbo += rng.normal(0.0, noise.offset_jitter, out.tbo.shape)
        out.tdo += rng.normal(0.0, noise.offset_jitter, out.tdo.shape)
    if noise.tcc_noise > 0:
        out.tcc += rng.normal(0.0, noise.tcc_noise, out.tcc.shape)
    if noise.tcc_label_noise > 0:
        ys, xs = np.nonzero(rng.random(shape) < noise.tcc_label_noise)
        best = out.tcc[ys, xs].argmax(axis=1)
        other = (best + rng.integers(1, settings.NUM_CLASSES, len(best))) % settings.NUM_CLASSES
        hi, lo = out.tcc[ys, xs, best].copy(), out.tcc[ys, xs, other].copy()
        out.tcc[ys, xs, best], out.tcc[ys, xs, other] = lo, hi
    return out


def scene_record(scene: Scene, image: str) -> ImageRecord:
    h, w = scene.image.shape
    return ImageRecord(image=image, width=w, height=h, words=scene.annotations)
