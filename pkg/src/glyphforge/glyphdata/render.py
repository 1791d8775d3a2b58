"""Procedural scene renderer: glyph lines over textured backgrounds.

Every sample is fully determined by (seed, RenderConfig). Scene images
are quantized to 8-bit levels at render time so the PGM corpus format
round-trips bit-identically.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DataError, UsageError
from ..tensor import Grid
from .font import get_font

MAX_LINE_CHARS = 20
MAX_LINES = 5


@dataclass
class TextLine:
    """One annotated text line; orientation is derived from the box aspect
    (width/height < 0.5 means vertical)."""

    content: str
    bbox: tuple  # (x, y, w, h) in pixels
    recognition_score: float = 1.0
    orientation: str = field(init=False)

    def __post_init__(self):
        if not (1 <= len(self.content) <= MAX_LINE_CHARS):
            raise UsageError(
                f"line content must have 1..{MAX_LINE_CHARS} characters, got {len(self.content)}"
            )
        self.bbox = tuple(int(v) for v in self.bbox)
        x, y, w, h = self.bbox
        if w <= 0 or h <= 0:
            raise UsageError(f"bbox must have positive extent, got {self.bbox}")
        self.orientation = "vertical" if w / h < 0.5 else "horizontal"


@dataclass
class GlyphSample:
    image: Grid
    lines: list
    glyph_map: Grid
    position_map: Grid
    class_sequences: list
    font: str = "basic5x7"


@dataclass
class RenderConfig:
    canvas: int = 32
    font: str = "basic5x7"
    classes: Optional[str] = None  # alphabet subset; None = full font alphabet
    min_lines: int = 1
    max_lines: int = 3
    min_chars: int = 1
    max_chars: int = 4
    scale: int = 1
    allow_vertical: bool = False
    bg_kinds: tuple = ("solid", "hgrad", "vgrad", "noise")
    bg_lo: float = 0.05
    bg_hi: float = 0.55
    glyph_lo: float = 0.85
    glyph_hi: float = 1.0
    margin: int = 1
    max_tries: int = 50

    def __post_init__(self):
        if self.canvas < 4 or (self.canvas & (self.canvas - 1)) != 0:
            raise UsageError(f"canvas must be a power of two >= 4, got {self.canvas}")
        if not (1 <= self.min_lines <= self.max_lines <= MAX_LINES):
            raise UsageError("line count range must satisfy 1 <= min <= max <= 5")
        if not (1 <= self.min_chars <= self.max_chars <= MAX_LINE_CHARS):
            raise UsageError("char count range must satisfy 1 <= min <= max <= 20")

    def alphabet(self):
        f = get_font(self.font)
        return self.classes if self.classes else f.alphabet


def line_geometry(n_chars, scale, orientation, font):
    """Box extent of a line: glyph cells separated by a one-glyph-pixel gap."""
    gw, gh = font.glyph_w * scale, font.glyph_h * scale
    gap = scale
    if orientation == "vertical":
        return gw, n_chars * gh + (n_chars - 1) * gap
    return n_chars * gw + (n_chars - 1) * gap, gh


def char_boxes(line, font):
    """Per-character cell boxes inside a line's bbox (pitch is uniform)."""
    x, y, w, h = line.bbox
    n = len(line.content)
    if line.orientation == "vertical":
        scale = w // font.glyph_w
        pitch = font.glyph_h * scale + scale
        return [(x, y + i * pitch, w, font.glyph_h * scale) for i in range(n)]
    scale = h // font.glyph_h
    pitch = font.glyph_w * scale + scale
    return [(x + i * pitch, y, font.glyph_w * scale, h) for i in range(n)]


def _scaled_bitmap(font, ch, scale):
    return np.kron(font.bitmap(ch), np.ones((scale, scale)))


def render_from_annotations(lines, canvas, font_name):
    """Deterministically rebuild glyph/position maps from line annotations."""
    font = get_font(font_name)
    glyph = np.zeros((canvas, canvas))
    position = np.zeros((canvas, canvas))
    for line in lines:
        x, y, w, h = line.bbox
        position[y : y + h, x : x + w] = 1.0
        for ch, (cx, cy, cw, chh) in zip(line.content, char_boxes(line, font)):
            scale = chh // font.glyph_h if line.orientation == "horizontal" else cw // font.glyph_w
            bm = _scaled_bitmap(font, ch, scale)
            glyph[cy : cy + bm.shape[0], cx : cx + bm.shape[1]] = bm
    return glyph, position


def _background(rng, cfg):
    k = cfg.bg_kinds[rng.integers(len(cfg.bg_kinds))]
    c = cfg.canvas
    lo, hi = cfg.bg_lo, cfg.bg_hi
    if k == "solid":
        return np.full((c, c), rng.uniform(lo, hi))
    if k in ("hgrad", "vgrad"):
        a, b = rng.uniform(lo, hi, size=2)
        ramp = np.linspace(a, b, c)
        return np.tile(ramp, (c, 1)) if k == "hgrad" else np.tile(ramp[:, None], (1, c))
    noise = rng.uniform(lo, hi, size=(c, c))
    # two box-blur passes keep the texture gentle enough to learn
    for _ in range(2):
        p = np.pad(noise, 1, mode="edge")
        noise = sum(
            p[dy : dy + c, dx : dx + c] for dy in range(3) for dx in range(3)
        ) / 9.0
    return np.clip(noise, lo, hi)


def _overlaps(box, others, sep=1):
    x, y, w, h = box
    for ox, oy, ow, oh in others:
        if x < ox + ow + sep and ox < x + w + sep and y < oy + oh + sep and oy < y + h + sep:
            return True
    return False


def render_sample(seed, cfg):
    """Render one annotated scene; identical seeds give identical samples."""
    rng = np.random.default_rng(seed)
    font = get_font(cfg.font)
    alphabet = cfg.alphabet()
    canvas = cfg.canvas
    image = _background(rng, cfg)
    n_lines = int(rng.integers(cfg.min_lines, cfg.max_lines + 1))
    lines = []
    placed = []
    for _ in range(n_lines):
        n_chars = int(rng.integers(cfg.min_chars, cfg.max_chars + 1))
        orientation = "vertical" if (cfg.allow_vertical and n_chars > 1 and rng.random() < 0.3) else "horizontal"
        w, h = line_geometry(n_chars, cfg.scale, orientation, font)
        if w + 2 * cfg.margin > canvas or h + 2 * cfg.margin > canvas:
            raise DataError(
                f"line of {n_chars} chars at scale {cfg.scale} does not fit a {canvas}px canvas"
            )
        for attempt in range(cfg.max_tries + 1):
            if attempt == cfg.max_tries:
                raise DataError(
                    f"could not place {n_lines} lines on a {canvas}px canvas "
                    f"after {cfg.max_tries} tries (seed {seed})"
                )
            x = int(rng.integers(cfg.margin, canvas - w - cfg.margin + 1))
            y = int(rng.integers(cfg.margin, canvas - h - cfg.margin + 1))
            if not _overlaps((x, y, w, h), placed):
                break
        placed.append((x, y, w, h))
        content = "".join(alphabet[rng.integers(len(alphabet))] for _ in range(n_chars))
        lines.append(TextLine(content=content, bbox=(x, y, w, h)))

    glyph_map, position_map = render_from_annotations(lines, canvas, cfg.font)
    for line in lines:
        ink = rng.uniform(cfg.glyph_lo, cfg.glyph_hi)
        x, y, w, h = line.bbox
        region = glyph_map[y : y + h, x : x + w]
        img = image[y : y + h, x : x + w]
        image[y : y + h, x : x + w] = img * (1.0 - region) + ink * region
    image = np.rint(np.clip(image, 0.0, 1.0) * 255.0) / 255.0

    return GlyphSample(
        image=Grid(image[None]),
        lines=lines,
        glyph_map=Grid(glyph_map[None]),
        position_map=Grid(position_map[None]),
        class_sequences=[[font.class_id(c) for c in line.content] for line in lines],
        font=cfg.font,
    )


def score_lines(sample, scorer):
    """Fill recognition scores using a pluggable scorer(crop, class_id) -> score."""
    font = get_font(sample.font)
    img = sample.image.data[0]
    for line, seq in zip(sample.lines, sample.class_sequences):
        scores = []
        for (cx, cy, cw, ch), cid in zip(char_boxes(line, font), seq):
            scores.append(scorer(img[cy : cy + ch, cx : cx + cw], cid))
        line.recognition_score = float(np.mean(scores)) if scores else 0.0
    return sample
