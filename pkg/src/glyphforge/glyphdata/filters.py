"""Corpus admission filters and statistics.

Rules fire in a fixed documented order and the first violation is
reported: image width, image aspect, total line count, small-line count,
low-recognition-score count. Thresholds are configuration, not
constants: the defaults mirror full-resolution corpora; toy 32px
pipelines scale min_width and small_extent_px by 1/8.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from ..errors import UsageError

RULE_ORDER = ("min_width", "aspect", "max_lines", "small_text", "low_score")


@dataclass
class FilterConfig:
    min_width: int = 256
    aspect_min: float = 0.5
    aspect_max: float = 2.0
    max_lines: int = 10
    max_small_lines: int = 3
    small_extent_px: int = 30
    min_rec_score: float = 0.7
    max_low_score_lines: int = 3

    def __post_init__(self):
        if self.aspect_min >= self.aspect_max:
            raise UsageError(
                f"aspect_min {self.aspect_min} must be below aspect_max {self.aspect_max}"
            )
        for name in ("min_width", "max_lines", "max_small_lines", "small_extent_px",
                     "max_low_score_lines"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be non-negative")

    def scaled(self, factor):
        """Proportionally rescale the pixel thresholds (e.g. 1/8 for 32px toys)."""
        return FilterConfig(
            min_width=max(1, int(round(self.min_width * factor))),
            aspect_min=self.aspect_min,
            aspect_max=self.aspect_max,
            max_lines=self.max_lines,
            max_small_lines=self.max_small_lines,
            small_extent_px=max(1, int(round(self.small_extent_px * factor))),
            min_rec_score=self.min_rec_score,
            max_low_score_lines=self.max_low_score_lines,
        )


@dataclass
class FilterDecision:
    accept: bool
    reason: Optional[str] = None


def _is_small(line, cfg):
    _, _, w, h = line.bbox
    if line.orientation == "vertical":
        return w < cfg.small_extent_px
    return h < cfg.small_extent_px


def filter_sample(meta, cfg):
    """Apply the admission rules to {width, height, lines} metadata.

    Returns the decision plus the id of the first violated rule.
    """
    width = meta["width"] if isinstance(meta, dict) else meta.width
    height = meta["height"] if isinstance(meta, dict) else meta.height
    lines = meta["lines"] if isinstance(meta, dict) else meta.lines

    if width < cfg.min_width:
        return FilterDecision(False, "min_width")
    aspect = width / height
    if aspect > cfg.aspect_max or aspect < cfg.aspect_min:
        return FilterDecision(False, "aspect")
    if len(lines) > cfg.max_lines:
        return FilterDecision(False, "max_lines")
    if sum(1 for l in lines if _is_small(l, cfg)) > cfg.max_small_lines:
        return FilterDecision(False, "small_text")
    if sum(1 for l in lines if l.recognition_score < cfg.min_rec_score) > cfg.max_low_score_lines:
        return FilterDecision(False, "low_score")
    return FilterDecision(True, None)


@dataclass
class DatasetStats:
    image_count: int
    line_count: int
    mean_chars_per_line: float
    frac_lines_under_20: float


def dataset_stats(samples):
    """Exact corpus counts; an empty corpus reports zeros by convention."""
    image_count = 0
    line_count = 0
    char_total = 0
    under = 0
    for sample in samples:
        image_count += 1
        for line in sample.lines:
            line_count += 1
            char_total += len(line.content)
            if len(line.content) < 20:
                under += 1
    mean = char_total / line_count if line_count else 0.0
    frac = under / line_count if line_count else 0.0
    return DatasetStats(image_count, line_count, mean, frac)
