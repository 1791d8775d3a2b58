"""Procedural glyph-scene corpus: fonts, renderer, filters, persistence."""
from .corpus import read_dataset, read_manifest, write_dataset
from .filters import DatasetStats, FilterConfig, FilterDecision, dataset_stats, filter_sample
from .font import FONT_BASIC, FONT_DENSE, Font, get_font
from .render import (
    GlyphSample,
    RenderConfig,
    TextLine,
    char_boxes,
    line_geometry,
    render_from_annotations,
    render_sample,
    score_lines,
)

__all__ = [
    "DatasetStats",
    "FONT_BASIC",
    "FONT_DENSE",
    "FilterConfig",
    "FilterDecision",
    "Font",
    "GlyphSample",
    "RenderConfig",
    "TextLine",
    "char_boxes",
    "dataset_stats",
    "filter_sample",
    "get_font",
    "line_geometry",
    "read_dataset",
    "read_manifest",
    "render_from_annotations",
    "render_sample",
    "score_lines",
    "write_dataset",
]
