"""Corpus persistence: one PGM per image, one JSON sidecar per sample,
plus a manifest. Glyph and position maps are not stored; they rebuild
exactly from the annotations on load."""
from __future__ import annotations

import json
import os

from ..errors import DataError
from ..pgm import read_pgm, write_pgm
from ..tensor import Grid
from .font import get_font
from .render import GlyphSample, TextLine, render_from_annotations

MANIFEST = "manifest.json"


def write_dataset(samples, dirpath, canvas=None, font=None):
    os.makedirs(dirpath, exist_ok=True)
    items = []
    for i, s in enumerate(samples):
        img_name = f"image_{i:05d}.pgm"
        side_name = f"sample_{i:05d}.json"
        write_pgm(os.path.join(dirpath, img_name), s.image.data[0])
        sidecar = {
            "lines": [
                {
                    "content": l.content,
                    "bbox": list(l.bbox),
                    "orientation": l.orientation,
                    "score": l.recognition_score,
                }
                for l in s.lines
            ]
        }
        with open(os.path.join(dirpath, side_name), "w") as fh:
            json.dump(sidecar, fh, indent=1)
        items.append({"image": img_name, "sidecar": side_name})
        if canvas is None:
            canvas = s.image.data.shape[-1]
        if font is None:
            font = s.font
    manifest = {"version": 1, "count": len(items), "canvas": canvas, "font": font, "items": items}
    with open(os.path.join(dirpath, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def read_manifest(dirpath):
    path = os.path.join(dirpath, MANIFEST)
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataError(f"no corpus manifest at {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}")


def read_dataset(dirpath):
    manifest = read_manifest(dirpath)
    font = get_font(manifest["font"])
    canvas = manifest["canvas"]
    samples = []
    for item in manifest["items"]:
        side_path = os.path.join(dirpath, item["sidecar"])
        try:
            with open(side_path) as fh:
                sidecar = json.load(fh)
        except FileNotFoundError:
            raise DataError(f"missing sidecar {side_path}")
        except json.JSONDecodeError as exc:
            raise DataError(f"{side_path}: invalid JSON at line {exc.lineno} col {exc.colno}")
        try:
            lines = [
                TextLine(content=l["content"], bbox=tuple(l["bbox"]),
                         recognition_score=l.get("score", 1.0))
                for l in sidecar["lines"]
            ]
        except (KeyError, TypeError) as exc:
            raise DataError(f"{side_path}: malformed line record ({exc})")
        image = read_pgm(os.path.join(dirpath, item["image"]))
        glyph, position = render_from_annotations(lines, canvas, manifest["font"])
        samples.append(
            GlyphSample(
                image=Grid(image[None]),
                lines=lines,
                glyph_map=Grid(glyph[None]),
                position_map=Grid(position[None]),
                class_sequences=[[font.class_id(c) for c in l.content] for l in lines],
                font=manifest["font"],
            )
        )
    return samples
