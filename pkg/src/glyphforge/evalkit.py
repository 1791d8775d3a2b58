"""Evaluation: template recognizer, sentence accuracy, edit-distance
similarity, and the radial log-amplitude spectrum analyzer."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError
from .glyphdata import char_boxes, get_font
from .tensor import Grid

LOG_FLOOR = 1e-12  # amplitude clamp so constant inputs stay finite under log


# -- recognizer ----------------------------------------------------------------

class TemplateBank:
    """Per-class normalized glyph templates built from an embedded font."""

    def __init__(self, font):
        self.font = font
        self.classes = font.alphabet
        self.shape = (font.glyph_h, font.glyph_w)
        self.templates = []
        for ch in font.alphabet:
            t = font.bitmap(ch).astype(np.float64)
            z = t - t.mean()
            n = np.linalg.norm(z)
            self.templates.append(z / n)
        self.templates = np.stack(self.templates)  # [K, gh, gw]


def _resample_nearest(crop, out_h, out_w):
    h, w = crop.shape
    ys = np.minimum((np.arange(out_h) * h) // out_h, h - 1)
    xs = np.minimum((np.arange(out_w) * w) // out_w, w - 1)
    return crop[np.ix_(ys, xs)]


def classify_crop(crop, bank):
    """Nearest class by normalized cross-correlation.

    Returns (class_id, score) with score = (1 + correlation) / 2 in [0,1].
    A crop with no contrast cannot be normalized and is rejected.
    """
    arr = crop.data if isinstance(crop, Grid) else np.asarray(crop, dtype=np.float64)
    arr = arr.reshape(arr.shape[-2:]).astype(np.float64)
    if arr.size == 0:
        raise NumericError("empty crop: zero-size region")
    gh, gw = bank.shape
    small = _resample_nearest(arr, gh, gw)
    z = small - small.mean()
    n = np.linalg.norm(z)
    if n < 1e-12:
        raise NumericError("empty crop: no contrast to classify")
    z = z / n
    corr = np.tensordot(bank.templates, z, axes=([1, 2], [0, 1]))
    best = int(np.argmax(corr))
    return best, float((1.0 + corr[best]) / 2.0)


def template_scorer(bank):
    """Adapter: scorer(crop, class_id) -> [0,1] for the dataset renderer."""

    def score(crop, class_id):
        try:
            pred, s = classify_crop(crop, bank)
        except NumericError:
            return 0.0
        return s if pred == class_id else 0.5 * s

    return score


# -- string metrics --------------------------------------------------------------

def levenshtein(a, b):
    """Classic DP edit distance (insert/delete/substitute, unit costs)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def ned(a, b):
    """Similarity form of normalized edit distance: 1 - lev/max(|a|,|b|).

    Both strings empty gives 1.0 by convention; higher is better.
    """
    if not a and not b:
        return 1.0
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def sentence_acc(pred_lines, gt_lines):
    """Fraction of lines reproduced exactly, over aligned line lists."""
    if len(pred_lines) != len(gt_lines):
        raise ShapeError(
            f"prediction has {len(pred_lines)} lines but ground truth has {len(gt_lines)}"
        )
    if not gt_lines:
        return 1.0
    return sum(1 for p, g in zip(pred_lines, gt_lines) if p == g) / len(gt_lines)


# -- spectrum analyzer -------------------------------------------------------------

@dataclass
class SpectrumCurve:
    radial_bins: list
    rel_log_amp: list
    log_amp: list = field(default_factory=list)  # unanchored values, for gap checks


def _ring_index(h, w):
    u = np.fft.fftshift(np.fft.fftfreq(h) * h)
    v = np.fft.fftshift(np.fft.fftfreq(w) * w)
    rr = np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)
    nbins = h // 2
    idx = np.minimum(np.rint(rr).astype(int), nbins - 1)
    return idx, nbins


def radial_log_amplitude(feature, anchor=True):
    """Radially averaged log amplitude of a [C,H,W] (or [H,W]) feature map.

    Per channel: centered FFT amplitude, mean over integer-radius rings
    (H/2 bins; the outer wedge folds into the last ring), natural log with
    a 1e-12 floor, then channel average. With anchor=True the curve is
    shifted so the lowest-frequency bin reads 0.
    """
    arr = feature.data if isinstance(feature, Grid) else np.asarray(feature, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"spectrum analyzer expects [C,H,W], got shape {arr.shape}")
    c, h, w = arr.shape
    for n, axis in ((h, "height"), (w, "width")):
        if n < 2 or (n & (n - 1)) != 0:
            raise ShapeError(f"spectrum {axis} {n} is not a power of two")
    idx, nbins = _ring_index(h, w)
    flat_idx = idx.ravel()
    counts = np.bincount(flat_idx, minlength=nbins)
    amp = np.abs(np.fft.fftshift(np.fft.fft2(arr, axes=(-2, -1)), axes=(-2, -1)))
    sums = np.stack([np.bincount(flat_idx, weights=amp[k].ravel(), minlength=nbins) for k in range(c)])
    ring_mean = sums / counts[None, :]
    logs = np.log(np.maximum(ring_mean, LOG_FLOOR)).mean(axis=0)
    centers = (np.arange(nbins) / nbins).tolist()
    rel = (logs - logs[0]).tolist() if anchor else logs.tolist()
    return SpectrumCurve(radial_bins=centers, rel_log_amp=rel, log_amp=logs.tolist())


def relative_log_amplitude(feature):
    """The anchored curve (first bin pinned to 0)."""
    return radial_log_amplitude(feature, anchor=True)


def suppressed_bins(h, r_thresh):
    """Ring indices whose entire radius spread lies below r_thresh."""
    nbins = h // 2
    rmax = np.sqrt(2.0) * (h / 2)
    return [k for k in range(nbins) if (k + 0.5) / rmax < r_thresh]


# -- model evaluation ---------------------------------------------------------------

@dataclass
class LineResult:
    line_id: int
    gt: str
    pred: str
    line_acc: int
    ned: float


@dataclass
class EvalReport:
    acc: float
    ned: float
    n: int
    lines: list
    confusion: np.ndarray

    def write_csv(self, lines_path, summary_path):
        with open(lines_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["line_id", "gt", "pred", "line_acc", "ned"])
            for r in self.lines:
                w.writerow([r.line_id, r.gt, r.pred, r.line_acc, f"{r.ned:.6f}"])
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["acc", "ned", "n"])
            w.writerow([f"{self.acc:.6f}", f"{self.ned:.6f}", self.n])


def read_line(image, line, bank):
    """Classify each character cell of a line; unreadable cells become '?'."""
    font = bank.font
    img = image.data[0] if isinstance(image, Grid) and image.data.ndim == 3 else np.asarray(image)
    chars = []
    for (cx, cy, cw, ch) in char_boxes(line, font):
        crop = img[cy : cy + ch, cx : cx + cw]
        try:
            cid, _ = classify_crop(crop, bank)
            chars.append(bank.classes[cid])
        except NumericError:
            chars.append("?")
    return "".join(chars)


def evaluate_model(model, eval_samples, bank):
    """Generate for every sample and score the produced text lines.

    `model` is a callable (sample, index) -> image Grid[1,H,W]; scoring is
    deterministic given the generated images.
    """
    k = len(bank.classes)
    confusion = np.zeros((k, k), dtype=np.int64)
    results = []
    line_id = 0
    for i, sample in enumerate(eval_samples):
        image = model(sample, i)
        for line in sample.lines:
            pred = read_line(image, line, bank)
            gt = line.content
            results.append(
                LineResult(line_id, gt, pred, int(pred == gt), ned(pred, gt))
            )
            for pc, gc in zip(pred, gt):
                if pc in bank.classes:
                    confusion[bank.classes.index(gc), bank.classes.index(pc)] += 1
            line_id += 1
    if not results:
        return EvalReport(0.0, 0.0, 0, [], confusion)
    acc = float(np.mean([r.line_acc for r in results]))
    mean_ned = float(np.mean([r.ned for r in results]))
    return EvalReport(acc, mean_ned, len(results), results, confusion)


def spectrum_csv(path, rows):
    """rows: iterables of (source, layer, r, rel_log_amp)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "layer", "r", "rel_log_amp"])
        for source, layer, r, v in rows:
            w.writerow([source, layer, f"{r:.6f}", f"{v:.6f}"])


def bank_for(font_name):
    return TemplateBank(get_font(font_name))
