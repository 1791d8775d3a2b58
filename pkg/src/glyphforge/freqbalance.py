"""Inference-time balancing of base/skip/control features.

Two pieces: a radial low-frequency suppression filter applied to control
features in the frequency domain, and the fusion rule that concatenates
the (possibly rebalanced) skip+control block with the scaled base feature
ahead of each decoder layer. Training never applies either; the knobs are
inference-only.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SizeError
from .tensor import Grid, add, concat, fft2, ifft2, radial_frequency_map, reshape, scale
from .tensor.fourier import complex_mul_mask
from .tensor.grid import astype


@dataclass
class FreqEnhanceParams:
    """Balancing knobs: alpha scales control, beta scales base, s suppresses
    the spectrum below the normalized radius r_thresh (s = 1 is the identity).
    """

    alpha: float = 1.4
    beta: float = 1.2
    s: float = 0.2
    r_thresh: float = 0.25

    def __post_init__(self):
        if not (0.0 < self.r_thresh < 1.0):
            raise SizeError(f"r_thresh must lie in (0, 1), got {self.r_thresh}")
        if not (0.0 <= self.s <= 1.0):
            raise SizeError(f"s must lie in [0, 1], got {self.s}")


NEUTRAL = FreqEnhanceParams(alpha=1.0, beta=1.0, s=1.0, r_thresh=0.25)

_mask_cache = {}


def gamma_profile(r, params):
    """The radial filter value: s below r_thresh, 1 at or above it."""
    return np.where(np.asarray(r) < params.r_thresh, params.s, 1.0)


def _gamma_mask(h, w, params):
    key = (h, w, params.s, params.r_thresh)
    mask = _mask_cache.get(key)
    if mask is None:
        rmap = radial_frequency_map(h, w)
        # the map is centered; shift back to FFT bin order for masking
        mask = np.fft.ifftshift(gamma_profile(rmap.r, params))
        _mask_cache[key] = mask
    return mask


def gamma_modulate(c, params):
    """Suppress the low-frequency band of a control feature.

    Returns IFFT(FFT(c) * gamma) per channel, where gamma is s inside the
    normalized radius r_thresh and 1 outside. Accepts [H,W], [C,H,W] or
    [N,C,H,W] grids; differentiable end to end.
    """
    if not isinstance(c, Grid):
        c = Grid(c)
    shp = c.data.shape
    if len(shp) < 2:
        raise ShapeError(f"gamma_modulate needs spatial dims, got shape {shp}")
    h, w = shp[-2], shp[-1]
    mask = _gamma_mask(h, w, params)
    flat = reshape(c, (-1, h, w)) if len(shp) != 3 else c
    out = astype(ifft2(complex_mul_mask(fft2(flat), mask)), c.data.dtype)
    return reshape(out, shp) if len(shp) != 3 else out


def fuse(f, s, c_prime, params=None):
    """Assemble the decoder-layer input: concat([S + alpha*C', beta*F]).

    `params=None` (or NEUTRAL) is the plain path: the control feature is
    added to the skip unscaled and the base feature passes through as is.
    c_prime may be None, meaning a zero control contribution.
    """
    p = params if params is not None else NEUTRAL
    if f.data.shape[-2:] != s.data.shape[-2:]:
        raise ShapeError(
            f"base spatial {f.data.shape[-2:]} does not match skip spatial {s.data.shape[-2:]}"
        )
    if c_prime is not None:
        if c_prime.data.shape != s.data.shape:
            raise ShapeError(
                f"control shape {c_prime.data.shape} does not match skip shape {s.data.shape}"
            )
        lateral = add(s, scale(c_prime, p.alpha)) if p.alpha != 1.0 else add(s, c_prime)
    else:
        lateral = s
    base = scale(f, p.beta) if p.beta != 1.0 else f
    axis = s.data.ndim - 3
    return concat([lateral, base], axis=axis)


def sweep_params(eval_fn, combos, csv_path=None):
    """Evaluate a metric callable over a grid of enhancement parameters.

    eval_fn(FreqEnhanceParams) -> (acc, ned). Returns the rows; optionally
    writes them as CSV with columns alpha,beta,s,r_thresh,acc,ned.
    """
    rows = []
    for combo in combos:
        p = combo if isinstance(combo, FreqEnhanceParams) else FreqEnhanceParams(*combo)
        acc, ned = eval_fn(p)
        rows.append(
            {
                "alpha": p.alpha,
                "beta": p.beta,
                "s": p.s,
                "r_thresh": p.r_thresh,
                "acc": float(acc),
                "ned": float(ned),
            }
        )
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "beta", "s", "r_thresh", "acc", "ned"])
            for r in rows:
                w.writerow([r["alpha"], r["beta"], r["s"], r["r_thresh"], r["acc"], r["ned"]])
    return rows
