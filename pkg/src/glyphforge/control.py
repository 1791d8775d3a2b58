"""Control branches: encoders for position/glyph/masked-image conditions.

Two branch instances exist with distinct parameters: the Global branch
(position + glyph) conditions the noisy half of the trajectory, the
Detail branch additionally receives a masked scene image and refines the
clean half. Each branch mirrors the base encoder topology, injects the
condition features after the stem, and emits one control grid per
decoder layer through zero-initialized projections, so a fresh branch is
exactly a no-op.
"""
from __future__ import annotations

import enum
import json
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError, NumericError, ShapeError
from .tensor import Grid, add, concat, fft2, ifft2, mul, reshape, silu
from .tensor.fourier import channels_to_complex, complex_to_channels
from .tensor.grid import astype, transpose
from .unet import Conv2d, Encoder, TimeCondEmbed


class StageKind(enum.Enum):
    GLOBAL = "global"
    DETAIL = "detail"


@dataclass
class ControlBundle:
    """Condition images: glyph rendering, binary position map, optional
    masked scene image (text regions zeroed; detail stage only)."""

    glyph: Grid
    position: Grid
    masked_image: Optional[Grid] = None

    def __post_init__(self):
        if self.glyph.data.shape != self.position.data.shape:
            raise ShapeError(
                f"glyph shape {self.glyph.data.shape} != position shape {self.position.data.shape}"
            )
        _require_binary(self.position.data, "position")
        g = self.glyph.data
        if g.min() < 0.0 or g.max() > 1.0:
            raise NumericError(f"glyph values must lie in [0,1], got [{g.min()}, {g.max()}]")
        if self.masked_image is not None:
            if self.masked_image.data.shape != self.position.data.shape:
                raise ShapeError("masked_image shape differs from position shape")
            overlap = np.abs(self.masked_image.data * self.position.data).max()
            if overlap > 0:
                raise NumericError(
                    f"masked_image must be zero inside the position mask (max overlap {overlap})"
                )

    def batched(self):
        """View as [N,1,H,W] grids (a single sample gains a batch axis)."""
        def up(g):
            return g if g is None or g.data.ndim == 4 else Grid(g.data[None])

        return ControlBundle(up(self.glyph), up(self.position), up(self.masked_image))


def _require_binary(arr, name):
    bad = ~((arr == 0.0) | (arr == 1.0))
    if bad.any():
        raise NumericError(f"{name} image must be binary 0/1; found other values")


# -- condition encoders -------------------------------------------------------

class SCBlock:
    """Spatial-only condition encoder: large-kernel input conv then a 3x3 stack."""

    def __init__(self, channels, rng, dtype=np.float32, big_kernel=9):
        self.inp = Conv2d(1, channels, big_kernel, rng, dtype=dtype)
        self.conv1 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype=dtype)

    def __call__(self, x):
        h = silu(self.inp(x))
        h = silu(self.conv1(h))
        return self.conv2(h)

    def named_parameters(self, prefix):
        out = self.inp.named_parameters(f"{prefix}.inp")
        out += self.conv1.named_parameters(f"{prefix}.conv1")
        out += self.conv2.named_parameters(f"{prefix}.conv2")
        return out


class FECBlock:
    """Two-branch condition encoder for glyph images.

    The spatial branch matches SCBlock; the frequency branch transforms
    the feature planes with a 2D FFT, applies a 1x1 convolution across
    the stacked real/imaginary channels (plus a smooth nonlinearity), and
    transforms back, keeping the real part. Branch outputs are summed (or
    concatenated, behind `fuse_mode`) and mixed by a 1x1 fuse conv.
    """

    def __init__(self, channels, rng, dtype=np.float32, big_kernel=9,
                 freq_enabled=True, fuse_mode="sum"):
        if fuse_mode not in ("sum", "concat"):
            raise ShapeError(f"fuse_mode must be 'sum' or 'concat', got {fuse_mode!r}")
        self.channels = channels
        self.freq_enabled = freq_enabled
        self.fuse_mode = fuse_mode
        self.inp = Conv2d(1, channels, big_kernel, rng, dtype=dtype)
        self.sp1 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.sp2 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.freq_conv = Conv2d(2 * channels, 2 * channels, 1, rng, dtype=dtype) if freq_enabled else None
        fuse_in = 2 * channels if (freq_enabled and fuse_mode == "concat") else channels
        self.fuse_conv = Conv2d(fuse_in, channels, 1, rng, dtype=dtype)

    def set_freq_identity(self):
        """Configure the frequency conv as re->re, im->im identity (test hook)."""
        c2 = 2 * self.channels
        w = np.zeros((c2, c2, 1, 1), dtype=self.freq_conv.weight.dtype)
        for i in range(c2):
            w[i, i, 0, 0] = 1.0
        self.freq_conv.weight.data[...] = w
        self.freq_conv.bias.data[...] = 0.0

    def frequency_branch(self, h, nonlinear=True):
        """FFT -> 1x1 conv on stacked re/im channels -> IFFT (real part)."""
        n, c, hh, ww = h.data.shape
        spec = fft2(reshape(h, (n * c, hh, ww)))
        planes = complex_to_channels(spec)  # [2*n*c, H, W]: re planes then im planes
        stacked = reshape(
            transpose(reshape(planes, (2, n, c, hh, ww)), (1, 0, 2, 3, 4)), (n, 2 * c, hh, ww)
        )
        y = self.freq_conv(stacked)
        if nonlinear:
            y = silu(y)
        back = reshape(
            transpose(reshape(y, (n, 2, c, hh, ww)), (1, 0, 2, 3, 4)), (2 * n * c, hh, ww)
        )
        out = astype(ifft2(channels_to_complex(back), require_real=False), h.data.dtype)
        return reshape(out, (n, c, hh, ww))

    def __call__(self, x, freq_nonlinear=True):
        h = silu(self.inp(x))
        sp = self.sp2(silu(self.sp1(h)))
        if not self.freq_enabled:
            return self.fuse_conv(sp)
        fr = self.frequency_branch(h, nonlinear=freq_nonlinear)
        merged = add(sp, fr) if self.fuse_mode == "sum" else concat([sp, fr], axis=1)
        return self.fuse_conv(merged)

    def named_parameters(self, prefix):
        out = self.inp.named_parameters(f"{prefix}.inp")
        out += self.sp1.named_parameters(f"{prefix}.sp1")
        out += self.sp2.named_parameters(f"{prefix}.sp2")
        if self.freq_conv is not None:
            out += self.freq_conv.named_parameters(f"{prefix}.freq_conv")
        out += self.fuse_conv.named_parameters(f"{prefix}.fuse_conv")
        return out


class MaskedImageEncoder:
    """Small conv stack for the detail stage's background anchor.

    The output conv starts at zero so a warm-started detail branch
    initially ignores the anchor.
    """

    def __init__(self, channels, rng, dtype=np.float32):
        self.conv1 = Conv2d(1, channels, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype=dtype, init_scale=0.0)

    def __call__(self, x):
        return self.conv2(silu(self.conv1(x)))

    def named_parameters(self, prefix):
        return self.conv1.named_parameters(f"{prefix}.conv1") + self.conv2.named_parameters(
            f"{prefix}.conv2"
        )


# -- helper ops ----------------------------------------------------------------

def sc_forward(position, params):
    """Run the spatial condition encoder; the position image must be binary."""
    _require_binary(position.data, "position")
    squeeze = position.data.ndim != 4
    x = reshape(position, (1,) + position.data.shape) if squeeze else position
    out = params(x)
    return reshape(out, out.data.shape[1:]) if squeeze else out


def fec_forward(glyph, params, freq_nonlinear=True):
    """Run the two-branch glyph encoder (differentiable end to end)."""
    squeeze = glyph.data.ndim != 4
    x = reshape(glyph, (1,) + glyph.data.shape) if squeeze else glyph
    out = params(x, freq_nonlinear=freq_nonlinear)
    return reshape(out, out.data.shape[1:]) if squeeze else out


def nearest_downsample(arr, size):
    """Top-left nearest subsampling of [...,H,W] down to size x size."""
    h, w = arr.shape[-2:]
    if h == size and w == size:
        return arr
    fy, fx = h // size, w // size
    return arr[..., ::fy, ::fx]


def apply_detail_mask(c_i, position, layer_index, total_layers, min_masked_size):
    """Mask a control output with the position map on shallow decoder layers.

    Layers whose spatial size is at least min_masked_size (the last two
    layers of the default three-level decoder) are multiplied by the
    nearest-downsampled position mask; deeper layers pass through
    unchanged so global structure still reaches the whole image.
    """
    size = c_i.data.shape[-1]
    if size < min_masked_size:
        return c_i
    pos = position.data if isinstance(position, Grid) else np.asarray(position)
    if pos.ndim == 3:
        pos = pos[None]
    mask = nearest_downsample(pos, size).astype(c_i.data.dtype)
    return mul(c_i, Grid(mask))


# -- the branch -----------------------------------------------------------------

class ControlBranch:
    """ControlNet-style conditioned encoder with zero-initialized outputs."""

    def __init__(self, cfg, stage, seed=0, fec_freq_enabled=True, fec_fuse_mode="sum",
                 big_kernel=9):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.stage = stage
        dt = cfg.np_dtype
        ch = cfg.channels
        self.embed = TimeCondEmbed(cfg, rng)
        self.encoder = Encoder(cfg, rng)
        self.sc = SCBlock(ch[0], rng, dtype=dt, big_kernel=big_kernel)
        self.fec = FECBlock(ch[0], rng, dtype=dt, big_kernel=big_kernel,
                            freq_enabled=fec_freq_enabled, fuse_mode=fec_fuse_mode)
        self.masked_enc = MaskedImageEncoder(ch[0], rng, dtype=dt) if stage is StageKind.DETAIL else None
        # zero-initialized per-level output projections: C_i == 0 before training
        self.zero_projs = [Conv2d(c, c, 1, rng, dtype=dt, init_scale=0.0) for c in ch]

    def check_bundle(self, bundle):
        if self.stage is StageKind.DETAIL and bundle.masked_image is None:
            raise ShapeError("detail stage requires a masked_image in the control bundle")
        if self.stage is StageKind.GLOBAL and bundle.masked_image is not None:
            raise ShapeError("global stage must not receive a masked_image")

    def forward(self, bundle, x_t, t, cond=None):
        """Per-decoder-layer control grids, deepest layer first."""
        self.check_bundle(bundle)
        b = bundle.batched()
        dt = self.cfg.np_dtype

        def cast(g):
            return g if g is None or g.data.dtype == dt else Grid(g.data.astype(dt))

        hint = add(self.fec(cast(b.glyph)), self.sc(cast(b.position)))
        if self.masked_enc is not None:
            hint = add(hint, self.masked_enc(cast(b.masked_image)))
        temb = self.embed(t, cond, x_t.data.shape[0])
        _, feats = self.encoder(x_t, temb, stem_extra=hint)
        # feats are shallow-first; emit controls deepest-first to match the decoder
        out = []
        for i in reversed(range(self.cfg.levels)):
            out.append(self.zero_projs[i](feats[i]))
        return out

    __call__ = forward

    def named_parameters(self, prefix):
        out = self.embed.named_parameters(f"{prefix}.embed")
        out += self.encoder.named_parameters(f"{prefix}.encoder")
        out += self.sc.named_parameters(f"{prefix}.sc")
        out += self.fec.named_parameters(f"{prefix}.fec")
        if self.masked_enc is not None:
            out += self.masked_enc.named_parameters(f"{prefix}.masked_enc")
        for i, zp in enumerate(self.zero_projs):
            out += zp.named_parameters(f"{prefix}.zero_proj{i}")
        return out

    def parameters(self):
        return [g for _, g in self.named_parameters("branch")]

    def warm_start_from(self, other):
        """Copy every parameter shared with another branch (fresh masked encoder
        paths keep their zero-initialized output)."""
        src = dict(other.named_parameters("b"))
        for name, grid in self.named_parameters("b"):
            if name in src and src[name].data.shape == grid.data.shape:
                grid.data[...] = src[name].data


def control_branch_forward(bundle, x_t, t, cond, branch):
    """Functional wrapper over ControlBranch.forward."""
    return branch(bundle, x_t, t, cond)


# -- bundle serialization --------------------------------------------------------

def save_bundle(dirpath, name, bundle, lines=None):
    """Write a bundle as PGM images plus a JSON sidecar naming line boxes/contents."""
    from .pgm import write_pgm

    os.makedirs(dirpath, exist_ok=True)
    files = {}
    for key, grid in (("glyph", bundle.glyph), ("position", bundle.position),
                      ("masked_image", bundle.masked_image)):
        if grid is None:
            continue
        fname = f"{name}_{key}.pgm"
        write_pgm(os.path.join(dirpath, fname), grid.data.reshape(grid.data.shape[-2:]))
        files[key] = fname
    sidecar = {"files": files, "lines": lines or []}
    with open(os.path.join(dirpath, f"{name}_bundle.json"), "w") as fh:
        json.dump(sidecar, fh, indent=1)


def load_bundle(dirpath, name):
    from .pgm import read_pgm

    path = os.path.join(dirpath, f"{name}_bundle.json")
    try:
        with open(path) as fh:
            sidecar = json.load(fh)
    except FileNotFoundError:
        raise DataError(f"bundle sidecar not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno} col {exc.colno}")
    grids = {}
    for key, fname in sidecar["files"].items():
        arr = read_pgm(os.path.join(dirpath, fname))
        grids[key] = Grid(arr[None])
    return ControlBundle(
        glyph=grids["glyph"],
        position=grids["position"],
        masked_image=grids.get("masked_image"),
    ), sidecar.get("lines", [])
