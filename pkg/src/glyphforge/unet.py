"""Tiny pixel-space epsilon-prediction U-Net with per-decoder-layer injection.

Every decoder layer consumes three inputs: the base feature F arriving
from the layer below, the lateral skip feature S from the matching
encoder level, and an optional control feature C. The three are combined
by freqbalance.fuse (channel concat of S + alpha*C' and beta*F), so the
controlled and uncontrolled paths share one code path by construction.

Decoder layers are indexed in execution order: index 0 is the deepest
(smallest spatial size), the last index is the full-resolution layer.
Control lists follow the same order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, SizeError, UsageError
from .freqbalance import fuse, gamma_modulate
from .tensor import Grid, add, conv2d, group_norm, matmul, mul, reshape, silu, upsample2x
from .tensor.grid import embedding_mean

MAX_LINE_CHARS = 20
MAX_LINES = 5


@dataclass
class UNetConfig:
    in_channels: int = 1
    base_channels: int = 16
    levels: int = 3
    time_embed_dim: int = 32
    cond_embed_dim: int = 16
    norm_groups: int = 4
    num_classes: int = 36
    canvas: int = 32
    dtype: str = "float32"

    def __post_init__(self):
        if self.levels < 2:
            raise SizeError("levels must be >= 2 so the masked-injection rule has two layers")
        size = self.canvas
        for _ in range(self.levels):
            if size < 2 or (size & (size - 1)) != 0:
                raise SizeError(f"spatial size {size} at some level is not a power of two")
            size //= 2
        if self.base_channels % self.norm_groups:
            raise SizeError("base_channels must be divisible by norm_groups")

    @property
    def channels(self):
        return tuple(self.base_channels * (2**i) for i in range(self.levels))

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class ConditionEmbedding:
    """Per-line glyph-class id sequences, mean-pooled by the embedding table.

    An empty `lines` list is the unconditional embedding (zero vector).
    """

    lines: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.lines) > MAX_LINES:
            raise UsageError(f"at most {MAX_LINES} lines are supported, got {len(self.lines)}")
        for i, line in enumerate(self.lines):
            if len(line) == 0 or len(line) > MAX_LINE_CHARS:
                raise UsageError(
                    f"line {i} has {len(line)} ids; lines must have 1..{MAX_LINE_CHARS}"
                )

    def flat(self):
        return [int(c) for line in self.lines for c in line]


EMPTY_COND = ConditionEmbedding([])


def timestep_embed(t, dim):
    """Sinusoidal embedding of a timestep (t >= 1), shape [dim]."""
    return timestep_embed_batch([t], dim)[0]


def timestep_embed_batch(ts, dim):
    ts = np.asarray(ts, dtype=np.float64)
    if np.any(ts < 1):
        raise SizeError(f"timestep embedding domain starts at 1, got {ts.min()}")
    half = dim // 2
    denom = max(half - 1, 1)
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / denom)
    ang = ts[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


# -- parameterized layers -----------------------------------------------------

class Conv2d:
    def __init__(self, cin, cout, k, rng, stride=1, pad=None, dtype=np.float32, init_scale=1.0):
        fan = cin * k * k
        std = init_scale * np.sqrt(2.0 / fan)
        self.weight = Grid(rng.normal(0.0, std, size=(cout, cin, k, k)), requires_grad=True, dtype=dtype)
        self.bias = Grid(np.zeros(cout), requires_grad=True, dtype=dtype)
        self.stride = stride
        self.pad = k // 2 if pad is None else pad

    def __call__(self, x):
        y = conv2d(x, self.weight, stride=self.stride, pad=self.pad)
        b = reshape(self.bias, (1, -1, 1, 1) if y.data.ndim == 4 else (-1, 1, 1))
        return add(y, b)

    def named_parameters(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class Linear:
    def __init__(self, cin, cout, rng, dtype=np.float32, init_scale=1.0):
        std = init_scale * np.sqrt(1.0 / cin)
        self.weight = Grid(rng.normal(0.0, std, size=(cin, cout)), requires_grad=True, dtype=dtype)
        self.bias = Grid(np.zeros(cout), requires_grad=True, dtype=dtype)

    def __call__(self, x):
        return add(matmul(x, self.weight), self.bias)

    def named_parameters(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class GroupNorm:
    def __init__(self, channels, groups, dtype=np.float32):
        self.gamma = Grid(np.ones(channels), requires_grad=True, dtype=dtype)
        self.beta = Grid(np.zeros(channels), requires_grad=True, dtype=dtype)
        self.groups = groups

    def __call__(self, x):
        return group_norm(x, self.gamma, self.beta, self.groups)

    def named_parameters(self, prefix):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]


class TimeCondEmbed:
    """Sinusoid -> MLP time embedding plus mean-pooled class-sequence embedding."""

    def __init__(self, cfg, rng):
        d = cfg.time_embed_dim
        dt = cfg.np_dtype
        self.dim = d
        self.lin1 = Linear(d, d, rng, dtype=dt)
        self.lin2 = Linear(d, d, rng, dtype=dt)
        self.table = Grid(
            rng.normal(0.0, 0.5, size=(cfg.num_classes, cfg.cond_embed_dim)),
            requires_grad=True,
            dtype=dt,
        )
        self.cond_proj = Linear(cfg.cond_embed_dim, d, rng, dtype=dt)

    def __call__(self, ts, cond, n):
        sin = Grid(timestep_embed_batch(np.broadcast_to(np.atleast_1d(ts), (n,)), self.dim))
        sin = Grid(sin.data.astype(self.lin1.weight.dtype))
        emb = self.lin2(silu(self.lin1(sin)))
        if cond is None:
            seqs = [[]] * n
        elif isinstance(cond, ConditionEmbedding):
            seqs = [cond.flat()] * n
        else:  # one embedding per batch row
            if len(cond) != n:
                raise ShapeError(f"got {len(cond)} condition embeddings for batch of {n}")
            seqs = [(c.flat() if c is not None else []) for c in cond]
        pooled = embedding_mean(self.table, seqs)
        return add(emb, self.cond_proj(pooled))

    def named_parameters(self, prefix):
        out = [(f"{prefix}.table", self.table)]
        out += self.lin1.named_parameters(f"{prefix}.lin1")
        out += self.lin2.named_parameters(f"{prefix}.lin2")
        out += self.cond_proj.named_parameters(f"{prefix}.cond_proj")
        return out


class ResBlock:
    def __init__(self, cin, cout, temb_dim, groups, rng, dtype=np.float32):
        self.gn1 = GroupNorm(cin, groups, dtype)
        self.conv1 = Conv2d(cin, cout, 3, rng, dtype=dtype)
        self.temb = Linear(temb_dim, cout, rng, dtype=dtype)
        self.gn2 = GroupNorm(cout, groups, dtype)
        self.conv2 = Conv2d(cout, cout, 3, rng, dtype=dtype)
        self.skip = Conv2d(cin, cout, 1, rng, dtype=dtype) if cin != cout else None

    def __call__(self, x, temb):
        h = self.conv1(silu(self.gn1(x)))
        tproj = reshape(self.temb(silu(temb)), (h.data.shape[0], -1, 1, 1))
        h = add(h, tproj)
        h = self.conv2(silu(self.gn2(h)))
        return add(h, self.skip(x) if self.skip else x)

    def named_parameters(self, prefix):
        out = []
        for name in ("gn1", "conv1", "temb", "gn2", "conv2", "skip"):
            layer = getattr(self, name)
            if layer is not None:
                out += layer.named_parameters(f"{prefix}.{name}")
        return out


class Encoder:
    """Shared encoder topology; the control branches instantiate their own copy."""

    def __init__(self, cfg, rng):
        ch = cfg.channels
        dt = cfg.np_dtype
        g = cfg.norm_groups
        td = cfg.time_embed_dim
        self.stem = Conv2d(cfg.in_channels, ch[0], 3, rng, dtype=dt)
        self.blocks = [ResBlock(ch[i], ch[i], td, g, rng, dt) for i in range(cfg.levels)]
        self.downs = [
            Conv2d(ch[i], ch[i + 1], 3, rng, stride=2, dtype=dt) for i in range(cfg.levels - 1)
        ]
        self.bottleneck = ResBlock(ch[-1], ch[-1], td, g, rng, dt)

    def __call__(self, x, temb, stem_extra=None):
        h = self.stem(x)
        if stem_extra is not None:
            h = add(h, stem_extra)
        skips = []
        for i, block in enumerate(self.blocks):
            h = block(h, temb)
            skips.append(h)
            if i < len(self.downs):
                h = self.downs[i](h)
        return self.bottleneck(h, temb), skips

    def named_parameters(self, prefix):
        out = self.stem.named_parameters(f"{prefix}.stem")
        for i, b in enumerate(self.blocks):
            out += b.named_parameters(f"{prefix}.block{i}")
        for i, d in enumerate(self.downs):
            out += d.named_parameters(f"{prefix}.down{i}")
        out += self.bottleneck.named_parameters(f"{prefix}.bottleneck")
        return out


class UNet:
    """Epsilon predictor with control/skip fusion at every decoder layer."""

    def __init__(self, cfg, seed=0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        ch = cfg.channels
        dt = cfg.np_dtype
        self.embed = TimeCondEmbed(cfg, rng)
        self.encoder = Encoder(cfg, rng)
        # decoder layers run deepest-first; each consumes concat([S+aC', bF])
        self.dec_blocks = [
            ResBlock(2 * ch[i], ch[i], cfg.time_embed_dim, cfg.norm_groups, rng, dt)
            for i in reversed(range(cfg.levels))
        ]
        self.ups = [
            Conv2d(ch[i], ch[i - 1], 3, rng, dtype=dt) for i in reversed(range(1, cfg.levels))
        ]
        self.head_norm = GroupNorm(ch[0], cfg.norm_groups, dt)
        self.head = Conv2d(ch[0], cfg.in_channels, 3, rng, dtype=dt, init_scale=0.05)

    # -- plumbing -------------------------------------------------------------
    @property
    def decoder_layer_count(self):
        return self.cfg.levels

    def decoder_sizes(self):
        """Spatial size of each decoder layer, deepest first."""
        top = self.cfg.canvas
        return [top // (2**i) for i in reversed(range(self.cfg.levels))]

    def named_parameters(self, prefix="unet"):
        out = self.embed.named_parameters(f"{prefix}.embed")
        out += self.encoder.named_parameters(f"{prefix}.encoder")
        for i, b in enumerate(self.dec_blocks):
            out += b.named_parameters(f"{prefix}.dec{i}")
        for i, u in enumerate(self.ups):
            out += u.named_parameters(f"{prefix}.up{i}")
        out += self.head_norm.named_parameters(f"{prefix}.head_norm")
        out += self.head.named_parameters(f"{prefix}.head")
        return out

    def parameters(self):
        return [g for _, g in self.named_parameters()]

    def _check_input(self, x):
        if x.data.ndim != 4:
            raise ShapeError(f"expected [N,C,H,W] input, got shape {x.data.shape}")
        if x.data.shape[2] != self.cfg.canvas or x.data.shape[3] != self.cfg.canvas:
            raise ShapeError(
                f"input spatial size {x.data.shape[2]}x{x.data.shape[3]} does not match "
                f"configured canvas {self.cfg.canvas}"
            )

    # -- forward --------------------------------------------------------------
    def forward(self, x_t, t, cond=None, controls=None, enhance=None, _capture=None):
        """Predict eps from x_t at timestep(s) t.

        controls, when present, is one Grid (or None) per decoder layer in
        deepest-first order; enhance is a FreqEnhanceParams applied at the
        fusion points (inference-time only by convention).
        """
        self._check_input(x_t)
        if controls is not None and len(controls) != self.decoder_layer_count:
            raise ShapeError(
                f"got {len(controls)} control grids for {self.decoder_layer_count} decoder layers"
            )
        n = x_t.data.shape[0]
        temb = self.embed(t, cond, n)
        f, skips = self.encoder(x_t, temb)
        return self._decode(f, skips, controls, temb, enhance, _capture)

    __call__ = forward

    def _decode(self, f, skips, controls, temb, enhance, capture=None):
        # skips arrive shallow-first from the encoder; decoder wants deepest-first
        for i in range(self.cfg.levels):
            s = skips[self.cfg.levels - 1 - i]
            c = controls[i] if controls is not None else None
            if capture is not None:
                capture.append(
                    {
                        "base": f.data.copy(),
                        "skip": s.data.copy(),
                        "control": None if c is None else c.data.copy(),
                    }
                )
            cp = None
            if c is not None:
                cp = gamma_modulate(c, enhance) if enhance is not None else c
            h = fuse(f, s, cp, enhance)
            f = self.dec_blocks[i](h, temb)
            if i < len(self.ups):
                f = self.ups[i](upsample2x(f))
        return self.head(silu(self.head_norm(f)))

    def decoder_replay(self, snapshots, t, cond=None, controls=None, enhance=None, skips=None):
        """Re-run the decoder from captured per-layer inputs.

        By default replays the captured skip and control tensors exactly;
        `skips`/`controls` override them (used to probe the fusion contract).
        """
        if len(snapshots) != self.decoder_layer_count:
            raise ShapeError(
                f"need {self.decoder_layer_count} snapshots, got {len(snapshots)}"
            )
        n = snapshots[0]["base"].shape[0]
        temb = self.embed(t, cond, n)
        f = Grid(snapshots[0]["base"])
        skip_list = [
            Grid(s) for s in (skips if skips is not None else [sn["skip"] for sn in snapshots])
        ]
        if controls is None:
            controls = [
                None if sn["control"] is None else Grid(sn["control"]) for sn in snapshots
            ]
        # _decode expects shallow-first skips
        return self._decode(f, list(reversed(skip_list)), controls, temb, enhance)

    def capture_decoder_features(self, x_t, t, cond=None, controls=None, enhance=None):
        """Run forward while recording {base, skip, control} entering each layer."""
        snaps = []
        eps = self.forward(x_t, t, cond, controls, enhance, _capture=snaps)
        return eps, snaps
