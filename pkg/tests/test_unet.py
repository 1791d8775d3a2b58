"""Decoder injection contract, capture/replay, embeddings, gradient flow."""
import numpy as np
import pytest

from glyphforge.errors import ShapeError, SizeError, UsageError
from glyphforge.freqbalance import FreqEnhanceParams, gamma_modulate
from glyphforge.tensor import Grid, grid_sum, mul, no_grad
from glyphforge.unet import (
    ConditionEmbedding,
    UNet,
    UNetConfig,
    timestep_embed,
    timestep_embed_batch,
)

from helpers import finite_diff_grad, rel_err


def tiny_cfg(**kw):
    base = dict(base_channels=8, levels=2, time_embed_dim=16, cond_embed_dim=8,
                norm_groups=4, num_classes=16, canvas=8, dtype="float64")
    base.update(kw)
    return UNetConfig(**base)


def test_shape_contract_and_canvas_check():
    cfg = UNetConfig(base_channels=8, levels=3, canvas=32, num_classes=16, dtype="float32")
    net = UNet(cfg, seed=0)
    x = Grid(np.random.default_rng(0).standard_normal((1, 1, 32, 32)).astype(np.float32))
    with no_grad():
        out = net(x, 10)
    assert out.data.shape == (1, 1, 32, 32)
    with pytest.raises(ShapeError):
        net(Grid(np.zeros((1, 1, 16, 16), dtype=np.float32)), 10)


def test_levels_must_allow_masking_rule():
    with pytest.raises(SizeError):
        UNetConfig(levels=1)


def test_zero_controls_neutral_enhance_match_plain_forward():
    net = UNet(tiny_cfg(), seed=1)
    x = Grid(np.random.default_rng(1).standard_normal((2, 1, 8, 8)))
    zeros = [Grid(np.zeros((2, c, s, s)))
             for c, s in zip(reversed(net.cfg.channels), net.decoder_sizes())]
    neutral = FreqEnhanceParams(alpha=1.0, beta=1.0, s=1.0, r_thresh=0.25)
    with no_grad():
        plain = net(x, 5)
        controlled = net(x, 5, controls=zeros, enhance=neutral)
    assert np.abs(plain.data - controlled.data).max() < 1e-7


def test_control_length_mismatch():
    net = UNet(tiny_cfg(), seed=2)
    x = Grid(np.zeros((1, 1, 8, 8)))
    with pytest.raises(ShapeError):
        net(x, 3, controls=[Grid(np.zeros((1, 8, 4, 4)))])


def test_capture_and_replay_reproduce_forward():
    net = UNet(tiny_cfg(), seed=3)
    rng = np.random.default_rng(3)
    x = Grid(rng.standard_normal((1, 1, 8, 8)))
    controls = [Grid(0.1 * rng.standard_normal((1, c, s, s)))
                for c, s in zip(reversed(net.cfg.channels), net.decoder_sizes())]
    with no_grad():
        eps, snaps = net.capture_decoder_features(x, 4, controls=controls)
        assert len(snaps) == net.decoder_layer_count
        # deepest base is the encoder bottleneck output
        temb = net.embed(4, None, 1)
        f, _ = net.encoder(x, temb)
        np.testing.assert_array_equal(snaps[0]["base"], f.data)
        replay = net.decoder_replay(snaps, 4, controls=controls)
    np.testing.assert_array_equal(replay.data, eps.data)


def test_injection_linearity_structural_equivalence():
    # adding alpha*C' into the skip externally must reproduce the controlled output
    net = UNet(tiny_cfg(), seed=4)
    rng = np.random.default_rng(4)
    x = Grid(rng.standard_normal((1, 1, 8, 8)))
    controls = [Grid(0.3 * rng.standard_normal((1, c, s, s)))
                for c, s in zip(reversed(net.cfg.channels), net.decoder_sizes())]
    enhance = FreqEnhanceParams(alpha=1.3, beta=1.1, s=0.5, r_thresh=0.3)
    with no_grad():
        eps, snaps = net.capture_decoder_features(x, 6, controls=controls, enhance=enhance)
        mod_skips = []
        for sn, c in zip(snaps, controls):
            cp = gamma_modulate(c, enhance)
            mod_skips.append(sn["skip"] + enhance.alpha * cp.data)
        replay = net.decoder_replay(snaps, 6, controls=[None] * len(snaps),
                                    enhance=enhance, skips=mod_skips)
    assert np.abs(replay.data - eps.data).max() < 1e-10


def test_timestep_embed_contract():
    with pytest.raises(SizeError):
        timestep_embed(0, 16)
    a = timestep_embed(17, 16)
    b = timestep_embed(17, 16)
    np.testing.assert_array_equal(a, b)
    probes = timestep_embed_batch(np.linspace(1, 1000, 100).astype(int), 16)
    d = probes[:, None, :] - probes[None, :, :]
    pair = np.sqrt((d**2).sum(-1))
    pair[np.diag_indices(100)] = np.inf
    assert pair.min() > 0.0


def test_condition_embedding_limits():
    ConditionEmbedding([[1, 2, 3]])
    with pytest.raises(UsageError):
        ConditionEmbedding([[0] * 21])
    with pytest.raises(UsageError):
        ConditionEmbedding([[0]] * 6)
    with pytest.raises(UsageError):
        ConditionEmbedding([[]])


def test_permutation_stability():
    cfg = tiny_cfg(dtype="float32")
    net = UNet(cfg, seed=5)
    rng = np.random.default_rng(5)
    xv = rng.standard_normal((4, 1, 8, 8)).astype(np.float32)
    with no_grad():
        out = net(Grid(xv), 7).data
        perm = [2, 0, 3, 1]
        out_p = net(Grid(xv[perm]), 7).data
    np.testing.assert_array_equal(out_p, out[perm])


def test_full_unet_gradient_fd_double():
    # 2-level config on 8x8 input, double precision, rel err < 1e-4
    net = UNet(tiny_cfg(), seed=6)
    rng = np.random.default_rng(6)
    x0 = rng.standard_normal((1, 1, 8, 8))
    w = rng.standard_normal((1, 1, 8, 8))

    def f(xv):
        with no_grad():
            pass
        out = net(Grid(xv), 3)
        return grid_sum(mul(out, Grid(w))).item()

    x = Grid(x0, requires_grad=True)
    loss = grid_sum(mul(net(x, 3), Grid(w)))
    loss.backward()
    numeric = finite_diff_grad(f, x0, h=1e-4)
    assert rel_err(x.grad, numeric) < 1e-4


def test_parameter_gradient_reaches_head_and_stem():
    net = UNet(tiny_cfg(), seed=7)
    x = Grid(np.random.default_rng(7).standard_normal((1, 1, 8, 8)))
    loss = grid_sum(net(x, 2))
    loss.backward()
    assert net.head.weight.grad is not None
    assert net.encoder.stem.weight.grad is not None
    assert net.embed.lin1.weight.grad is not None
