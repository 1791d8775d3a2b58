"""Low-frequency suppression filter and decoder-input fusion."""
import numpy as np
import pytest

from glyphforge.errors import ShapeError, SizeError
from glyphforge.freqbalance import (
    FreqEnhanceParams,
    fuse,
    gamma_modulate,
    gamma_profile,
    sweep_params,
)
from glyphforge.tensor import Grid, grid_sum, mul, radial_frequency_map

from helpers import check_grad


def test_defaults_match_recorded_constants():
    p = FreqEnhanceParams()
    assert (p.alpha, p.beta, p.s) == (1.4, 1.2, 0.2)
    assert p.r_thresh == 0.25


def test_r_thresh_validation():
    with pytest.raises(SizeError):
        FreqEnhanceParams(r_thresh=0.0)
    with pytest.raises(SizeError):
        FreqEnhanceParams(r_thresh=1.0)
    with pytest.raises(SizeError):
        FreqEnhanceParams(s=1.5)


def test_s_one_is_identity():
    rng = np.random.default_rng(0)
    c = Grid(rng.normal(size=(3, 16, 16)))
    out = gamma_modulate(c, FreqEnhanceParams(s=1.0, r_thresh=0.4))
    assert np.abs(out.data - c.data).max() < 1e-6


def test_constant_grid_scaled_by_s():
    # a constant has energy only at DC (r=0), which is always suppressed
    c = Grid(np.full((1, 8, 8), 0.63))
    out = gamma_modulate(c, FreqEnhanceParams(s=0.2, r_thresh=0.25))
    np.testing.assert_allclose(out.data, 0.2 * c.data, atol=1e-10)


def test_high_frequency_sinusoid_unchanged():
    # single conjugate bin pair at normalized radius ~0.9 passes untouched
    h = w = 16
    u, v = 7, 7  # r = sqrt(98)/sqrt(128) ~ 0.875
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sig = np.cos(2 * np.pi * (u * yy / h + v * xx / w))
    r = np.sqrt(u**2 + v**2) / np.sqrt((h / 2) ** 2 + (w / 2) ** 2)
    assert r > 0.25
    out = gamma_modulate(Grid(sig[None]), FreqEnhanceParams(s=0.2, r_thresh=0.25))
    assert np.abs(out.data[0] - sig).max() < 1e-6


def test_gamma_linearity():
    rng = np.random.default_rng(1)
    p = FreqEnhanceParams()
    x, y = rng.normal(size=(2, 2, 8, 8))
    a, b = 0.7, -1.9
    lhs = gamma_modulate(Grid(a * x + b * y), p).data
    rhs = a * gamma_modulate(Grid(x), p).data + b * gamma_modulate(Grid(y), p).data
    assert np.abs(lhs - rhs).max() < 1e-6


def test_double_application_squares_suppressed_band():
    rng = np.random.default_rng(2)
    x = Grid(rng.normal(size=(1, 16, 16)))
    p = FreqEnhanceParams(s=0.3, r_thresh=0.4)
    twice = gamma_modulate(gamma_modulate(x, p), p).data
    # DFT oracle: the direct mask with s^2 in the suppressed band
    rmap = radial_frequency_map(16, 16)
    mask2 = np.fft.ifftshift(np.where(rmap.r < 0.4, 0.3**2, 1.0))
    oracle = np.fft.ifft2(np.fft.fft2(x.data[0]) * mask2).real
    assert np.abs(twice[0] - oracle).max() < 1e-10


def test_energy_never_increases_and_strictly_drops():
    rng = np.random.default_rng(3)
    p = FreqEnhanceParams(s=0.5, r_thresh=0.5)
    x = rng.normal(size=(1, 16, 16))
    out = gamma_modulate(Grid(x), p)
    assert (out.data**2).sum() < (x**2).sum()
    # pure high-frequency content loses nothing
    h = w = 16
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    hi = np.cos(2 * np.pi * (7 * yy / h + 7 * xx / w))[None]
    hi_out = gamma_modulate(Grid(hi), p)
    assert abs((hi_out.data**2).sum() - (hi**2).sum()) < 1e-8


def test_gamma_profile_matches_piecewise_rule():
    p = FreqEnhanceParams(s=0.2, r_thresh=0.25)
    r = np.array([0.0, 0.2, 0.25, 0.3, 1.0])
    np.testing.assert_array_equal(gamma_profile(r, p), [0.2, 0.2, 1.0, 1.0, 1.0])


def test_gamma_gradient_fd():
    rng = np.random.default_rng(4)
    x0 = rng.normal(size=(1, 8, 8))
    w = rng.normal(size=(1, 8, 8))
    p = FreqEnhanceParams()

    def loss(x):
        return grid_sum(mul(gamma_modulate(x, p), Grid(w)))

    check_grad(loss, x0, h=1e-4, tol=1e-4)


def test_fuse_neutral_concat():
    rng = np.random.default_rng(5)
    f, s = (Grid(rng.normal(size=(1, 4, 8, 8))) for _ in range(2))
    out = fuse(f, s, None, None)
    np.testing.assert_array_equal(out.data[:, :4], s.data)
    np.testing.assert_array_equal(out.data[:, 4:], f.data)


def test_fuse_neutral_params_bit_equal_to_plain():
    rng = np.random.default_rng(6)
    f, s, c = (Grid(rng.normal(size=(1, 4, 8, 8)).astype(np.float32)) for _ in range(3))
    neutral = FreqEnhanceParams(alpha=1.0, beta=1.0, s=1.0)
    out = fuse(f, s, c, neutral)
    plain = np.concatenate([s.data + c.data, f.data], axis=1)
    np.testing.assert_array_equal(out.data, plain)


def test_fuse_scalar_arithmetic():
    s = Grid(np.zeros((1, 2, 4, 4)))
    c = Grid(np.ones((1, 2, 4, 4)))
    f = Grid(np.ones((1, 2, 4, 4)))
    out = fuse(f, s, c, FreqEnhanceParams(alpha=2.0, beta=1.0, s=1.0))
    np.testing.assert_array_equal(out.data[:, :2], 2.0 * np.ones((1, 2, 4, 4)))


def test_fuse_default_constants_elementwise_oracle():
    rng = np.random.default_rng(7)
    f, s, c = (rng.normal(size=(1, 4, 8, 8)) for _ in range(3))
    out = fuse(Grid(f), Grid(s), Grid(c), FreqEnhanceParams())
    np.testing.assert_allclose(out.data, np.concatenate([s + 1.4 * c, 1.2 * f], axis=1),
                               rtol=1e-12)


def test_fuse_shape_mismatch():
    with pytest.raises(ShapeError):
        fuse(Grid(np.zeros((1, 2, 8, 8))), Grid(np.zeros((1, 2, 8, 8))),
             Grid(np.zeros((1, 2, 4, 4))), None)


def test_sweep_structure(tmp_path):
    calls = []

    def eval_fn(p):
        calls.append(p)
        return 0.5 + 0.1 * p.s, 0.7

    rows = sweep_params(eval_fn, [FreqEnhanceParams(s=0.2), FreqEnhanceParams(s=1.0)],
                        csv_path=tmp_path / "sweep.csv")
    assert len(rows) == 2 and len(calls) == 2
    text = (tmp_path / "sweep.csv").read_text().strip().splitlines()
    assert text[0] == "alpha,beta,s,r_thresh,acc,ned"
    assert len(text) == 3
    # degenerate single-point sweep equals a direct eval call
    single = sweep_params(eval_fn, [FreqEnhanceParams()])
    direct = eval_fn(FreqEnhanceParams())
    assert (single[0]["acc"], single[0]["ned"]) == direct
