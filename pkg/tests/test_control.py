"""Control branches: SC/FEC blocks, zero-init rule, detail masking, bundles."""
import numpy as np
import pytest

from glyphforge.control import (
    ControlBranch,
    ControlBundle,
    FECBlock,
    SCBlock,
    StageKind,
    apply_detail_mask,
    fec_forward,
    load_bundle,
    save_bundle,
    sc_forward,
)
from glyphforge.errors import NumericError, ShapeError
from glyphforge.tensor import Grid, grid_sum, mul, no_grad
from glyphforge.train import Adam
from glyphforge.unet import UNetConfig

from helpers import check_grad


def cfg64(**kw):
    base = dict(base_channels=8, levels=2, time_embed_dim=16, cond_embed_dim=8,
                norm_groups=4, num_classes=16, canvas=8, dtype="float64")
    base.update(kw)
    return UNetConfig(**base)


def box_bundle(canvas=8, x0=2, y0=2, w=3, h=3, masked=False):
    pos = np.zeros((1, canvas, canvas))
    pos[0, y0 : y0 + h, x0 : x0 + w] = 1.0
    glyph = np.zeros((1, canvas, canvas))
    glyph[0, y0 + 1 : y0 + h - 1, x0 + 1 : x0 + w - 1] = 1.0
    m = None
    if masked:
        img = np.random.default_rng(0).uniform(0.2, 0.5, size=(1, canvas, canvas))
        m = Grid(img * (1 - pos))
    return ControlBundle(Grid(glyph), Grid(pos), m)


# -- SC block -------------------------------------------------------------------

def test_sc_zero_position_zero_feature():
    rng = np.random.default_rng(1)
    sc = SCBlock(8, rng, dtype=np.float64, big_kernel=9)
    out = sc_forward(Grid(np.zeros((1, 8, 8))), sc)
    np.testing.assert_array_equal(out.data, np.zeros_like(out.data))


def test_sc_same_padding_shape():
    rng = np.random.default_rng(2)
    sc = SCBlock(8, rng, dtype=np.float64, big_kernel=9)
    out = sc_forward(Grid(box_bundle().position.data), sc)
    assert out.data.shape == (8, 8, 8)


def test_sc_rejects_non_binary():
    rng = np.random.default_rng(3)
    sc = SCBlock(4, rng)
    with pytest.raises(NumericError):
        sc_forward(Grid(np.full((1, 8, 8), 0.5)), sc)


def test_sc_translation_equivariance():
    # shifting a box by 4 px shifts the interior response by 4 px
    rng = np.random.default_rng(4)
    sc = SCBlock(4, rng, dtype=np.float64, big_kernel=9)
    canvas = 32
    pos = np.zeros((1, canvas, canvas))
    pos[0, 4:10, 4:10] = 1.0
    shifted = np.zeros((1, canvas, canvas))
    shifted[0, 4:10, 8:14] = 1.0
    a = sc_forward(Grid(pos), sc).data
    b = sc_forward(Grid(shifted), sc).data
    # compare interiors away from borders (kernel reach is 4+1+1 px)
    interior = a[:, 12:20, 12:20]
    interior_shifted = b[:, 12:20, 16:24]
    np.testing.assert_allclose(interior_shifted, interior, atol=1e-10)


# -- FEC block -------------------------------------------------------------------

def test_fec_frequency_identity_configuration():
    rng = np.random.default_rng(5)
    fec = FECBlock(4, rng, dtype=np.float64)
    fec.set_freq_identity()
    h = Grid(rng.normal(size=(2, 4, 8, 8)))
    out = fec.frequency_branch(h, nonlinear=False)
    assert np.abs(out.data - h.data).max() < 1e-10


def test_fec_zero_glyph_zero_output():
    rng = np.random.default_rng(6)
    fec = FECBlock(4, rng, dtype=np.float64)
    out = fec_forward(Grid(np.zeros((1, 8, 8))), fec)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_fec_frequency_branch_superposition():
    # linear operator for fixed parameters once the nonlinearity is disabled
    rng = np.random.default_rng(7)
    fec = FECBlock(4, rng, dtype=np.float64)
    x, y = (Grid(rng.normal(size=(1, 4, 8, 8))) for _ in range(2))
    a, b = 1.3, -0.7
    fec.freq_conv.bias.data[...] = 0.0
    with no_grad():
        lhs = fec.frequency_branch(Grid(a * x.data + b * y.data), nonlinear=False).data
        rhs = a * fec.frequency_branch(x, nonlinear=False).data + \
            b * fec.frequency_branch(y, nonlinear=False).data
    assert np.abs(lhs - rhs).max() < 1e-6


def test_fec_gradient_fd_double():
    rng = np.random.default_rng(8)
    fec = FECBlock(2, rng, dtype=np.float64)
    g0 = rng.uniform(0.0, 1.0, size=(1, 8, 8))
    w = rng.normal(size=(2, 8, 8))

    def loss(g):
        return grid_sum(mul(fec_forward(g, fec), Grid(w)))

    check_grad(loss, g0, h=1e-4, tol=1e-4)


def test_fec_spatial_only_mode():
    rng = np.random.default_rng(9)
    fec = FECBlock(4, rng, dtype=np.float64, freq_enabled=False)
    out = fec_forward(Grid(rng.uniform(size=(1, 8, 8))), fec)
    assert out.data.shape == (4, 8, 8)
    assert fec.freq_conv is None


def test_fec_concat_fuse_mode():
    rng = np.random.default_rng(10)
    fec = FECBlock(4, rng, dtype=np.float64, fuse_mode="concat")
    out = fec_forward(Grid(rng.uniform(size=(1, 8, 8))), fec)
    assert out.data.shape == (4, 8, 8)


# -- bundles and stage rules --------------------------------------------------------

def test_bundle_invariants():
    with pytest.raises(NumericError):
        ControlBundle(Grid(np.zeros((1, 8, 8))), Grid(np.full((1, 8, 8), 0.3)))
    with pytest.raises(NumericError):
        ControlBundle(Grid(np.full((1, 8, 8), 2.0)), Grid(np.zeros((1, 8, 8))))
    pos = np.zeros((1, 8, 8))
    pos[0, 2:4, 2:4] = 1.0
    bad_mask = Grid(np.full((1, 8, 8), 0.5))
    with pytest.raises(NumericError):
        ControlBundle(Grid(np.zeros((1, 8, 8))), Grid(pos), bad_mask)


def test_branch_stage_bundle_rules():
    cfg = cfg64()
    gb = ControlBranch(cfg, StageKind.GLOBAL, seed=0)
    db = ControlBranch(cfg, StageKind.DETAIL, seed=1)
    x = Grid(np.zeros((1, 1, 8, 8)))
    with pytest.raises(ShapeError):
        db(box_bundle(masked=False), x, 2)
    with pytest.raises(ShapeError):
        gb(box_bundle(masked=True), x, 2)


def test_fresh_branch_outputs_exact_zeros():
    cfg = cfg64()
    branch = ControlBranch(cfg, StageKind.GLOBAL, seed=2)
    x = Grid(np.random.default_rng(11).standard_normal((2, 1, 8, 8)))
    with no_grad():
        controls = branch(box_bundle(), x, 7)
    assert len(controls) == cfg.levels
    for c in controls:
        np.testing.assert_array_equal(c.data, np.zeros_like(c.data))


def test_branch_sensitivity_after_one_training_step():
    cfg = cfg64()
    branch = ControlBranch(cfg, StageKind.GLOBAL, seed=3)
    x = Grid(np.random.default_rng(12).standard_normal((1, 1, 8, 8)))
    bundle = box_bundle()
    loss = grid_sum(mul(sum_controls(branch, bundle, x), Grid(np.ones((1, 1, 1, 1)))))
    # zero-init projections block the forward path; drive them with one step
    opt = Adam(branch.named_parameters("b"), lr=1e-2)
    ctrl = branch(bundle, x, 7)
    target = grid_sum(sum(grid_sum(mul(c, c)) for c in ctrl) + grid_sum(ctrl[0]))
    opt.zero_grad()
    target.backward()
    opt.step()
    with no_grad():
        after = branch(bundle, x, 7)
        perturbed_bundle = ControlBundle(
            Grid(np.clip(bundle.glyph.data + 0.25, 0, 1)), Grid(bundle.position.data.copy())
        )
        after_perturbed = branch(perturbed_bundle, x, 7)
    diffs = [np.abs(a.data - b.data).max() for a, b in zip(after, after_perturbed)]
    assert max(diffs) > 0.0


def sum_controls(branch, bundle, x):
    ctrl = branch(bundle, x, 7)
    return ctrl[0]


def test_apply_detail_mask_rules():
    rng = np.random.default_rng(13)
    pos32 = np.zeros((1, 1, 32, 32))
    pos32[..., 8:16, 8:16] = 1.0
    sizes = [8, 16, 32]
    for i, size in enumerate(sizes):
        c = Grid(rng.normal(size=(1, 4, size, size)))
        out = apply_detail_mask(c, Grid(pos32), i, 3, min_masked_size=16)
        if size >= 16:
            mask = pos32[..., :: 32 // size, :: 32 // size]
            np.testing.assert_allclose(out.data, c.data * mask)
        else:
            np.testing.assert_array_equal(out.data, c.data)


def test_apply_detail_mask_identity_and_zero():
    rng = np.random.default_rng(14)
    c = Grid(rng.normal(size=(1, 2, 8, 8)))
    ones = Grid(np.ones((1, 1, 8, 8)))
    zeros = Grid(np.zeros((1, 1, 8, 8)))
    np.testing.assert_array_equal(
        apply_detail_mask(c, ones, 2, 3, min_masked_size=8).data, c.data
    )
    np.testing.assert_array_equal(
        apply_detail_mask(c, zeros, 2, 3, min_masked_size=8).data, np.zeros_like(c.data)
    )
    # deepest layer below the size threshold is untouched even by a zero mask
    np.testing.assert_array_equal(
        apply_detail_mask(c, zeros, 0, 3, min_masked_size=16).data, c.data
    )


def test_warm_start_copies_shared_weights():
    cfg = cfg64()
    gb = ControlBranch(cfg, StageKind.GLOBAL, seed=4)
    gb.sc.inp.weight.data[...] = 3.25
    db = ControlBranch(cfg, StageKind.DETAIL, seed=5)
    db.warm_start_from(gb)
    assert np.all(db.sc.inp.weight.data == 3.25)
    # masked-image pathway still silent after warm start
    np.testing.assert_array_equal(db.masked_enc.conv2.weight.data, 0.0)


def test_bundle_save_load_roundtrip(tmp_path):
    b = box_bundle(masked=True)
    # renderer-grade data is 8-bit quantized; mirror that for exact IO
    b = ControlBundle(
        Grid(np.rint(b.glyph.data * 255) / 255),
        Grid(b.position.data),
        Grid(np.rint(b.masked_image.data * 255) / 255),
    )
    lines = [{"content": "AB", "bbox": [2, 2, 3, 3]}]
    save_bundle(tmp_path, "probe", b, lines=lines)
    loaded, meta = load_bundle(tmp_path, "probe")
    np.testing.assert_allclose(loaded.glyph.data, b.glyph.data, atol=1e-7)
    np.testing.assert_array_equal(loaded.position.data, b.position.data)
    np.testing.assert_allclose(loaded.masked_image.data, b.masked_image.data, atol=1e-7)
    assert meta == lines
