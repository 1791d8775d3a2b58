"""FFT/IFFT conventions, radial map, complex-channel ops, and GFT files."""
import numpy as np
import pytest

from glyphforge.errors import DataError, NumericError, SizeError
from glyphforge.tensor import (
    Grid,
    channels_to_complex,
    complex_mul_mask,
    complex_to_channels,
    fft2,
    grid_sum,
    ifft2,
    mul,
    radial_frequency_map,
    read_gft,
    write_gft,
)

from helpers import check_grad


def test_fft_of_impulse_is_all_ones():
    x = np.zeros((8, 8))
    x[0, 0] = 1.0
    X = fft2(Grid(x))
    np.testing.assert_allclose(X.re, np.ones((1, 8, 8)), atol=1e-12)
    np.testing.assert_allclose(X.im, np.zeros((1, 8, 8)), atol=1e-12)


def test_fft_of_constant_concentrates_at_dc():
    c = 0.37
    X = fft2(Grid(np.full((8, 8), c)))
    assert abs(X.data[0, 0, 0] - c * 64) < 1e-9
    rest = X.data.copy()
    rest[0, 0, 0] = 0.0
    assert np.abs(rest).max() < 1e-9


def test_roundtrip_identity():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(16, 16))
    back = ifft2(fft2(Grid(x)))
    assert back.data.shape == (16, 16)
    assert np.abs(back.data - x).max() < 1e-6


def test_ifft_of_all_ones_is_impulse():
    X = channels_to_complex(Grid(np.concatenate([np.ones((1, 8, 8)), np.zeros((1, 8, 8))])))
    x = ifft2(X)
    expected = np.zeros((1, 8, 8))
    expected[0, 0, 0] = 1.0
    np.testing.assert_allclose(x.data, expected, atol=1e-12)


def test_parseval():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(8, 8))
    X = fft2(Grid(x))
    lhs = (x**2).sum()
    rhs = (np.abs(X.data) ** 2).sum() / 64.0
    assert abs(lhs - rhs) / lhs < 1e-6


def test_linearity():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=(2, 16, 16))
    a, b = 1.7, -0.4
    lhs = fft2(Grid(a * x + b * y)).data
    rhs = a * fft2(Grid(x)).data + b * fft2(Grid(y)).data
    assert np.abs(lhs - rhs).max() < 1e-6


def test_non_power_of_two_rejected():
    with pytest.raises(SizeError):
        fft2(Grid(np.zeros((12, 16))))
    with pytest.raises(SizeError):
        fft2(Grid(np.zeros((16, 12))))


def test_ifft_residue_guard():
    # an asymmetric spectrum claimed real-producing must be rejected
    rng = np.random.default_rng(3)
    planes = rng.normal(size=(2, 8, 8))
    X = channels_to_complex(Grid(planes))
    with pytest.raises(NumericError):
        ifft2(X, require_real=True)
    out = ifft2(X, require_real=False)  # explicit opt-out keeps the real part
    assert out.data.shape == (1, 8, 8)


def test_fft_gradient_through_mask_pipeline():
    # fft2 -> radial modulation -> ifft2 -> weighted sum, vs finite differences
    rng = np.random.default_rng(4)
    x0 = rng.normal(size=(8, 8))
    rmap = radial_frequency_map(8, 8)
    mask = np.fft.ifftshift(np.where(rmap.r < 0.4, 0.3, 1.0))
    w = rng.normal(size=(8, 8))

    def loss(x):
        y = ifft2(complex_mul_mask(fft2(x), mask))
        return grid_sum(mul(y, Grid(w)))

    check_grad(loss, x0, h=1e-4, tol=1e-4)


def test_complex_channel_roundtrip_and_grad():
    rng = np.random.default_rng(5)
    x0 = rng.normal(size=(3, 8, 8))

    def loss(x):
        spec = fft2(x)
        planes = complex_to_channels(spec)
        back = ifft2(channels_to_complex(planes))
        return grid_sum(mul(back, back))

    check_grad(loss, x0, h=1e-4, tol=1e-4)


def test_radial_map_anchors():
    for h, w in ((8, 8), (4, 16), (32, 32)):
        m = radial_frequency_map(h, w)
        assert m.r[h // 2, w // 2] == 0.0
        assert abs(m.r[0, 0] - 1.0) < 1e-12
        assert m.r.min() >= 0.0 and m.r.max() <= 1.0 + 1e-12


def test_radial_map_4x4_hand_enumeration():
    # centered integer frequencies u,v in {-2,-1,0,1}; r = sqrt(u^2+v^2)/sqrt(8)
    m = radial_frequency_map(4, 4)
    us = np.array([-2, -1, 0, 1])
    expected = np.sqrt(us[:, None] ** 2 + us[None, :] ** 2) / np.sqrt(8.0)
    np.testing.assert_allclose(m.r, expected, atol=1e-12)


def test_gft_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(6)
    arr = rng.normal(size=(3, 5, 7)).astype(np.float32)
    p = tmp_path / "t.gft"
    write_gft(p, Grid(arr))
    back = read_gft(p)
    np.testing.assert_array_equal(back, arr)
    write_gft(tmp_path / "t2.gft", back)
    assert (tmp_path / "t.gft").read_bytes() == (tmp_path / "t2.gft").read_bytes()


def test_gft_header_layout(tmp_path):
    p = tmp_path / "h.gft"
    write_gft(p, Grid(np.zeros((2, 3), dtype=np.float32)))
    blob = p.read_bytes()
    assert blob[:4] == b"GFT1"
    assert int.from_bytes(blob[4:8], "little") == 2
    assert int.from_bytes(blob[8:12], "little") == 2
    assert int.from_bytes(blob[12:16], "little") == 3
    assert len(blob) == 16 + 4 * 6


def test_gft_truncated_and_bad_magic(tmp_path):
    p = tmp_path / "bad.gft"
    p.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(DataError):
        read_gft(p)
    q = tmp_path / "trunc.gft"
    write_gft(q, Grid(np.zeros((4, 4), dtype=np.float32)))
    q.write_bytes(q.read_bytes()[:-8])
    with pytest.raises(DataError):
        read_gft(q)
