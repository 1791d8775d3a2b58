"""Backend agreement: the compiled and numpy kernel lanes must match."""
import numpy as np
import pytest

from glyphforge.tensor import kernels


def _conv_shapes():
    return [
        (1, 1, 8, 8, 2, 3, 1, 1),
        (2, 3, 16, 16, 4, 3, 1, 1),
        (2, 4, 16, 16, 8, 3, 2, 1),
        (1, 2, 12, 12, 3, 5, 1, 2),
        (3, 2, 9, 9, 2, 9, 1, 4),
    ]


@pytest.mark.skipif("c" not in kernels.available_backends(), reason="compiled lane not built")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", _conv_shapes())
def test_im2col_lanes_agree(shape, dtype):
    n, c, h, w, cout, k, stride, pad = shape
    rng = np.random.default_rng(hash(shape) % (2**32))
    xp = np.ascontiguousarray(rng.normal(size=(n, c, h + 2 * pad, w + 2 * pad)).astype(dtype))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    a = np.empty((n * oh * ow, c * k * k), dtype=dtype)
    b = np.empty_like(a)
    kernels.get_backend("c").im2col(xp, k, k, stride, oh, ow, a)
    kernels.get_backend("py").im2col(xp, k, k, stride, oh, ow, b)
    np.testing.assert_array_equal(a, b)


@pytest.mark.skipif("c" not in kernels.available_backends(), reason="compiled lane not built")
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", _conv_shapes())
def test_col2im_lanes_agree(shape, dtype):
    n, c, h, w, cout, k, stride, pad = shape
    rng = np.random.default_rng(hash(shape) % (2**31))
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    cols = np.ascontiguousarray(rng.normal(size=(n * oh * ow, c * k * k)).astype(dtype))
    a = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=dtype)
    b = np.zeros_like(a)
    kernels.get_backend("c").col2im(cols, a, k, k, stride, oh, ow)
    kernels.get_backend("py").col2im(cols, b, k, k, stride, oh, ow)
    tol = 1e-5 if dtype == np.float32 else 1e-12
    np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


def test_backend_selection_reports_name():
    assert kernels.BACKEND in ("cython", "numpy")
    assert "py" in kernels.available_backends()
