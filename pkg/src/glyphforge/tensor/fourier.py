"""2D FFT/IFFT on grids, with reverse-mode differentiation.

Conventions (fixed across the package):
  - forward transform is unnormalized; the inverse carries the 1/(H*W)
    factor, so Parseval reads sum(x^2) == sum(|X|^2) / (H*W);
  - spatial dimensions must be powers of two: sizes outside that set are
    rejected outright instead of being padded;
  - gradients propagate through the adjoint transform, with complex
    gradients stored as d/d(re) + 1j * d/d(im).

ComplexGrid data is always [C, H, W]; a 2D input is carried as one
channel and restored to 2D on inversion.
"""
from __future__ import annotations

import numpy as np

from ..errors import NumericError, ShapeError, SizeError
from .grid import _Node, _as_grid, grad_enabled


def _require_pow2(n, axis):
    if n < 2 or (n & (n - 1)) != 0:
        raise SizeError(f"{axis} size {n} is not a power of two; no silent padding is applied")


class ComplexGrid:
    """Complex-valued frequency-domain planes, [C, H, W]."""

    __slots__ = ("data", "requires_grad", "grad", "_ctx", "_lead")

    def __init__(self, data, lead=None):
        arr = np.asarray(data)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ShapeError(f"ComplexGrid expects [C,H,W] data, got shape {arr.shape}")
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.complex128)
        self.data = np.ascontiguousarray(arr)
        if not np.isfinite(self.data).all():
            raise NumericError("non-finite values in ComplexGrid construction")
        self.requires_grad = False
        self.grad = None
        self._ctx = None
        self._lead = tuple(lead) if lead is not None else (arr.shape[0],)

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def re(self):
        return self.data.real

    @property
    def im(self):
        return self.data.imag

    def __repr__(self):
        return f"ComplexGrid(channels={self.channels}, height={self.height}, width={self.width})"


def _cresult(data, lead, parents, backward_fn, op):
    out = ComplexGrid.__new__(ComplexGrid)
    out.data = np.ascontiguousarray(data)
    if not np.isfinite(out.data).all():
        raise NumericError(f"non-finite values produced by op '{op}'")
    out.grad = None
    out._lead = lead
    needs = grad_enabled() and any(p.requires_grad or p._ctx is not None for p in parents)
    out.requires_grad = needs
    out._ctx = _Node(tuple(parents), backward_fn, op) if needs else None
    return out


class RadialMap:
    """Normalized radius of the centered spectrum: 0 at DC, 1 at the corner."""

    __slots__ = ("height", "width", "r")

    def __init__(self, height, width, r):
        self.height = height
        self.width = width
        self.r = r


def radial_frequency_map(h, w):
    """Centered-spectrum radius map, normalized so the corner bin is 1.

    Frequencies are the centered integer indices u in [-H/2, H/2) and
    v in [-W/2, W/2); r = sqrt(u^2+v^2) / sqrt((H/2)^2 + (W/2)^2). The DC
    position sits at index (H//2, W//2) of the returned map.
    """
    if h < 2 or w < 2:
        raise SizeError(f"radial map needs dimensions >= 2, got {h}x{w}")
    u = np.fft.fftshift(np.fft.fftfreq(h) * h)  # -H/2 .. H/2-1
    v = np.fft.fftshift(np.fft.fftfreq(w) * w)
    rr = np.sqrt(u[:, None] ** 2 + v[None, :] ** 2)
    rmax = np.sqrt((h / 2) ** 2 + (w / 2) ** 2)
    return RadialMap(h, w, rr / rmax)


def _as_planes(x):
    """View Grid data as [C,H,W] plus the lead shape used to restore it."""
    d = x.data
    if d.ndim == 2:
        return d[None], ()
    if d.ndim == 3:
        return d, (d.shape[0],)
    raise ShapeError(f"fft2 expects [H,W] or [C,H,W] grids, got shape {d.shape}")


def fft2(x):
    """Unnormalized forward DFT of a [H,W] or per-channel [C,H,W] grid."""
    x = _as_grid(x)
    planes, lead = _as_planes(x)
    _require_pow2(planes.shape[1], "height")
    _require_pow2(planes.shape[2], "width")
    data = np.fft.fft2(planes, axes=(-2, -1))
    hw = planes.shape[1] * planes.shape[2]
    orig_shape = x.data.shape

    def back(g):
        # adjoint of the unnormalized forward transform
        gx = np.fft.ifft2(g, axes=(-2, -1)).real * hw
        return (gx.reshape(orig_shape).astype(x.data.dtype),)

    return _cresult(data, lead, (x,), back, "fft2")


def ifft2(X, require_real=True):
    """Inverse DFT with 1/(H*W) normalization, returning the real plane.

    With require_real=True (the default) the imaginary residue must stay
    below 1e-4, as it does for conjugate-symmetric spectra; branches that
    deliberately mix the re/im planes pass require_real=False and keep
    the real part by definition.
    """
    if not isinstance(X, ComplexGrid):
        raise ShapeError("ifft2 expects a ComplexGrid produced by this module")
    full = np.fft.ifft2(X.data, axes=(-2, -1))
    if require_real:
        residue = float(np.abs(full.imag).max()) if full.size else 0.0
        if residue > 1e-4:
            raise NumericError(
                f"ifft2 imaginary residue {residue:.3e} exceeds 1e-4 for an input claimed real-producing"
            )
    data = np.ascontiguousarray(full.real)
    hw = X.data.shape[1] * X.data.shape[2]
    lead = X._lead
    out_shape = lead + X.data.shape[1:]
    data = data.reshape(out_shape)

    def back(g):
        gp = g.reshape((-1,) + X.data.shape[1:])
        return (np.fft.fft2(gp, axes=(-2, -1)) / hw,)

    from .grid import _result

    return _result(data, (X,), back, "ifft2")


def complex_to_channels(X):
    """[C,H,W] complex -> [2C,H,W] real grid (re planes then im planes)."""
    if not isinstance(X, ComplexGrid):
        raise ShapeError("complex_to_channels expects a ComplexGrid")
    c = X.data.shape[0]
    data = np.concatenate([X.data.real, X.data.imag], axis=0)

    def back(g):
        return (g[:c] + 1j * g[c:],)

    from .grid import _result

    return _result(np.ascontiguousarray(data), (X,), back, "complex_to_channels")


def channels_to_complex(y):
    """[2C,H,W] real grid -> [C,H,W] ComplexGrid (inverse of complex_to_channels)."""
    y = _as_grid(y)
    if y.data.ndim != 3 or y.data.shape[0] % 2:
        raise ShapeError(f"channels_to_complex expects [2C,H,W], got shape {y.data.shape}")
    c = y.data.shape[0] // 2
    data = y.data[:c] + 1j * y.data[c:]

    def back(g):
        return (np.concatenate([g.real, g.imag], axis=0).astype(y.data.dtype),)

    return _cresult(data, (c,), (y,), back, "channels_to_complex")


def complex_mul_mask(X, mask):
    """Multiply a spectrum by a fixed real [H,W] mask (no gradient to the mask)."""
    if not isinstance(X, ComplexGrid):
        raise ShapeError("complex_mul_mask expects a ComplexGrid")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != X.data.shape[1:]:
        raise ShapeError(f"mask shape {mask.shape} does not match spectrum {X.data.shape[1:]}")
    data = X.data * mask

    def back(g):
        return (g * mask,)

    return _cresult(data, X._lead, (X,), back, "complex_mul_mask")
