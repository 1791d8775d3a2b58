"""Numeric core: grids, autodiff, FFT, and the kernel backends."""
from .fourier import (
    ComplexGrid,
    RadialMap,
    channels_to_complex,
    complex_mul_mask,
    complex_to_channels,
    fft2,
    ifft2,
    radial_frequency_map,
)
from .gft import read_gft, write_gft
from .grid import (
    Grid,
    add,
    backward,
    concat,
    conv2d,
    embedding_mean,
    grad_enabled,
    grid_mean,
    grid_sum,
    group_norm,
    matmul,
    mul,
    no_grad,
    reshape,
    scale,
    silu,
    sub,
    upsample2x,
)
from .kernels import BACKEND as KERNEL_BACKEND

__all__ = [
    "Grid",
    "ComplexGrid",
    "RadialMap",
    "KERNEL_BACKEND",
    "add",
    "backward",
    "channels_to_complex",
    "complex_mul_mask",
    "complex_to_channels",
    "concat",
    "conv2d",
    "embedding_mean",
    "fft2",
    "grad_enabled",
    "grid_mean",
    "grid_sum",
    "group_norm",
    "ifft2",
    "matmul",
    "mul",
    "no_grad",
    "radial_frequency_map",
    "read_gft",
    "reshape",
    "scale",
    "silu",
    "sub",
    "upsample2x",
    "write_gft",
]
