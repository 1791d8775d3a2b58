"""Kernel backend selection.

The convolution gather/scatter kernels exist in two lanes: a compiled
Cython extension and a numpy fallback. The compiled lane is preferred
when importable; GLYPHFORGE_KERNELS=py|c forces a lane explicitly
(forcing "c" when the extension is missing raises, rather than silently
falling back). `benchmarks/bench_kernels.py` compares the two.
"""
import os

from . import pykernels

_backends = {"py": pykernels}
try:
    from . import _fastkernels

    _backends["c"] = _fastkernels
except ImportError:
    _fastkernels = None

_choice = os.environ.get("GLYPHFORGE_KERNELS", "auto").lower()
if _choice in ("auto", ""):
    _active = _backends.get("c", pykernels)
elif _choice in _backends:
    _active = _backends[_choice]
else:
    raise ImportError(
        f"GLYPHFORGE_KERNELS={_choice!r} is not available; "
        f"choices: {sorted(_backends)} or 'auto'"
    )

BACKEND = "cython" if _active is _backends.get("c") else "numpy"
im2col = _active.im2col
col2im = _active.col2im


def available_backends():
    """Names of the importable kernel lanes."""
    return sorted(_backends)


def get_backend(name):
    """Return a kernel module by lane name ('py' or 'c')."""
    if name not in _backends:
        raise KeyError(f"kernel backend {name!r} not built; have {sorted(_backends)}")
    return _backends[name]
