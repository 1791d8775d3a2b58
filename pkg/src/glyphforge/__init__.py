"""glyphforge: a CPU-only lab for frequency-balanced two-stage controlled diffusion."""

__version__ = "0.1.0"
