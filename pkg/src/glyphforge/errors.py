"""Exception hierarchy shared by all modules.

CLI exit codes map onto these: usage problems exit 2, data/file problems
exit 3, numeric/shape problems exit 4.
"""


class GlyphForgeError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class UsageError(GlyphForgeError):
    """Bad invocation: invalid flag values, text limits exceeded, missing args."""

    exit_code = 2


class DataError(GlyphForgeError):
    """Broken or missing files: parse failures, truncated corpora, absent checkpoints."""

    exit_code = 3


class NumericError(GlyphForgeError):
    """Numeric contract violations: non-finite values, residue overflows."""

    exit_code = 4


class ShapeError(NumericError):
    """Operand shapes are inconsistent; message names the offending axis."""


class SizeError(NumericError):
    """A dimension violates a size precondition (e.g. non-power-of-two FFT input)."""


class StageRangeError(NumericError):
    """A timestep was presented to a control stage outside that stage's range."""
