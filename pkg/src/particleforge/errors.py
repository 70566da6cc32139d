"""Exception hierarchy shared by all particleforge modules."""


class ParticleForgeError(Exception):
    """Base class for all errors raised by this package."""


class InvalidSpecError(ParticleForgeError):
    """A generation spec is degenerate or unsatisfiable (bad PSD bounds,
    impossible coverage, rejection loops exhausted)."""


class InvalidInputError(ParticleForgeError):
    """Operation input violates a documented precondition (mismatched
    histogram bins, empty diameter list, missing detection score, ...)."""


class InvalidParamsError(ParticleForgeError):
    """Detector parameters out of their allowed range."""


class EmptyMaskError(ParticleForgeError):
    """A mask operation requires at least one foreground pixel."""


class CorruptMaskError(ParticleForgeError):
    """RLE payload does not decode to the declared raster size."""


class NoDescentError(ParticleForgeError):
    """LR range fit found no decreasing-loss segment; the range test is
    inconclusive."""


class SchemaError(InvalidInputError):
    """A JSON document failed schema validation; message carries the
    failing path."""
