"""Exception hierarchy shared by all distortlab modules.

Every error carries a short machine-readable ``category`` used by the CLI
to build its ``error:<category>:`` stderr prefix and to pick exit codes.
"""


class DistortLabError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class ParameterError(DistortLabError):
    """A numeric argument is outside its admissible domain."""

    category = "param"


class ShapeError(DistortLabError):
    """Array dimensions are inconsistent with the operation's contract."""

    category = "shape"


class InputDomainError(DistortLabError):
    """Input data violates a domain invariant (e.g. non-finite entries)."""

    category = "input"


class SizeLimitError(DistortLabError):
    """A guard against accidentally huge dense allocations fired."""

    category = "size"


class ParseError(DistortLabError):
    """A file could not be decoded; ``offset`` is the failing byte position."""

    category = "parse"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ManifestError(DistortLabError):
    """A dataset manifest is malformed; message names the offending row."""

    category = "manifest"


class CorrelationError(DistortLabError):
    """Pearson correlation is undefined (zero variance or too few points)."""

    category = "correlation"


class FitError(DistortLabError):
    """Psychometric fitting failed (e.g. data does not bracket criterion)."""

    category = "fit"


class NumericsError(DistortLabError):
    """A computation produced non-finite values; message carries diagnostics."""

    category = "numeric"


class RankZeroSignal(DistortLabError):
    """The Fisher operator annihilated every probe: model is constant near x."""

    category = "convergence"
