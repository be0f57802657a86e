"""Exception types shared across the engine.

Validation problems (bad shapes, bad files, bad configuration) raise
subclasses of :class:`ValidationError`; numeric trouble at run time raises
:class:`NumericError`.  The CLI maps the former to exit code 1 and the
latter to exit code 2.
"""


class GramtexError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GramtexError):
    """Input failed a precondition before any computation started."""


class DimensionError(ValidationError):
    """Array shapes or channel counts are inconsistent."""


class ParseError(ValidationError):
    """A file could not be decoded; message carries offset/layer context."""


class UsageError(ValidationError):
    """An operation was driven with inconsistent arguments."""


class DeadFilterError(ValidationError):
    """Weight rescaling found filters with non-positive mean activation."""

    def __init__(self, dead: list[str]):
        self.dead = list(dead)
        super().__init__(
            "cannot rescale, %d filter(s) have mean activation <= 0: %s"
            % (len(dead), ", ".join(dead))
        )


class NumericError(GramtexError):
    """A computation produced non-finite values or diverged."""
