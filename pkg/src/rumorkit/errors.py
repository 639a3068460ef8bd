"""Exception hierarchy shared across the package.

Two broad families matter to callers: data/validation problems (bad event
records, empty datasets) and numeric failures (shape mismatches, NaN losses).
The CLI maps them to distinct exit codes.
"""


class RumorKitError(Exception):
    """Base class for all package-specific errors."""


class EventDataError(RumorKitError):
    """A problem with event data; carries the offending id when known."""

    def __init__(self, message: str, offending_id: str | None = None):
        super().__init__(message)
        self.offending_id = offending_id


class DuplicateId(EventDataError):
    pass


class UnknownParent(EventDataError):
    pass


class CycleDetected(EventDataError):
    pass


class MissingClaim(EventDataError):
    pass


class BadTimestamp(EventDataError):
    pass


class UnknownNode(EventDataError):
    pass


class EmptyDataset(EventDataError):
    pass


class SingleClassDataset(EventDataError):
    pass


class NumericError(RumorKitError):
    """Base class for numeric/tensor failures."""


class ShapeMismatch(NumericError):
    def __init__(self, op: str, shape_a, shape_b):
        super().__init__(f"{op}: incompatible shapes {tuple(shape_a)} and {tuple(shape_b)}")
        self.shapes = (tuple(shape_a), tuple(shape_b))


class NotScalarOutput(NumericError):
    pass


class ZeroVector(NumericError):
    pass


class EmptyWordSet(NumericError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, message: str, batch_id: str | None = None):
        super().__init__(message)
        self.batch_id = batch_id


class ClaimTooLong(EventDataError):
    pass


class TemplateError(RumorKitError):
    """Prompt template without exactly one [MASK] slot."""


class VocabError(RumorKitError):
    """Malformed vocabulary file."""
