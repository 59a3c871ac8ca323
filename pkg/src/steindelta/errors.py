"""Exception types shared across the package."""


class SteinDeltaError(ValueError):
    """Base class for all library errors."""


class RangeError(SteinDeltaError):
    """An exact-arithmetic or enumeration scale guard was exceeded."""


class DomainError(SteinDeltaError):
    """An argument is outside the mathematical domain of the operation."""


class ArgumentError(SteinDeltaError):
    """Arguments are structurally invalid (shape, sign, ordering, ...)."""


class CapabilityError(SteinDeltaError):
    """The requested operation is not available for this input kind."""


class MissingMomentsError(SteinDeltaError):
    """A required moment-table entry is absent.

    ``keys`` lists the missing (index, order) entries so the caller can
    rebuild the table with the right orders.
    """

    def __init__(self, keys):
        self.keys = sorted(keys)
        super().__init__(f"missing moment entries: {self.keys}")
