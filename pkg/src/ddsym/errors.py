"""Exception hierarchy shared by all stages."""


class DdsymError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(DdsymError, ValueError):
    pass


class InputShapeError(DdsymError, ValueError):
    pass


class InvalidInputError(DdsymError, ValueError):
    """An input vector that is not a member of the finite input set."""


class SamplingError(DdsymError):
    def __init__(self, message, x=None, u=None, w=None):
        super().__init__(message)
        self.x, self.u, self.w = x, u, w


class IncompleteDatasetError(DdsymError):
    pass


class AbstractionError(DdsymError):
    def __init__(self, message, triple=None):
        super().__init__(message)
        self.triple = triple


class AssemblyError(DdsymError):
    pass


class InfeasibleError(DdsymError):
    """Every gamma in the grid produced an infeasible scenario program."""

    def __init__(self, message, worst_row=None):
        super().__init__(message)
        self.worst_row = worst_row


class DomainError(DdsymError, ValueError):
    pass


class UncontrollableStateError(DdsymError):
    """The refined controller was queried outside its winning region."""

    def __init__(self, cell):
        super().__init__(f"state quantizes to cell {cell}, which is not winning")
        self.cell = cell


class ReportError(DdsymError):
    pass
