"""Exception hierarchy shared by all mtgee modules.

The CLI maps these onto exit codes: ContractError -> 1 (usage),
DataError -> 2, NumericalError and subclasses -> 3.
"""


class MtgeeError(Exception):
    """Base class for all mtgee errors."""


class ContractError(MtgeeError):
    """A caller violated an API precondition (bad argument, wrong method/link pairing)."""


class DataError(MtgeeError):
    """Dataset ingestion failed (missing file, ragged rows, missing responses)."""


class NumericalError(MtgeeError):
    """Base class for numerical failures during estimation or simulation."""


class ModelViolationError(NumericalError):
    """The variance function mu'(theta) was non-positive at an evaluated point."""

    def __init__(self, message, index=None, theta=None):
        super().__init__(message)
        self.index = index
        self.theta = theta


class SaturationError(NumericalError):
    """Exponential-link argument exceeded the overflow guard."""

    def __init__(self, message, theta=None):
        super().__init__(message)
        self.theta = theta


class CorrelationDegeneracyError(NumericalError):
    """A working correlation matrix failed its positive-definiteness contract."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class RankDeficiencyError(NumericalError):
    """A normal/information matrix was (near-)singular; carries its smallest eigenvalue."""

    def __init__(self, message, lambda_min=None):
        super().__init__(message)
        self.lambda_min = lambda_min


class SolverFailureError(NumericalError):
    """Root finding failed irrecoverably; carries the iteration trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class InstabilityError(NumericalError):
    """A simulated series exploded past the stability guard."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StudyError(NumericalError):
    """Too many replication failures invalidated a Monte Carlo study."""
