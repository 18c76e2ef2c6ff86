"""Exception hierarchy.

Data problems (bad files, bad rows) derive from :class:`DataError`; failures
of an estimator on otherwise valid data derive from :class:`EstimationError`.
The CLI maps the two families onto distinct exit codes.
"""

from __future__ import annotations


class RdgeError(Exception):
    """Base class for all package errors."""


class DataError(RdgeError):
    """Input data violates a schema or invariant."""


class MalformedRows(DataError):
    """One or more input rows could not be parsed."""

    def __init__(self, path, problems):
        self.path = str(path)
        self.problems = list(problems)
        lines = ", ".join(str(line) for line, _ in self.problems[:20])
        more = "" if len(self.problems) <= 20 else f" (+{len(self.problems) - 20} more)"
        first = self.problems[0][1] if self.problems else ""
        super().__init__(f"{self.path}: malformed rows at lines {lines}{more}: {first}")


class MissingCluster(DataError):
    """Cluster-robust variance requested but cluster keys are absent."""


class EstimationError(RdgeError):
    """An estimator could not produce a result."""


class InsufficientData(EstimationError):
    """Too few observations with positive kernel weight."""


class SingularDesign(EstimationError):
    """The weighted design matrix is numerically rank deficient."""


class LeverageOne(EstimationError):
    """An observation has leverage 1, so HC2/HC3 deflation is undefined."""

    def __init__(self, index, message=None):
        self.index = int(index)
        super().__init__(message or f"observation {self.index} has leverage 1")


class DegeneratePilot(EstimationError):
    """Pilot curvature estimate is exactly zero."""


class ZeroFirstStage(EstimationError):
    """The first-stage jump of a fuzzy design is exactly zero."""


class AllReplicationsFailed(EstimationError):
    """Every bootstrap replication raised."""


class EmptyCell(EstimationError):
    """An age x skill x treatment cell has no observations."""


class DegenerateShareChange(EstimationError):
    """The change in the skilled labour share is zero."""


class ZeroSchoolingGap(EstimationError):
    """Skilled and unskilled mean schooling coincide."""


class DegenerateDenominator(EstimationError):
    """An elasticity inversion divides by zero."""
