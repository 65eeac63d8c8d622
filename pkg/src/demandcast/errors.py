"""Typed exceptions shared across the package.

Every error raised on a documented failure path is one of these, so callers
(and the CLI exit-code mapping) can tell data problems apart from solver
problems without string matching.
"""


class DemandcastError(Exception):
    """Base class for all package errors."""


class DataError(DemandcastError):
    """Malformed, inconsistent, or insufficient input data."""


class MetricError(DemandcastError):
    """A metric or statistic is undefined for the given inputs."""


class LearnerError(DemandcastError):
    """A base learner failed to fit or predict."""


class SolverError(DemandcastError):
    """An optimization problem is invalid or a solve failed."""
