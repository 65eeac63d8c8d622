"""Hierarchical probabilistic demand forecasting toolkit.

Submodules cover panel ingestion and simulation, leakage-safe feature
construction, quantile base learners with multi-step strategies and pooled
ensembles, pooling-set selection, integer-coherent reconciliation on top of
a small exact MILP core, scaled accuracy metrics, and paired significance
tests. The ``demandcast`` command line drives the same code paths.
"""

from .errors import (
    DataError,
    DemandcastError,
    LearnerError,
    MetricError,
    SolverError,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DemandcastError",
    "LearnerError",
    "MetricError",
    "SolverError",
    "__version__",
]
