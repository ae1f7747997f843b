"""conflictlab: probabilistic traffic-conflict detection and benchmarking.

The pipeline maps two-vehicle interaction frames to a context vector,
regresses the log radial spacing on that context with a Gaussian process,
and reads conflict probability and intensity off the resulting lognormal
tail. Classical surrogate metrics (2-D TTC, DRAC, PSD, PET) and an
ROC-based collision-warning harness are included for benchmarking.
"""

__version__ = "0.1.0"

from . import context, evaluation, geometry, gp, ingestion, metrics, pipeline, proximity, synthetic
from .geometry import RelativeSpacing, VehicleState
from .proximity import ConflictAssessment, LognormalParams

__all__ = [
    "ConflictAssessment",
    "LognormalParams",
    "RelativeSpacing",
    "VehicleState",
    "context",
    "evaluation",
    "geometry",
    "gp",
    "ingestion",
    "metrics",
    "pipeline",
    "proximity",
    "synthetic",
]
