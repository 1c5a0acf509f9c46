"""Trend-driven ensemble fuzzing orchestrator.

Runs several baseline fuzzers against one target, measures each one's
coverage trend on a shared AFL-style bitmap and hands CPU time to the
currently strongest subset.
"""

from trendfuzz.bitmap import CoverageBitmap, bucketize, count, density, intersect_all, subtract, union_into
from trendfuzz.errors import (
    AdapterError,
    ConfigError,
    FormatError,
    PreconditionError,
    TrendfuzzError,
    UnsupportedScalingError,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "ConfigError",
    "CoverageBitmap",
    "FormatError",
    "PreconditionError",
    "TrendfuzzError",
    "UnsupportedScalingError",
    "bucketize",
    "count",
    "density",
    "intersect_all",
    "subtract",
    "union_into",
]
