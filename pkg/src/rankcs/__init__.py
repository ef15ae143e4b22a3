"""Rank-aware two-phase estimation of time-varying mmWave MIMO channels.

Phase I completes the partially observed measurement matrix under a
dynamically tracked rank; Phase II recovers the sparse beamspace channel
with a rank-budgeted batch OMP; an adaptive measurement design focuses the
next instance's angular grid on the dominant clusters. The harness module
drives Monte-Carlo sweeps and writes CSV results.
"""

from . import chanmodel, harness, linalg, lrmc, pipeline, rammd, recovery, sensing

__version__ = "0.1.0"

__all__ = [
    "chanmodel",
    "harness",
    "linalg",
    "lrmc",
    "pipeline",
    "rammd",
    "recovery",
    "sensing",
    "__version__",
]
