"""Desk-scale reproduction machinery.

Everything here exists to exercise the data plane and control plane the
way the real deployments do, but on one machine in seconds: a fair-share
disk model, an LSM key-value store simulator, a multi-tenant reader
simulator, and a loopback microbenchmark.  All simulations run under
virtual time and a fixed seed, so traces are bit-identical across runs;
the microbenchmark alone touches the real clock.
"""
from __future__ import annotations

import math


def percentile(sorted_values, fraction: float):
    """Nearest-rank percentile of an ascending-sorted sequence."""
    if not sorted_values:
        raise ValueError("no samples")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    # The epsilon guards against 0.99 * n landing a hair above the
    # integer it mathematically equals.
    rank = math.ceil(len(sorted_values) * fraction - 1e-9)
    return sorted_values[max(rank - 1, 0)]
