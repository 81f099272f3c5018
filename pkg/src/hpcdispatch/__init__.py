"""Constraint-based on-line job dispatching for HPC clusters.

The package bundles three dispatchers sharing one scheduling model but
differing in how they allocate job units to nodes, a small finite-domain
solver kernel they are built on, and a trace-driven simulator that replays
workload traces against a cluster description.
"""

from hpcdispatch.workload import JobRecord, DurationPredictor, parse_swf
from hpcdispatch.system import SystemModel, build_system, preset, validate_allocation

__version__ = "0.1.0"

__all__ = [
    "JobRecord",
    "DurationPredictor",
    "parse_swf",
    "SystemModel",
    "build_system",
    "preset",
    "validate_allocation",
    "__version__",
]
