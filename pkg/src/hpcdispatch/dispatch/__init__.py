"""Dispatchers: models, branching, decision extraction."""

from hpcdispatch.dispatch.common import DispatchConfig
from hpcdispatch.dispatch.hcp19 import build_and_solve_hcp19
from hpcdispatch.dispatch.instance import (
    Allocation,
    AllocationEntry,
    DispatchDecision,
    DispatchInstance,
    InvocationStats,
    JobDecision,
    QueuedJob,
    RunningJob,
)
from hpcdispatch.dispatch.pcp19 import build_and_solve_pcp19
from hpcdispatch.dispatch.pcp20 import build_pcp20, solve_pcp20

DISPATCHERS = {
    "pcp20": solve_pcp20,
    "pcp19": build_and_solve_pcp19,
    "hcp19": build_and_solve_hcp19,
}

__all__ = [
    "Allocation",
    "AllocationEntry",
    "DISPATCHERS",
    "DispatchConfig",
    "DispatchDecision",
    "DispatchInstance",
    "InvocationStats",
    "JobDecision",
    "QueuedJob",
    "RunningJob",
    "build_and_solve_hcp19",
    "build_and_solve_pcp19",
    "build_pcp20",
    "solve_pcp20",
]
