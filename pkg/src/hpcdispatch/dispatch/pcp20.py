"""Joint scheduling-and-allocation dispatcher over flat position spaces.

One model decides both when and where jobs run.  Each job unit gets one
position variable per requested resource type, ranging over the whole
system's flattened capacity for that type, so the variable count depends
only on the visible queue, never on the node count.  Non-overlap of
(time x position) boxes carries allocation feasibility; node ownership is
enforced with run-indexed element constraints; pooled and position-axis
cumulatives provide relaxation pruning.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction

from hpcdispatch.dispatch.common import (
    DispatchConfig,
    emergency_dispatch,
    horizon,
    objective_terms,
    owner_index,
    priority,
    requested_resources,
    residual,
    select_window,
    unit_demands,
)
from hpcdispatch.dispatch.instance import (
    AllocationEntry,
    DispatchDecision,
    DispatchInstance,
    InvocationStats,
    JobDecision,
    QueuedJob,
)
from hpcdispatch.kernel import (
    STATUS_INFEASIBLE,
    STATUS_TIMEOUT,
    AllDifferent,
    Box,
    Cumulative,
    Diffn,
    ElementEqual,
    IntVar,
    Solver,
    Task,
    apply_span_filter,
)


@dataclass
class _JobVars:
    entry: QueuedJob
    start: IntVar
    # (resource, unit, position var, extent), in (resource order, unit) order
    positions: list[tuple[str, int, IntVar, int]]
    neg_priority: Fraction


@dataclass
class ModelHandle:
    solver: Solver
    window: list[QueuedJob]
    eoh: int
    jobs: list[_JobVars] = field(default_factory=list)
    n_sched: int = 0
    n_alloc: int = 0
    constant: int = 0
    infeasible_build: bool = False

    @property
    def n_vars(self) -> int:
        return self.n_sched + self.n_alloc


def build_pcp20(instance: DispatchInstance, config: DispatchConfig) -> ModelHandle:
    """Construct the joint model for the visible window."""
    system = instance.system
    t = instance.t
    window, _ = select_window(instance, config)
    eoh = horizon(t, window, instance.running)
    solver = Solver("pcp20")
    handle = ModelHandle(solver=solver, window=window, eoh=eoh)
    handle.n_sched = len(window)
    if not window:
        return handle

    for entry in window:
        svar = solver.new_var(t, eoh, f"s{entry.job_id}")
        unit_req = unit_demands(system, entry)
        positions: list[tuple[str, int, IntVar, int]] = []
        for resource in requested_resources(system, entry):
            q = unit_req[resource]
            idx = owner_index(system, resource)
            # A q-wide claim at y occupies y..y+q-1, so y and y+q-1 must
            # share a node block.  The default bakes that into the domain;
            # element_literal posts it as a constraint instead.
            span = idx.span_filter(q - 1) if q > 1 and not config.element_literal else None
            for unit in range(entry.rn):
                yvar = solver.new_var(
                    1, system.total_capacity[resource], f"y{entry.job_id}.{resource}.{unit}"
                )
                if span is not None and not apply_span_filter(yvar, span):
                    handle.infeasible_build = True
                if config.element_literal and q > 1:
                    solver.add(ElementEqual(idx, yvar, idx, yvar, 0, q - 1))
                positions.append((resource, unit, yvar, q))
                handle.n_alloc += 1
        handle.jobs.append(
            _JobVars(
                entry=entry,
                start=svar,
                positions=positions,
                neg_priority=-priority(entry.arrival, entry.d_expected, t),
            )
        )

    # Running jobs appear as fixed boxes living on [t, t + residual).
    running_fixed: list[tuple[IntVar, int, dict[str, list[tuple[IntVar, int]]]]] = []
    for run in instance.running:
        dur = residual(run, t)
        s_fixed = solver.new_var(t, t, f"s_run{run.job_id}")
        by_resource: dict[str, list[tuple[IntVar, int]]] = {}
        for alloc in run.allocation:
            y_fixed = solver.new_var(alloc.position, alloc.position, "")
            by_resource.setdefault(alloc.resource, []).append((y_fixed, alloc.extent))
        running_fixed.append((s_fixed, dur, by_resource))

    for resource in system.resources:
        boxes: list[Box] = []
        pooled: list[Task] = []
        axis: list[Task] = []
        for jv in handle.jobs:
            d = jv.entry.d_expected
            total = jv.entry.job.demand.get(resource, 0)
            if total > 0:
                pooled.append(Task(jv.start, d, total))
            for res, _unit, yvar, q in jv.positions:
                if res != resource:
                    continue
                boxes.append(Box(jv.start, d, yvar, q))
                axis.append(Task(yvar, q, d))
        for s_fixed, dur, by_resource in running_fixed:
            entries = by_resource.get(resource, ())
            total = sum(q for _, q in entries)
            if total > 0:
                pooled.append(Task(s_fixed, dur, total))
            for y_fixed, q in entries:
                boxes.append(Box(s_fixed, dur, y_fixed, q))
                axis.append(Task(y_fixed, q, dur))
        if boxes:
            solver.add(Diffn(boxes))
        if pooled:
            solver.add(Cumulative(pooled, system.total_capacity[resource]))
        if axis:
            solver.add(Cumulative(axis, eoh - t))

    for jv in handle.jobs:
        resources = requested_resources(system, jv.entry)
        by_res: dict[str, list[IntVar]] = {r: [] for r in resources}
        for res, _unit, yvar, _q in jv.positions:
            by_res[res].append(yvar)
        for unit in range(jv.entry.rn):
            for r1, r2 in zip(resources, resources[1:]):
                solver.add(
                    ElementEqual(
                        owner_index(system, r1),
                        by_res[r1][unit],
                        owner_index(system, r2),
                        by_res[r2][unit],
                    )
                )
        if jv.entry.rn > 1:
            for r in resources:
                solver.add(AllDifferent(by_res[r]))

    weights, constant = objective_terms(window, config.objective_scale)
    handle.constant = constant
    solver.minimize([jv.start for jv in handle.jobs], weights, constant)
    return handle


def make_branch(handle: ModelHandle, config: DispatchConfig):
    """Earliest-startable job first; fix its start low, then its tightest
    position variable high (best fit).  Ties: priority, then job id."""
    jobs = handle.jobs
    priority_first = config.branch_priority_first

    def branch():
        best = None
        best_key = None
        for jv in jobs:
            s = jv.start
            s_unfixed = s.lo != s.hi
            if not s_unfixed and all(y.lo == y.hi for _, _, y, _ in jv.positions):
                continue
            if priority_first:
                key = (jv.neg_priority, s.lo, jv.entry.job_id)
            else:
                key = (s.lo, jv.neg_priority, jv.entry.job_id)
            if best_key is None or key < best_key:
                best_key = key
                best = jv
        if best is None:
            return None
        if best.start.lo != best.start.hi:
            return best.start, best.start.lo
        pick = None
        pick_size = None
        for _res, _unit, yvar, _q in best.positions:
            if yvar.lo == yvar.hi:
                continue
            size = yvar.size()
            if pick_size is None or size < pick_size:
                pick = yvar
                pick_size = size
        return pick, pick.hi

    return branch


def _decode(
    handle: ModelHandle, instance: DispatchInstance, values: dict[IntVar, int]
) -> list[JobDecision]:
    out: list[JobDecision] = []
    for jv in handle.jobs:
        start = values[jv.start]
        if start == instance.t:
            allocation = tuple(
                sorted(
                    (
                        AllocationEntry(unit, res, values[yvar], q)
                        for res, unit, yvar, q in jv.positions
                    ),
                    key=lambda a: (a.unit, a.resource),
                )
            )
            out.append(JobDecision(jv.entry.job_id, start, allocation))
        else:
            out.append(JobDecision(jv.entry.job_id, start, None))
    return out


def solve_pcp20(
    instance: DispatchInstance, config: DispatchConfig | None = None
) -> DispatchDecision:
    config = config or DispatchConfig()
    t0 = time.perf_counter()
    handle = build_pcp20(instance, config)
    stats = InvocationStats(
        dispatcher="pcp20",
        t=instance.t,
        queue_size=len(instance.queued),
        window_size=len(handle.window),
        n_vars=handle.n_vars,
        n_sched=handle.n_sched,
        n_alloc=handle.n_alloc,
    )
    decision = DispatchDecision(stats=stats)
    if not handle.window:
        stats.status = "optimal"
        stats.objective = 0
        stats.wall_ms = (time.perf_counter() - t0) * 1000.0
        return decision

    remaining = config.budget_ms - (time.perf_counter() - t0) * 1000.0
    if handle.infeasible_build or remaining <= 0.0:
        stats.status = STATUS_INFEASIBLE if handle.infeasible_build else STATUS_TIMEOUT
        decision.fallback = True
    else:
        result = handle.solver.solve(
            make_branch(handle, config), budget_ms=remaining, node_limit=config.node_limit
        )
        stats.status = result.status
        stats.objective = result.objective
        stats.decisions = result.stats.decisions
        stats.fails = result.stats.fails
        stats.propagations = result.stats.propagations
        if result.values is None:
            decision.fallback = True
        else:
            decision.jobs = _decode(handle, instance, result.values)
            if decision.violations(instance):
                # A decoded solution failing the independent validator means
                # a propagator bug; refuse to dispatch rather than corrupt state.
                decision.jobs = []
                decision.fallback = True
                stats.status = "decode-error"

    if decision.fallback and config.emergency_first_fit:
        decision.jobs = emergency_dispatch(instance, handle.window)

    stats.dispatched = len(decision.dispatched())
    stats.fallback = decision.fallback
    stats.wall_ms = (time.perf_counter() - t0) * 1000.0
    return decision
