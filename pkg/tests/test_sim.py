"""Event-driven simulation loop, metrics, artifacts, and offline replay."""

import csv

import pytest

import support
from hpcdispatch.dispatch import DISPATCHERS, DispatchConfig
from hpcdispatch.dispatch.instance import DispatchDecision, DispatchInstance, InvocationStats
from hpcdispatch.sim import (
    REPLAY_FIELDS,
    SimConfig,
    replay_instances,
    run_simulation,
    snapshot_instance,
    write_artifacts,
)
from hpcdispatch.workload import make_job


def one_core():
    return support.system_of((1, {"core": 1}))


def sim_config(**kw):
    dispatch = kw.pop("dispatch", DispatchConfig(budget_ms=10_000, node_limit=None))
    return SimConfig(dispatch=dispatch, **kw)


def two_job_trace():
    return [
        make_job(1, 1, 0, 1, {"core": 1}, 10),
        make_job(2, 2, 0, 1, {"core": 1}, 10),
    ]


# -- the loop ---------------------------------------------------------------------


def test_two_jobs_on_one_core_frozen_metrics():
    result = run_simulation(two_job_trace(), one_core(), sim_config())
    assert not result.dnf
    assert result.final_time == 20
    by_id = {o.job.job_id: o for o in result.outcomes}
    assert (by_id[1].start, by_id[1].end) == (0, 10)
    assert (by_id[2].start, by_id[2].end) == (10, 20)
    assert by_id[1].wait == 0 and by_id[2].wait == 10
    assert by_id[1].slowdown == 1.0 and by_id[2].slowdown == 2.0

    row = result.summary_row()
    assert row["dispatcher"] == "pcp20"
    assert row["avg_slowdown"] == "1.500000"
    assert row["sd_slowdown"] == "0.500000"
    assert row["avg_wait_s"] == "5.000000"
    assert row["sd_wait_s"] == "5.000000"


def test_event_log_tells_the_story():
    result = run_simulation(two_job_trace(), one_core(), sim_config())
    text = "\n".join(result.events)
    assert "t=0 arrive job=1" in text
    assert "t=0 start job=1 wait=0" in text
    assert "t=10 end job=1" in text
    assert "t=10 start job=2 wait=10" in text
    assert "dispatched=1" in text


def test_input_validation():
    with pytest.raises(ValueError):
        run_simulation([], one_core(), sim_config(dispatcher="slurm"))
    with pytest.raises(ValueError):
        run_simulation([], one_core(), sim_config(predictor="psychic"))
    dup = [make_job(1, 1, 0, 1, {"core": 1}, 5), make_job(1, 1, 3, 1, {"core": 1}, 5)]
    with pytest.raises(ValueError):
        run_simulation(dup, one_core(), sim_config())


def test_unfittable_job_rejected_on_arrival():
    trace = [
        make_job(1, 1, 0, 1, {"core": 99}, 10),
        make_job(2, 1, 0, 1, {"core": 1}, 10),
    ]
    result = run_simulation(trace, one_core(), sim_config())
    by_id = {o.job.job_id: o for o in result.outcomes}
    assert result.dnf
    assert by_id[1].dnf_reason == "unfittable"
    assert not by_id[1].completed
    assert by_id[2].completed
    assert any("reject job=1" in line for line in result.events)


def test_strict_kill_truncates_at_predicted_duration():
    trace = [make_job(1, 1, 0, 1, {"core": 1}, 50, requested=5)]
    relaxed = run_simulation(trace, one_core(), sim_config(predictor="last2"))
    assert relaxed.outcomes[0].d_expected == 5
    assert relaxed.outcomes[0].end == 50

    killed = run_simulation(trace, one_core(), sim_config(predictor="last2", strict_kill=True))
    assert killed.outcomes[0].end == 5
    assert killed.outcomes[0].completed


def test_last2_predictions_update_on_completion_only():
    trace = [
        make_job(1, 4, 0, 1, {"core": 1}, 10),
        make_job(2, 4, 100, 1, {"core": 1}, 30),
    ]
    result = run_simulation(trace, one_core(), sim_config(predictor="last2"))
    by_id = {o.job.job_id: o for o in result.outcomes}
    assert by_id[1].d_expected == 3600  # nothing known about the user yet
    assert by_id[2].d_expected == 10  # first completion feeds the history


def test_throttle_delays_the_next_invocation():
    trace = [
        make_job(1, 1, 0, 1, {"core": 1}, 5),
        make_job(2, 1, 10, 1, {"core": 1}, 5),
    ]
    result = run_simulation(trace, one_core(), sim_config(throttle_s=100))
    by_id = {o.job.job_id: o for o in result.outcomes}
    assert by_id[2].start == 100  # held until the throttle window reopens
    assert len(result.invocations) == 2


def test_stalled_queue_gives_up_after_retries():
    def never_dispatch(instance, config):
        return DispatchDecision(stats=InvocationStats(dispatcher="stub-never", t=instance.t))

    DISPATCHERS["stub-never"] = never_dispatch
    try:
        trace = [make_job(1, 1, 0, 1, {"core": 1}, 5)]
        config = sim_config(dispatcher="stub-never", retry_interval_s=7)
        config.max_stall_retries = 3
        result = run_simulation(trace, one_core(), config)
    finally:
        del DISPATCHERS["stub-never"]
    assert result.dnf
    assert result.dnf_reason == "stalled"
    assert result.outcomes[0].dnf_reason == "stalled"
    assert len(result.invocations) == 4  # the first try plus three retries
    assert any("stall retry=3" in line for line in result.events)


def test_wall_cap_aborts_the_run():
    result = run_simulation(two_job_trace(), one_core(), sim_config(wall_cap_s=0.0))
    assert result.dnf
    assert result.dnf_reason == "wall-cap"
    assert result.events[-1].endswith("abort reason=wall-cap")
    assert all(not o.completed for o in result.outcomes)


def test_requeued_jobs_keep_their_arrival_time(tmp_path):
    config = sim_config(dump_dir=tmp_path)
    result = run_simulation(two_job_trace(), one_core(), config)
    assert not result.dnf
    dumps = sorted(tmp_path.glob("instance_*.json"))
    assert [p.name for p in dumps] == ["instance_000001_t0.json", "instance_000002_t10.json"]
    later = DispatchInstance.load(dumps[1])
    # job 2 was passed over at t=0 and is still queued with its original q
    assert [e.job_id for e in later.queued] == [2]
    assert later.queued[0].arrival == 0


def test_snapshot_sorts_by_job_id():
    system = one_core()
    queue = {
        5: support.queued(5, 0, 1, {"core": 1}, 3),
        2: support.queued(2, 0, 1, {"core": 1}, 3),
    }
    snap = snapshot_instance(4, queue, {}, system)
    assert [e.job_id for e in snap.queued] == [2, 5]


# -- artifacts -----------------------------------------------------------------------


def test_artifacts_round_out_the_run(tmp_path):
    result = run_simulation(two_job_trace(), one_core(), sim_config())
    paths = write_artifacts(result, tmp_path)
    assert sorted(paths) == ["events", "invocations", "jobs", "summary"]
    assert all(p.exists() for p in paths.values())

    with paths["jobs"].open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["job_id"] for r in rows] == ["1", "2", "avg", "sd"]
    assert rows[0]["status"] == "completed"
    assert rows[0]["slowdown"] == "1.000000"
    assert rows[2]["slowdown"] == "1.500000"
    assert rows[2]["status"] == "completed=2/2"
    assert rows[3]["wait_s"] == "5.000000"

    with paths["invocations"].open() as fh:
        inv_rows = list(csv.DictReader(fh))
    assert len(inv_rows) == len(result.invocations)
    assert inv_rows[0]["dispatcher"] == "pcp20"

    summary = paths["summary"].read_text().splitlines()
    assert summary[0].startswith("dispatcher,predictor,avg_dispatch_ms")
    assert summary[1].startswith("pcp20,oracle,")


def test_jobs_and_events_are_reproducible(tmp_path):
    # wall-clock timings stay out of jobs.csv and events.log by design
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    write_artifacts(run_simulation(two_job_trace(), one_core(), sim_config()), out_a)
    write_artifacts(run_simulation(two_job_trace(), one_core(), sim_config()), out_b)
    assert (out_a / "jobs.csv").read_bytes() == (out_b / "jobs.csv").read_bytes()
    assert (out_a / "events.log").read_bytes() == (out_b / "events.log").read_bytes()


def test_dnf_jobs_render_with_reason(tmp_path):
    trace = [make_job(1, 1, 0, 1, {"core": 99}, 10)]
    result = run_simulation(trace, one_core(), sim_config())
    paths = write_artifacts(result, tmp_path)
    with paths["jobs"].open() as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["status"] == "dnf:unfittable"
    assert rows[0]["wait_s"] == ""
    assert rows[1]["status"] == "completed=0/1"


# -- replay ---------------------------------------------------------------------------


def test_replay_compares_model_sizes(tmp_path):
    system = support.system_of((8, {"core": 16, "mem": 16}))
    instance = support.instance_on(
        system, t=100,
        queued_jobs=[
            support.queued(1, submit=60, rn=1, unit_req={"core": 4, "mem": 2}, d_expected=30),
            support.queued(2, submit=90, rn=2, unit_req={"core": 8}, d_expected=60),
        ],
    )
    good = tmp_path / "instance_000001_t100.json"
    instance.dump(good)
    bad = tmp_path / "instance_000000_broken.json"
    bad.write_text("{not json", encoding="utf-8")

    rows, notes = replay_instances([bad, good], DispatchConfig(budget_ms=10_000, node_limit=None))
    assert len(notes) == 1 and "broken" in notes[0]
    (row,) = rows
    assert tuple(row) == REPLAY_FIELDS
    assert row["instance"] == "instance_000001_t100"
    # joint model: 2 starts + (1*2 + 2*1) positions
    # replicated model: 2 starts + one flag per requested unit per node (8 + 16)
    assert row["vars_pcp20"] == 6
    assert row["vars_pcp19"] == 26
    assert row["var_ratio"] == f"{6 / 26:.6f}"
    assert row["obj_ratio"] == "1.000000"
