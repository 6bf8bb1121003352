import json
import math

import numpy as np
import pytest

from minifv import (BufferHandle, ExecPolicy, Lane, run_kernel, run_serial,
                    select_lane, to_chrome_trace, write_chrome_trace)
from minifv.dispatch import partition_range


def test_select_lane_strict_inequality():
    assert select_lane(50, ExecPolicy(cutoff=100)) is Lane.SERIAL
    assert select_lane(101, ExecPolicy(cutoff=100)) is Lane.PARALLEL
    # boundary: strictly greater required
    assert select_lane(100, ExecPolicy(cutoff=100)) is Lane.SERIAL


def test_select_lane_sentinels():
    assert select_lane(10**9, ExecPolicy(cutoff=math.inf)) is Lane.SERIAL
    assert select_lane(1, ExecPolicy(cutoff=0)) is Lane.PARALLEL
    assert select_lane(0, ExecPolicy(cutoff=0)) is Lane.SERIAL


def test_policy_validation():
    with pytest.raises(ValueError):
        ExecPolicy(cutoff=-1)
    with pytest.raises(ValueError):
        ExecPolicy(parallel_width=0)
    with pytest.raises(ValueError):
        ExecPolicy(mode="banana")


def test_zero_length_kernel_never_runs_body():
    policy = ExecPolicy()
    called = []
    ev = run_kernel("noop", 0, policy, [], lambda s, e: called.append(1))
    assert called == []
    assert ev.duration >= 0.0
    assert ev.loop_len == 0
    assert policy.trace[-1] is ev


def test_unified_mode_migration_always_zero():
    policy = ExecPolicy(cutoff=0, mode="unified")
    h = BufferHandle.wrap(np.zeros(2048))
    for _ in range(4):
        run_kernel("k", 2048, policy, [h], lambda s, e: None)
    run_serial("s", policy, [h], lambda: None)
    assert all(ev.migration_cost == 0.0 for ev in policy.trace)
    assert policy.ledger.totals["migration_us"] == 0.0


def test_discrete_mode_flip_charges_pages():
    # 1024 doubles = 8192 bytes = 2 pages at 4096; 2 * 5 us = 10 us
    policy = ExecPolicy(cutoff=512, mode="discrete", cost_per_page_us=5.0)
    h = BufferHandle.wrap(np.zeros(1024))
    run_serial("host-touch", policy, [h], lambda: None)   # first touch free
    assert policy.trace[-1].migration_cost == 0.0
    ev = run_kernel("device", 1024, policy, [h], lambda s, e: None)
    assert ev.lane is Lane.PARALLEL
    assert ev.migration_cost == 10.0
    # staying on the same lane is free
    ev2 = run_kernel("device2", 1024, policy, [h], lambda s, e: None)
    assert ev2.migration_cost == 0.0


def test_parallel_kernel_covers_range_disjointly():
    policy = ExecPolicy(cutoff=0, parallel_width=4)
    out = np.zeros(1003)

    def body(s, e):
        out[s:e] += 1.0

    run_kernel("cover", 1003, policy, [], body)
    assert (out == 1.0).all()


def test_partition_range_properties():
    for n in (0, 1, 5, 4096, 4097, 100_000):
        for width in (1, 2, 4, 7):
            for gran in (1, 4096):
                parts = partition_range(n, width, gran)
                if n == 0:
                    assert parts == []
                    continue
                assert parts[0][0] == 0 and parts[-1][1] == n
                for (a, b), (c, d) in zip(parts, parts[1:]):
                    assert b == c and a < b
                for a, _ in parts[1:]:
                    assert a % gran == 0


def test_dispatch_soundness_over_workload():
    for cutoff in (0, 100, 10000, math.inf):
        policy = ExecPolicy(cutoff=cutoff)
        for n in (0, 1, 50, 100, 101, 2048, 20000):
            run_kernel("k", n, policy, [], lambda s, e: None)
        for ev in policy.trace:
            assert (ev.lane is Lane.PARALLEL) == (ev.loop_len > cutoff)


def test_events_ordered_and_nonoverlapping():
    policy = ExecPolicy(cutoff=100)
    for n in (10, 500, 3, 900):
        run_kernel("k", n, policy, [], lambda s, e: None)
    run_serial("s", policy, [], lambda: None)
    ends = 0.0
    for ev in policy.trace:
        assert ev.t_start >= ends
        ends = ev.t_start + ev.duration
    wall = policy.now_us()
    assert sum(ev.duration for ev in policy.trace) <= wall


def test_kernel_exception_carries_name():
    policy = ExecPolicy()

    def bad(s, e):
        raise ZeroDivisionError("boom")

    with pytest.raises(RuntimeError, match="explode"):
        run_kernel("explode", 4, policy, [], bad)

    policy_par = ExecPolicy(cutoff=0)
    with pytest.raises(RuntimeError, match="explode"):
        run_kernel("explode", 4, policy_par, [], bad)


def test_chrome_trace_schema(tmp_path):
    policy = ExecPolicy(cutoff=100, mode="discrete")
    h = BufferHandle.wrap(np.zeros(4000))
    run_kernel("small", 50, policy, [h], lambda s, e: None)
    run_kernel("large", 4000, policy, [h], lambda s, e: None)
    path = tmp_path / "trace.json"
    write_chrome_trace(policy.trace, path)
    doc = json.loads(path.read_text())
    assert set(doc) == {"traceEvents"}
    assert len(doc["traceEvents"]) == 2
    for entry in doc["traceEvents"]:
        assert set(entry) == {"name", "ph", "ts", "dur", "pid", "tid", "args"}
        assert entry["ph"] == "X"
        assert entry["pid"] == 1
        assert entry["tid"] in (1, 2)
        assert set(entry["args"]) == {"loop_len", "migration_us"}
    assert doc["traceEvents"][0]["tid"] == 1   # serial
    assert doc["traceEvents"][1]["tid"] == 2   # parallel
    assert doc["traceEvents"][1]["args"]["migration_us"] > 0


def test_inject_delay_emits_migration_event():
    policy = ExecPolicy(cutoff=0, mode="discrete", inject_delay=True,
                        cost_per_page_us=100.0)
    h = BufferHandle.wrap(np.zeros(1024))
    run_serial("host", policy, [h], lambda: None)
    run_kernel("device", 1024, policy, [h], lambda s, e: None)
    cats = [ev.category for ev in policy.trace]
    assert "migration" in cats
    mig = [ev for ev in policy.trace if ev.category == "migration"][0]
    assert mig.migration_cost == 200.0
    kernel = policy.trace[-1]
    assert kernel.kernel_name == "device"
    assert kernel.migration_cost == 0.0  # moved onto the migration event


def test_trace_disabled_still_returns_events():
    policy = ExecPolicy(trace_enabled=False)
    ev = run_kernel("k", 10, policy, [], lambda s, e: None)
    assert ev.loop_len == 10
    assert policy.trace == []


def test_lane_counts_and_reset():
    policy = ExecPolicy(cutoff=100)
    run_kernel("a", 10, policy, [], lambda s, e: None)
    run_kernel("b", 1000, policy, [], lambda s, e: None)
    assert policy.lane_counts() == {"serial": 1, "parallel": 1}
    policy.reset_trace()
    assert policy.trace == []
