"""Cutoff-guarded lane dispatch with per-kernel trace recording.

Every bulk loop in the solver runs through run_kernel: the lane is chosen by
comparing the loop length against the policy cutoff (strictly greater goes
parallel), the buffers the kernel reads or writes are touched in the
residency ledger, and a trace event is appended.  Sequential sections that
cannot be expressed as disjoint-write kernels (the DILU sweeps, scatter-heavy
assembly) go through run_serial instead: they always execute on the serial
lane and are recorded with loop_len 0 so the dispatch-soundness rule
(parallel iff loop_len > cutoff) holds for every event in a trace.
"""

import enum
import time
import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .errors import MiniFvError
from .memory import PoolAllocator, ResidencyLedger

DEFAULT_CUTOFF = 10000


class Lane(enum.Enum):
    SERIAL = "serial"
    PARALLEL = "parallel"


@dataclass
class TraceEvent:
    kernel_name: str
    lane: Lane
    loop_len: int
    t_start: float          # microseconds from run start
    duration: float         # microseconds
    migration_cost: float   # microseconds, 0 in unified mode
    category: str           # compute | migration | solve | assembly


class ExecPolicy:
    """Dispatch configuration plus the run-scoped collaborators it drives.

    cutoff may be math.inf (everything serial) or 0 (every non-empty loop
    parallel).  mode is fixed for the lifetime of a run; the ledger is
    created to match.  The policy owns the trace sink and the buffer pool so
    solver code only ever passes a single object around.
    """

    def __init__(self, cutoff=DEFAULT_CUTOFF, mode="unified", parallel_width=4,
                 trace_enabled=True, inject_delay=False, pool=None, ledger=None,
                 page_bytes=None, cost_per_page_us=None):
        if cutoff < 0:
            raise ValueError(f"cutoff must be >= 0, got {cutoff}")
        if parallel_width < 1:
            raise ValueError(f"parallel_width must be >= 1, got {parallel_width}")
        self.cutoff = cutoff
        self.mode = mode
        self.parallel_width = parallel_width
        self.trace_enabled = trace_enabled
        self.inject_delay = inject_delay
        if ledger is None:
            kwargs = {}
            if page_bytes is not None:
                kwargs["page_bytes"] = page_bytes
            if cost_per_page_us is not None:
                kwargs["cost_per_page_us"] = cost_per_page_us
            ledger = ResidencyLedger(mode=mode, **kwargs)
        elif ledger.mode != mode:
            raise ValueError("ledger mode does not match policy mode")
        self.ledger = ledger
        self.pool = pool if pool is not None else PoolAllocator()
        self.trace = []
        self._t0 = time.perf_counter()

    def now_us(self):
        return (time.perf_counter() - self._t0) * 1e6

    def reset_trace(self):
        self.trace = []
        self._t0 = time.perf_counter()

    def lane_counts(self):
        counts = {Lane.SERIAL.value: 0, Lane.PARALLEL.value: 0}
        for ev in self.trace:
            counts[ev.lane.value] += 1
        return counts


def select_lane(loop_len, policy):
    """Parallel iff loop_len is strictly greater than the cutoff."""
    return Lane.PARALLEL if loop_len > policy.cutoff else Lane.SERIAL


_worker_pools = {}
_worker_pools_lock = threading.Lock()


def _workers(width):
    with _worker_pools_lock:
        pool = _worker_pools.get(width)
        if pool is None:
            pool = ThreadPoolExecutor(max_workers=width,
                                      thread_name_prefix="minifv-lane")
            _worker_pools[width] = pool
        return pool


def partition_range(n, width, granularity=1):
    """Static split of [0, n) into up to `width` contiguous ranges.

    Boundaries are rounded down to multiples of `granularity` so chunked
    reductions see whole chunks within one range.  Deterministic in n, width
    and granularity only.
    """
    if n <= 0:
        return []
    if width <= 1:
        return [(0, n)]
    bounds = [0]
    for i in range(1, width):
        b = (n * i // width) // granularity * granularity
        if b > bounds[-1]:
            bounds.append(b)
    bounds.append(n)
    return [(bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)
            if bounds[i + 1] > bounds[i]]


def _touch_buffers(policy, buffers, lane):
    cost = 0.0
    for h in buffers:
        cost += policy.ledger.touch(h, lane)
    return cost


def _record(policy, event):
    if policy.trace_enabled:
        policy.trace.append(event)
    policy.ledger.add_compute(event.duration)
    return event


def _inject_migration_delay(policy, name, lane, cost):
    # Visual block for demo timelines: carries the cost as duration and as
    # migration_cost; profile_summary skips its duration, so nothing is
    # counted twice.
    t_start = policy.now_us()
    time.sleep(cost * 1e-6)
    ev = TraceEvent(kernel_name=f"{name} [migrate]", lane=lane, loop_len=0,
                    t_start=t_start, duration=policy.now_us() - t_start,
                    migration_cost=cost, category="migration")
    if policy.trace_enabled:
        policy.trace.append(ev)
    return ev


def run_kernel(name, loop_len, policy, buffers, body, category="compute",
               granularity=1):
    """Execute body over [0, loop_len) on the selected lane.

    body(start, stop) must be pure per-index with disjoint writes (or fill
    disjoint chunk slots of a reduction scratchpad).  Buffers are touched in
    the ledger before execution; the summed migration cost lands on the
    returned TraceEvent.
    """
    lane = select_lane(loop_len, policy)
    if loop_len <= 0:
        ev = TraceEvent(kernel_name=name, lane=lane, loop_len=0,
                        t_start=policy.now_us(), duration=0.0,
                        migration_cost=0.0, category=category)
        return _record(policy, ev)

    migration = _touch_buffers(policy, buffers, lane)
    if policy.inject_delay and migration > 0.0:
        _inject_migration_delay(policy, name, lane, migration)
        migration = 0.0  # carried by the standalone migration event

    t_start = policy.now_us()
    try:
        if lane is Lane.SERIAL:
            body(0, loop_len)
        else:
            ranges = partition_range(loop_len, policy.parallel_width, granularity)
            pool = _workers(policy.parallel_width)
            futures = [pool.submit(body, s, e) for s, e in ranges]
            for fut in futures:
                fut.result()
    except MiniFvError:
        raise
    except Exception as exc:
        raise RuntimeError(f"kernel {name!r} failed: {exc}") from exc
    duration = policy.now_us() - t_start

    ev = TraceEvent(kernel_name=name, lane=lane, loop_len=loop_len,
                    t_start=t_start, duration=duration,
                    migration_cost=migration, category=category)
    return _record(policy, ev)


def run_serial(name, policy, buffers, body, category="solve"):
    """Execute an inherently sequential section on the serial lane.

    Recorded with loop_len 0: these sections never participate in cutoff
    dispatch, so the parallel-iff-above-cutoff rule stays intact.
    """
    migration = _touch_buffers(policy, buffers, Lane.SERIAL)
    if policy.inject_delay and migration > 0.0:
        _inject_migration_delay(policy, name, Lane.SERIAL, migration)
        migration = 0.0

    t_start = policy.now_us()
    try:
        result = body()
    except MiniFvError:
        raise
    except Exception as exc:
        raise RuntimeError(f"kernel {name!r} failed: {exc}") from exc
    duration = policy.now_us() - t_start

    ev = TraceEvent(kernel_name=name, lane=Lane.SERIAL, loop_len=0,
                    t_start=t_start, duration=duration,
                    migration_cost=migration, category=category)
    _record(policy, ev)
    return result


_LANE_TID = {Lane.SERIAL: 1, Lane.PARALLEL: 2}


def to_chrome_trace(events):
    """Chrome trace-event JSON: complete ('X') events, serial on tid 1,
    parallel on tid 2."""
    return {
        "traceEvents": [
            {
                "name": ev.kernel_name,
                "ph": "X",
                "ts": ev.t_start,
                "dur": ev.duration,
                "pid": 1,
                "tid": _LANE_TID[ev.lane],
                "args": {"loop_len": ev.loop_len, "migration_us": ev.migration_cost},
            }
            for ev in events
        ]
    }


def write_chrome_trace(events, path):
    with open(path, "w") as fh:
        json.dump(to_chrome_trace(events), fh)
    return path
