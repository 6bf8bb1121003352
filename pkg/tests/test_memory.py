import math

import numpy as np
import pytest

from minifv import (BufferHandle, Lane, MigrationProfile, PoolAllocator,
                    ResidencyLedger, profile_summary)
from minifv.dispatch import TraceEvent


# --- pool ---------------------------------------------------------------

def test_threshold_boundaries():
    pool = PoolAllocator(pool_threshold=5000)
    assert pool.acquire(4999).pooled is False
    assert pool.acquire(5000).pooled is False   # strictly "larger than"
    assert pool.acquire(5001).pooled is True


def test_release_then_acquire_same_size_hits():
    pool = PoolAllocator()
    h = pool.acquire(8000)
    pool.release(h)
    h2 = pool.acquire(8000)
    assert h2.pooled
    assert pool.stats["hits"] == 1
    assert pool.stats["misses"] == 1


def test_same_size_class_under_rounding_hits():
    # 8000 and 6000 doubles both round up to the 65536-byte class.
    pool = PoolAllocator()
    h = pool.acquire(8000)
    pool.release(h)
    h2 = pool.acquire(6000)
    assert pool.stats["hits"] == 1
    assert h2.n_elems == 6000
    assert len(h2.array) == 6000


def test_hits_plus_misses_equals_pooled_acquires():
    rng = np.random.default_rng(0)
    pool = PoolAllocator(pool_threshold=100)
    live = []
    pooled_acquires = 0
    for _ in range(300):
        if live and rng.uniform() < 0.5:
            pool.release(live.pop(rng.integers(len(live))))
        else:
            n = int(rng.integers(10, 1000))
            h = pool.acquire(n)
            pooled_acquires += h.pooled
            live.append(h)
    assert pool.stats["hits"] + pool.stats["misses"] == pooled_acquires
    assert pool.stats["acquires"] == pool.stats["releases"] + len(live)


def test_release_non_pooled_counts_but_keeps_freelists():
    pool = PoolAllocator()
    h = pool.acquire(10)
    pool.release(h)
    assert pool.stats["releases"] == 1
    assert all(not v for v in pool.size_classes.values())


def test_double_release_raises():
    pool = PoolAllocator()
    h = pool.acquire(10)
    pool.release(h)
    with pytest.raises(RuntimeError):
        pool.release(h)


def test_foreign_handle_release_raises():
    pool = PoolAllocator()
    with pytest.raises(RuntimeError):
        pool.release(BufferHandle.wrap(np.zeros(4)))


def test_empty_acquire_rejected():
    with pytest.raises(ValueError):
        PoolAllocator().acquire(0)


def test_handle_ids_unique():
    pool = PoolAllocator()
    seen = set()
    for _ in range(5):
        h = pool.acquire(8000)
        assert h.id not in seen
        seen.add(h.id)
        pool.release(h)


def test_peak_bytes_monotone():
    pool = PoolAllocator(pool_threshold=10)
    h1 = pool.acquire(1000)
    peak1 = pool.stats["peak_bytes"]
    h2 = pool.acquire(1000)
    assert pool.stats["peak_bytes"] >= peak1
    pool.release(h1)
    pool.release(h2)
    pool.acquire(1000)
    assert pool.stats["peak_bytes"] == pool.stats["peak_bytes"]


def test_disabled_pool_passthrough():
    pool = PoolAllocator(pool_threshold=None)
    h = pool.acquire(100_000)
    assert h.pooled is False
    pool.release(h)
    assert pool.stats == {"acquires": 1, "hits": 0, "misses": 0,
                          "releases": 1, "peak_bytes": 800_000}


# --- ledger -------------------------------------------------------------

def _handle(n_elems):
    return BufferHandle.wrap(np.zeros(n_elems))


def test_unified_touch_always_free():
    ledger = ResidencyLedger(mode="unified")
    h = _handle(10_000)
    for lane in (Lane.SERIAL, Lane.PARALLEL, Lane.SERIAL, Lane.PARALLEL):
        assert ledger.touch(h, lane) == 0.0
    assert ledger.totals["migration_us"] == 0.0


def test_discrete_first_touch_free_then_flip_charged():
    ledger = ResidencyLedger(mode="discrete", page_bytes=4096,
                             cost_per_page_us=5.0)
    h = _handle(1024)  # 8192 bytes -> 2 pages
    assert ledger.touch(h, Lane.PARALLEL) == 0.0
    assert ledger.touch(h, Lane.PARALLEL) == 0.0
    assert ledger.touch(h, Lane.SERIAL) == 10.0
    assert ledger.touch(h, Lane.PARALLEL) == 10.0
    assert ledger.totals["migration_us"] == 20.0
    assert ledger.totals["migrated_pages"] == 4


def _replay_oracle(sequence, page_bytes, cost_per_page):
    """Direct replay of the first-touch/transfer rule."""
    residency = {}
    total = 0.0
    for handle, lane in sequence:
        prev = residency.get(handle.id)
        if prev is not None and prev != lane:
            total += math.ceil(handle.nbytes / page_bytes) * cost_per_page
        residency[handle.id] = lane
    return total


def test_discrete_cost_matches_replay_oracle():
    rng = np.random.default_rng(99)
    handles = [_handle(int(n)) for n in rng.integers(1, 5000, size=6)]
    sequence = [(handles[int(rng.integers(6))],
                 Lane.SERIAL if rng.uniform() < 0.5 else Lane.PARALLEL)
                for _ in range(200)]
    ledger = ResidencyLedger(mode="discrete", page_bytes=4096,
                             cost_per_page_us=3.0)
    total = sum(ledger.touch(h, lane) for h, lane in sequence)
    assert total == _replay_oracle(sequence, 4096, 3.0)
    assert ledger.totals["migration_us"] == total


def test_alternation_never_decreases_cost():
    rng = np.random.default_rng(17)
    h = _handle(2000)
    base = [(h, Lane.SERIAL if rng.uniform() < 0.5 else Lane.PARALLEL)
            for _ in range(30)]
    for insert_at in (0, 10, 30):
        for lane in (Lane.SERIAL, Lane.PARALLEL):
            longer = base[:insert_at] + [(h, lane)] + base[insert_at:]
            assert (_replay_oracle(longer, 4096, 5.0)
                    >= _replay_oracle(base, 4096, 5.0))


def test_unified_equals_discrete_with_zero_cost():
    rng = np.random.default_rng(4)
    handles = [_handle(3000), _handle(12_000)]
    uni = ResidencyLedger(mode="unified")
    zero = ResidencyLedger(mode="discrete", cost_per_page_us=0.0)
    for _ in range(100):
        h = handles[int(rng.integers(2))]
        lane = Lane.SERIAL if rng.uniform() < 0.5 else Lane.PARALLEL
        assert uni.touch(h, lane) == zero.touch(h, lane) == 0.0
    assert uni.totals["migration_us"] == zero.totals["migration_us"] == 0.0


# --- profile ------------------------------------------------------------

def _event(duration, migration, category="compute"):
    return TraceEvent(kernel_name="k", lane=Lane.SERIAL, loop_len=1,
                      t_start=0.0, duration=duration,
                      migration_cost=migration, category=category)


def test_profile_empty_trace_is_zero():
    prof = profile_summary(ResidencyLedger(), [])
    assert prof.migration_us == 0.0
    assert prof.compute_us == 0.0
    assert prof.migration_fraction == 0.0


def test_profile_fraction_arithmetic():
    prof = profile_summary(ResidencyLedger(mode="discrete"),
                           [_event(35.0, 65.0)])
    assert prof.migration_fraction == pytest.approx(0.65)
    assert prof.as_dict()["migration_fraction"] == pytest.approx(0.65)


def test_profile_skips_visual_migration_events():
    trace = [_event(100.0, 0.0), _event(50.0, 50.0, category="migration")]
    prof = profile_summary(ResidencyLedger(mode="discrete"), trace)
    assert prof.compute_us == 100.0
    assert prof.migration_us == 50.0


def test_migration_profile_fraction_bounds():
    for mig, comp in ((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (3.0, 7.0)):
        frac = MigrationProfile(mig, comp).migration_fraction
        assert 0.0 <= frac <= 1.0
