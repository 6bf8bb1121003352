"""Pooled buffer allocation and lane-residency accounting.

Large buffers are recycled through size-classed free lists instead of being
allocated and freed on every use.  A ResidencyLedger tracks which lane last
touched each buffer and charges a simulated per-page transfer cost whenever a
buffer moves between lanes in discrete mode; in unified mode every touch is
free.  Costs are accounted in microseconds, not slept, so the model stays
cheap to evaluate (the dispatcher can optionally inject real delays for demo
timelines).

Only field data (numeric value arrays) is tracked.  Mesh addressing arrays
are treated as device-resident metadata and never charged.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

# Buffers with more elements than this bypass the pool ("larger than 5K").
DEFAULT_POOL_THRESHOLD = 5000
DEFAULT_PAGE_BYTES = 4096
DEFAULT_COST_PER_PAGE_US = 5.0

_handle_ids = itertools.count()


@dataclass
class BufferHandle:
    """A tracked allocation: identity for the ledger plus the backing array."""

    id: int
    n_elems: int
    elem_bytes: int
    pooled: bool
    array: np.ndarray
    from_pool: bool = False
    size_class: int = 0

    @property
    def nbytes(self):
        return self.n_elems * self.elem_bytes

    @staticmethod
    def wrap(array):
        """Wrap an existing array in an untracked (non-pooled) handle."""
        arr = np.ascontiguousarray(array)
        return BufferHandle(
            id=next(_handle_ids),
            n_elems=arr.size,
            elem_bytes=arr.itemsize,
            pooled=False,
            array=arr,
        )


def _size_class(nbytes):
    # Round up to the next power of two so near-sized requests share buffers.
    return 1 << max(0, int(nbytes - 1).bit_length())


class PoolAllocator:
    """Size-classed buffer pool; small requests pass straight through.

    Released pooled buffers are retained on a per-class free list and reused
    by later acquisitions of the same class.  ``stats`` counts ``acquires``
    (all requests), ``hits``/``misses`` (pooled requests only), ``releases``
    and ``peak_bytes`` (high-water mark of memory held by the allocator).
    """

    def __init__(self, pool_threshold=DEFAULT_POOL_THRESHOLD):
        if pool_threshold is None:
            pool_threshold = math.inf
        self.pool_threshold = pool_threshold
        self.size_classes = {}
        self.stats = {"acquires": 0, "hits": 0, "misses": 0, "releases": 0,
                      "peak_bytes": 0}
        self._outstanding = set()
        self._held_bytes = 0

    def acquire(self, n_elems, elem_bytes=8):
        if n_elems < 1:
            raise ValueError(f"cannot acquire empty buffer (n_elems={n_elems})")
        self.stats["acquires"] += 1
        pooled = n_elems > self.pool_threshold
        if pooled:
            cls = _size_class(n_elems * elem_bytes)
            free = self.size_classes.setdefault(cls, [])
            if free:
                raw = free.pop()
                self.stats["hits"] += 1
            else:
                raw = np.empty(cls // elem_bytes, dtype=_dtype_for(elem_bytes))
                self.stats["misses"] += 1
                self._held_bytes += cls
            view = raw[:n_elems]
        else:
            cls = 0
            raw = np.empty(n_elems, dtype=_dtype_for(elem_bytes))
            view = raw
            self._held_bytes += n_elems * elem_bytes
        handle = BufferHandle(
            id=next(_handle_ids),
            n_elems=n_elems,
            elem_bytes=elem_bytes,
            pooled=pooled,
            array=view,
            from_pool=True,
            size_class=cls,
        )
        handle._raw = raw
        self._outstanding.add(handle.id)
        self.stats["peak_bytes"] = max(self.stats["peak_bytes"], self._held_bytes)
        return handle

    def release(self, handle):
        if handle.id not in self._outstanding:
            raise RuntimeError(f"buffer {handle.id} released twice or not from this pool")
        self._outstanding.remove(handle.id)
        self.stats["releases"] += 1
        if handle.pooled:
            self.size_classes[handle.size_class].append(handle._raw)
        else:
            self._held_bytes -= handle.nbytes


def _dtype_for(elem_bytes):
    if elem_bytes == 8:
        return np.float64
    if elem_bytes == 4:
        return np.float32
    return np.dtype(f"V{elem_bytes}")


class ResidencyLedger:
    """Tracks per-buffer lane residency and accumulates migration cost.

    In unified mode nothing is tracked and every touch costs zero.  In
    discrete mode the first touch places the buffer for free; touching it
    from the other lane charges ceil(bytes / page_bytes) * cost_per_page
    microseconds and moves the residency.
    """

    def __init__(self, mode="unified", page_bytes=DEFAULT_PAGE_BYTES,
                 cost_per_page_us=DEFAULT_COST_PER_PAGE_US):
        if mode not in ("unified", "discrete"):
            raise ValueError(f"unknown memory mode {mode!r}")
        self.mode = mode
        self.page_bytes = page_bytes
        self.cost_per_page_us = cost_per_page_us
        self.residency = {}
        self.totals = {"migration_us": 0.0, "migrated_pages": 0, "compute_us": 0.0}

    def pages(self, handle):
        return -(-handle.nbytes // self.page_bytes)

    def touch(self, handle, lane):
        if self.mode == "unified":
            return 0.0
        prev = self.residency.get(handle.id)
        self.residency[handle.id] = lane
        if prev is None or prev == lane:
            return 0.0
        pages = self.pages(handle)
        cost = pages * self.cost_per_page_us
        self.totals["migration_us"] += cost
        self.totals["migrated_pages"] += pages
        return cost

    def add_compute(self, duration_us):
        self.totals["compute_us"] += duration_us


@dataclass
class MigrationProfile:
    migration_us: float = 0.0
    compute_us: float = 0.0

    @property
    def migration_fraction(self):
        total = self.migration_us + self.compute_us
        if total == 0.0:
            return 0.0
        return self.migration_us / total

    def as_dict(self):
        return {
            "migration_us": self.migration_us,
            "compute_us": self.compute_us,
            "migration_fraction": self.migration_fraction,
        }


def profile_summary(ledger, trace):
    """Aggregate a trace into migration vs compute time.

    migration_us sums the per-event migration charges; compute_us sums event
    durations, skipping the purely visual 'migration' events emitted when
    delay injection is on (their cost is already carried by migration_us).
    """
    migration = 0.0
    compute = 0.0
    for ev in trace:
        migration += ev.migration_cost
        if ev.category != "migration":
            compute += ev.duration
    return MigrationProfile(migration_us=migration, compute_us=compute)


def format_profile_table(profiles):
    """Render {label: MigrationProfile} as a small text table."""
    lines = [f"{'device':<12} {'migration %':>12} {'compute %':>12}"]
    for label, prof in profiles.items():
        frac = prof.migration_fraction
        lines.append(f"{label:<12} {100.0 * frac:>12.1f} {100.0 * (1 - frac):>12.1f}")
    return "\n".join(lines)
