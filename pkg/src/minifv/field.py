"""Flat 64-bit float arrays over cells or faces with dispatched bulk ops.

Elementwise operations are bitwise lane-invariant because every output
element depends on exactly one input index.  Reductions accumulate fixed
4096-element chunk partial sums combined in chunk order, so repeated runs are
bitwise identical and serial/parallel lanes agree exactly (worker ranges are
aligned to chunk boundaries).
"""

import numpy as np

from .dispatch import run_kernel
from .memory import BufferHandle

# Reduction chunk size; worker ranges align to it so partial sums are
# identical on either lane.
REDUCE_CHUNK = 4096

# When enabled, elementwise operations raise if they produce NaN/Inf.
CHECK_FINITE = False


class FieldSizeError(ValueError):
    pass


class Field:
    """A fixed-length float64 array plus the handle the ledger tracks."""

    __slots__ = ("handle", "label")

    def __init__(self, handle, label=""):
        self.handle = handle
        self.label = label

    @classmethod
    def zeros(cls, n, label="", policy=None):
        f = cls.empty(n, label=label, policy=policy)
        f.values[:] = 0.0
        return f

    @classmethod
    def empty(cls, n, label="", policy=None):
        if policy is not None:
            handle = policy.pool.acquire(n, 8)
        else:
            handle = BufferHandle.wrap(np.empty(n, dtype=np.float64))
        return cls(handle, label=label)

    @classmethod
    def from_array(cls, values, label=""):
        arr = np.asarray(values, dtype=np.float64)
        return cls(BufferHandle.wrap(arr), label=label)

    @property
    def values(self):
        return self.handle.array

    def __len__(self):
        return self.handle.n_elems

    def __repr__(self):
        return f"Field({self.label or '?'}, len={len(self)})"

    def release(self, policy):
        if self.handle.from_pool:
            policy.pool.release(self.handle)


class field_scope:
    """Context manager that releases every field allocated through it."""

    def __init__(self, policy):
        self.policy = policy
        self._fields = []

    def zeros(self, n, label=""):
        f = Field.zeros(n, label=label, policy=self.policy)
        self._fields.append(f)
        return f

    def empty(self, n, label=""):
        f = Field.empty(n, label=label, policy=self.policy)
        self._fields.append(f)
        return f

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        for f in reversed(self._fields):
            f.release(self.policy)
        return False


def _check_sizes(op_string, *fields):
    sizes = {len(f) for f in fields}
    if len(sizes) != 1:
        raise FieldSizeError(
            f"{op_string}: field sizes differ: {[len(f) for f in fields]}")


def _check_finite(f, name):
    if CHECK_FINITE and not np.isfinite(f.values).all():
        bad = int(np.flatnonzero(~np.isfinite(f.values))[0])
        raise FloatingPointError(
            f"{name}: non-finite value in {f.label or 'field'} at index {bad}")


_OP2 = {"+": np.add, "-": np.subtract, "*": np.multiply}
_OP1 = ("=", "+=", "-=", "*=")


def elementwise_ternary(f1, op1, f2, op2, f3, policy, category="compute"):
    """f1 op1 (f2 op2 f3), dispatched through the cutoff guard.

    op1 is one of =, +=, -=, *= and op2 one of +, -, *.  f1 must not alias
    f2 or f3.  Returns the trace event of the dispatched loop.
    """
    if op1 not in _OP1:
        raise ValueError(f"unsupported op1 {op1!r}")
    if op2 not in _OP2:
        raise ValueError(f"unsupported op2 {op2!r}")
    name = f"{f1.label or 'f1'} {op1} {f2.label or 'f2'} {op2} {f3.label or 'f3'}"
    _check_sizes(name, f1, f2, f3)
    a, b, c = f1.values, f2.values, f3.values
    if a is b or a is c:
        raise ValueError(f"{name}: output field aliases an input field")

    fn = _OP2[op2]
    if op1 == "=":
        def body(s, e):
            fn(b[s:e], c[s:e], out=a[s:e])
    elif op1 == "+=":
        def body(s, e):
            a[s:e] += fn(b[s:e], c[s:e])
    elif op1 == "-=":
        def body(s, e):
            a[s:e] -= fn(b[s:e], c[s:e])
    else:
        def body(s, e):
            a[s:e] *= fn(b[s:e], c[s:e])

    ev = run_kernel(name, len(f1), policy,
                    [f1.handle, f2.handle, f3.handle], body, category=category)
    _check_finite(f1, name)
    return ev


def axpy(da, dx, dy, policy, category="compute"):
    """dy[i] += da * dx[i], dispatched."""
    name = f"{dy.label or 'dy'} += a*{dx.label or 'dx'}"
    _check_sizes(name, dx, dy)
    x, y = dx.values, dy.values

    def body(s, e):
        y[s:e] += da * x[s:e]

    ev = run_kernel(name, len(dy), policy, [dx.handle, dy.handle], body,
                    category=category)
    _check_finite(dy, name)
    return ev


def copy_field(dst, src, policy, category="compute"):
    """dst[i] = src[i], dispatched."""
    name = f"{dst.label or 'dst'} = {src.label or 'src'}"
    _check_sizes(name, dst, src)
    a, b = dst.values, src.values

    def body(s, e):
        a[s:e] = b[s:e]

    return run_kernel(name, len(dst), policy, [dst.handle, src.handle], body,
                      category=category)


def _chunked_reduce(name, fields, chunk_fn, policy, category):
    n = len(fields[0])
    if n < 1:
        raise ValueError(f"{name}: reduction over empty field")
    n_chunks = -(-n // REDUCE_CHUNK)
    partials = np.empty(n_chunks, dtype=np.float64)
    arrays = [f.values for f in fields]

    def body(s, e):
        for k in range(s // REDUCE_CHUNK, -(-e // REDUCE_CHUNK)):
            lo = k * REDUCE_CHUNK
            hi = min(lo + REDUCE_CHUNK, n)
            partials[k] = chunk_fn(arrays, lo, hi)

    run_kernel(name, n, policy, [f.handle for f in fields], body,
               category=category, granularity=REDUCE_CHUNK)
    total = 0.0
    for p in partials:          # combined in chunk order: deterministic
        total += p
    return total


def reduce_sum_abs(f, policy, category="compute"):
    """Sum of |f[i]| with deterministic chunked accumulation."""
    name = f"sumMag({f.label or 'f'})"
    return _chunked_reduce(
        name, [f], lambda a, lo, hi: float(np.abs(a[0][lo:hi]).sum()),
        policy, category)


def reduce_sum(f, policy, category="compute"):
    """Plain sum of f[i] with deterministic chunked accumulation."""
    name = f"sum({f.label or 'f'})"
    return _chunked_reduce(
        name, [f], lambda a, lo, hi: float(a[0][lo:hi].sum()),
        policy, category)


def reduce_dot(f, g, policy, category="compute"):
    """Sum of f[i]*g[i] with deterministic chunked accumulation."""
    name = f"sumProd({f.label or 'f'},{g.label or 'g'})"
    _check_sizes(name, f, g)
    return _chunked_reduce(
        name, [f, g], lambda a, lo, hi: float(np.dot(a[0][lo:hi], a[1][lo:hi])),
        policy, category)


def reduce_max_abs(f, policy, category="compute"):
    """Max of |f[i]| (order-independent, chunked like the sums)."""
    name = f"maxMag({f.label or 'f'})"
    n = len(f)
    if n < 1:
        raise ValueError(f"{name}: reduction over empty field")
    n_chunks = -(-n // REDUCE_CHUNK)
    partials = np.empty(n_chunks, dtype=np.float64)
    arr = f.values

    def body(s, e):
        for k in range(s // REDUCE_CHUNK, -(-e // REDUCE_CHUNK)):
            lo = k * REDUCE_CHUNK
            hi = min(lo + REDUCE_CHUNK, n)
            partials[k] = np.abs(arr[lo:hi]).max()

    run_kernel(name, n, policy, [f.handle], body, category=category,
               granularity=REDUCE_CHUNK)
    return float(partials.max())
