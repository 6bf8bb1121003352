"""LDU sparse matrices, DILU preconditioning and the PBiCGStab solver.

A matrix is stored as a diagonal array plus lower/upper face-coefficient
arrays over owner/neighbour addressing: upper[f] is the owner-row coefficient
for the neighbour column, lower[f] the neighbour-row coefficient for the
owner column.  Matrix-vector products and all solver vector updates dispatch
through the cutoff guard; the DILU forward/backward sweeps are sequential by
construction and always run on the serial lane.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .dispatch import run_kernel, run_serial
from .errors import SingularPreconditionerError, SolverBreakdownError
from .field import (Field, FieldSizeError, copy_field, elementwise_ternary,
                    field_scope, reduce_dot, reduce_sum, reduce_sum_abs)

VSMALL = 1e-300


class LduMatrix:
    """diag/lower/upper coefficients over a Mesh or bare Addressing."""

    def __init__(self, mesh_or_addr, policy=None, label="A"):
        addr = getattr(mesh_or_addr, "addressing", mesh_or_addr)
        self.addr = addr
        self.label = label
        self.diag = Field.zeros(addr.n_cells, f"{label}.diag", policy=policy)
        face_policy = policy if addr.n_faces > 0 else None
        self.lower = Field.zeros(max(addr.n_faces, 0), f"{label}.lower",
                                 policy=face_policy)
        self.upper = Field.zeros(max(addr.n_faces, 0), f"{label}.upper",
                                 policy=face_policy)

    @property
    def n_cells(self):
        return self.addr.n_cells

    @property
    def n_faces(self):
        return self.addr.n_faces

    def handles(self):
        return [self.diag.handle, self.lower.handle, self.upper.handle]

    def release(self, policy):
        self.upper.release(policy)
        self.lower.release(policy)
        self.diag.release(policy)


@dataclass
class SolverPerf:
    initial_residual: float
    final_residual: float
    n_iterations: int
    converged: bool
    norm_factor: float


def amul(A, x, policy, out=None, category="solve"):
    """y[c] = diag[c]*x[c] + sum(upper*x[nb]) over owned faces
    + sum(lower*x[own]) over incoming faces.  Cell-parallel kernel."""
    addr = A.addr
    n = addr.n_cells
    if len(x) != n:
        raise FieldSizeError(f"Amul: x has {len(x)} entries for {n} cells")
    y = out if out is not None else Field.empty(n, f"A*{x.label or 'x'}",
                                                policy=policy)
    if len(y) != n:
        raise FieldSizeError(f"Amul: out has {len(y)} entries for {n} cells")
    d, lo, up = A.diag.values, A.lower.values, A.upper.values
    own, nb = addr.owner, addr.neighbour
    ostart, lsort, lstart = addr.owner_start, addr.losort, addr.losort_start
    xv, yv = x.values, y.values

    def body(s, e):
        osl = slice(ostart[s], ostart[e])
        yv[s:e] = d[s:e] * xv[s:e]
        yv[s:e] += np.bincount(own[osl] - s, weights=up[osl] * xv[nb[osl]],
                               minlength=e - s)
        lsl = lsort[lstart[s]:lstart[e]]
        yv[s:e] += np.bincount(nb[lsl] - s, weights=lo[lsl] * xv[own[lsl]],
                               minlength=e - s)

    run_kernel(f"Amul({x.label or 'x'})", n, policy,
               A.handles() + [x.handle, y.handle], body, category=category)
    return y


def norm_factor(A, x, b, policy):
    """Residual normalisation: sum|Ax - Axref| + sum|b - Axref| where Axref
    is A applied to the constant mean-of-x field, floored at 1e-300."""
    n = A.addr.n_cells
    xbar = reduce_sum(x, policy, category="solve") / n
    with field_scope(policy) as fs:
        xref = fs.empty(n, "xref")
        xrefv = xref.values

        def fill(s, e):
            xrefv[s:e] = xbar

        run_kernel("xref = mean(x)", n, policy, [xref.handle], fill,
                   category="solve")
        axref = fs.empty(n, "Axref")
        amul(A, xref, policy, out=axref)
        wa = fs.empty(n, "wA")
        amul(A, x, policy, out=wa)
        tmp = fs.empty(n, "tmp")
        elementwise_ternary(tmp, "=", wa, "-", axref, policy, category="solve")
        s1 = reduce_sum_abs(tmp, policy, category="solve")
        elementwise_ternary(tmp, "=", b, "-", axref, policy, category="solve")
        s2 = reduce_sum_abs(tmp, policy, category="solve")
    return max(s1 + s2, VSMALL)


def diag_precondition(w, r, rD, policy):
    """w[c] = rD[c] * r[c] with rD the reciprocal diagonal; dispatched."""
    elementwise_ternary(w, "=", rD, "*", r, policy, category="solve")
    return w


@njit(cache=True)
def _factor_sweep(rd, lower, upper, owner, neighbour):
    # rd[nb] -= upper*lower/rd[own], faces ascending; owner rows are final
    # when first used because faces are sorted by owner.
    for f in range(owner.shape[0]):
        o = owner[f]
        piv = rd[o]
        if piv == 0.0:
            return o
        rd[neighbour[f]] -= upper[f] * lower[f] / piv
    return -1


@njit(cache=True)
def _forward_sweep(w, rd, lower, owner, neighbour):
    # After the diag stage w = rD*r this yields
    # w[c] = rD[c]*(r[c] - sum lower[f]*w[owner[f]]) in ascending cell order.
    for f in range(owner.shape[0]):
        n = neighbour[f]
        w[n] -= rd[n] * lower[f] * w[owner[f]]


@njit(cache=True)
def _backward_sweep(w, rd, upper, owner, neighbour):
    for f in range(owner.shape[0] - 1, -1, -1):
        o = owner[f]
        w[o] -= rd[o] * upper[f] * w[neighbour[f]]


def dilu_factor(A, policy=None):
    """Reciprocal modified diagonal of the diagonal-based incomplete LU."""
    addr = A.addr
    rD = Field.empty(addr.n_cells, "rD", policy=policy)

    def work():
        rD.values[:] = A.diag.values
        bad = _factor_sweep(rD.values, A.lower.values, A.upper.values,
                            addr.owner, addr.neighbour)
        if bad >= 0:
            raise SingularPreconditionerError(
                f"DILU factorisation hit a zero pivot at cell {bad}")
        zeros = np.flatnonzero(rD.values == 0.0)
        if zeros.size:
            raise SingularPreconditionerError(
                f"DILU factorisation hit a zero pivot at cell {int(zeros[0])}")
        np.reciprocal(rD.values, out=rD.values)

    if policy is not None:
        run_serial("DILU.factor", policy, A.handles() + [rD.handle], work,
                   category="solve")
    else:
        work()
    return rD


def dilu_apply(A, rD, r, policy, out=None):
    """Apply the DILU preconditioner: dispatched diagonal stage w = rD*r,
    then serial forward/backward face sweeps."""
    addr = A.addr
    w = out if out is not None else Field.empty(addr.n_cells, "wA",
                                                policy=policy)
    diag_precondition(w, r, rD, policy)
    own, nb = addr.owner, addr.neighbour

    run_serial("DILU.forward", policy,
               [w.handle, rD.handle, A.lower.handle],
               lambda: _forward_sweep(w.values, rD.values, A.lower.values,
                                      own, nb),
               category="solve")
    run_serial("DILU.backward", policy,
               [w.handle, rD.handle, A.upper.handle],
               lambda: _backward_sweep(w.values, rD.values, A.upper.values,
                                       own, nb),
               category="solve")
    return w


class _IdentityPrecond:
    def __init__(self, A, policy):
        self.policy = policy

    def apply(self, w, r):
        copy_field(w, r, self.policy, category="solve")

    def release(self):
        pass


class _DiagonalPrecond:
    def __init__(self, A, policy):
        self.policy = policy
        self.rD = Field.empty(A.n_cells, "rD", policy=policy)
        d, rd = A.diag.values, self.rD.values

        def body(s, e):
            rd[s:e] = 1.0 / d[s:e]

        run_kernel("rD = 1/A.diag", A.n_cells, policy,
                   [A.diag.handle, self.rD.handle], body, category="solve")

    def apply(self, w, r):
        diag_precondition(w, r, self.rD, self.policy)

    def release(self):
        self.rD.release(self.policy)


class _DILUPrecond:
    def __init__(self, A, policy):
        self.policy = policy
        self.A = A
        self.rD = dilu_factor(A, policy)

    def apply(self, w, r):
        dilu_apply(self.A, self.rD, r, self.policy, out=w)

    def release(self):
        self.rD.release(self.policy)


_PRECONDS = {"none": _IdentityPrecond, "diagonal": _DiagonalPrecond,
             "dilu": _DILUPrecond}


def make_preconditioner(A, kind, policy):
    try:
        return _PRECONDS[kind.lower()](A, policy)
    except KeyError:
        raise ValueError(f"unknown preconditioner {kind!r}; "
                         f"choose from {sorted(_PRECONDS)}") from None


def pbicgstab_solve(A, x0, b, policy, *, precond="dilu", tol=1e-8,
                    rel_tol=0.0, max_iter=1000):
    """Preconditioned BiCGStab on an LDU matrix.

    Converges when the 1-norm residual over the norm factor drops below tol,
    or below rel_tol times its initial value.  Every vector update runs
    through the cutoff-guarded dispatcher.  Raises SolverBreakdownError when
    a recurrence denominator collapses below 1e-300; reaching max_iter
    returns converged=False without error.  x0 is never modified.

    Returns (x, SolverPerf); the reported final residual is recomputed from
    the returned x so it always matches an independent residual evaluation.
    """
    if tol <= 0 and rel_tol <= 0:
        raise ValueError("need tol > 0 or rel_tol > 0")
    n = A.addr.n_cells
    if len(x0) != n or len(b) != n:
        raise FieldSizeError(
            f"solver: x0/b sized {len(x0)}/{len(b)} for {n} cells")

    nf = norm_factor(A, x0, b, policy)
    psi = Field.empty(n, x0.label or "psi", policy=policy)
    try:
        perf = _pbicgstab_iterate(A, x0, b, psi, nf, policy, precond,
                                  tol, rel_tol, max_iter)
    except Exception:
        psi.release(policy)
        raise
    return psi, perf


def _check(res, initial, tol, rel_tol):
    if res <= tol:
        return True
    return rel_tol > 0 and initial > 0 and res / initial <= rel_tol


def _pbicgstab_iterate(A, x0, b, psi, nf, policy, precond, tol, rel_tol,
                       max_iter):
    n = A.addr.n_cells
    with field_scope(policy) as fs:
        copy_field(psi, x0, policy, category="solve")
        wA = fs.empty(n, "wA")
        amul(A, psi, policy, out=wA)
        rA = fs.empty(n, "rA")
        elementwise_ternary(rA, "=", b, "-", wA, policy, category="solve")
        initial = reduce_sum_abs(rA, policy, category="solve") / nf
        final = initial
        n_iter = 0
        converged = initial == 0.0 or _check(initial, initial, tol, rel_tol)

        if not converged:
            pc = make_preconditioner(A, precond, policy)
            try:
                rA0 = fs.empty(n, "rA0")
                copy_field(rA0, rA, policy, category="solve")
                pA = fs.empty(n, "pA")
                yA = fs.empty(n, "yA")
                AyA = fs.empty(n, "AyA")
                sA = fs.empty(n, "sA")
                zA = fs.empty(n, "zA")
                tA = fs.empty(n, "tA")
                alpha = 0.0
                omega = 0.0
                rho_old = 1.0

                for it in range(max_iter):
                    rho = reduce_dot(rA0, rA, policy, category="solve")
                    if abs(rho) < VSMALL:
                        raise SolverBreakdownError(
                            f"BiCGStab breakdown: |rho| < {VSMALL} at "
                            f"iteration {it}", n_iterations=it)
                    if it == 0:
                        copy_field(pA, rA, policy, category="solve")
                    else:
                        if abs(omega) < VSMALL:
                            raise SolverBreakdownError(
                                f"BiCGStab breakdown: |omega| < {VSMALL} at "
                                f"iteration {it}", n_iterations=it)
                        beta = (rho / rho_old) * (alpha / omega)
                        _update_pA(pA, rA, AyA, beta, omega, policy)

                    pc.apply(yA, pA)
                    amul(A, yA, policy, out=AyA)
                    rA0AyA = reduce_dot(rA0, AyA, policy, category="solve")
                    if abs(rA0AyA) < VSMALL:
                        raise SolverBreakdownError(
                            f"BiCGStab breakdown: |rA0.AyA| < {VSMALL} at "
                            f"iteration {it}", n_iterations=it)
                    alpha = rho / rA0AyA
                    _update_sA(sA, rA, AyA, alpha, policy)

                    final = reduce_sum_abs(sA, policy, category="solve") / nf
                    n_iter = it + 1
                    if _check(final, initial, tol, rel_tol):
                        _axpy_kernel(psi, yA, alpha, policy,
                                     "psi += alpha*yA")
                        converged = True
                        break

                    pc.apply(zA, sA)
                    amul(A, zA, policy, out=tA)
                    tAtA = reduce_dot(tA, tA, policy, category="solve")
                    if abs(tAtA) < VSMALL:
                        raise SolverBreakdownError(
                            f"BiCGStab breakdown: |tA.tA| < {VSMALL} at "
                            f"iteration {it}", n_iterations=it)
                    omega = reduce_dot(tA, sA, policy,
                                       category="solve") / tAtA
                    _update_psi(psi, yA, zA, alpha, omega, policy)
                    _update_rA(rA, sA, tA, omega, policy)

                    final = reduce_sum_abs(rA, policy, category="solve") / nf
                    rho_old = rho
                    if _check(final, initial, tol, rel_tol):
                        converged = True
                        break
            finally:
                pc.release()

            # Honest reporting: recompute the residual from the returned x.
            amul(A, psi, policy, out=wA)
            elementwise_ternary(rA, "=", b, "-", wA, policy, category="solve")
            final = reduce_sum_abs(rA, policy, category="solve") / nf

    return SolverPerf(initial_residual=initial, final_residual=final,
                      n_iterations=n_iter, converged=converged,
                      norm_factor=nf)


def _update_pA(pA, rA, AyA, beta, omega, policy):
    p, r, v = pA.values, rA.values, AyA.values

    def body(s, e):
        p[s:e] = r[s:e] + beta * (p[s:e] - omega * v[s:e])

    run_kernel("pA = rA + beta*(pA - omega*AyA)", len(pA), policy,
               [pA.handle, rA.handle, AyA.handle], body, category="solve")


def _update_sA(sA, rA, AyA, alpha, policy):
    s_, r, v = sA.values, rA.values, AyA.values

    def body(s, e):
        s_[s:e] = r[s:e] - alpha * v[s:e]

    run_kernel("sA = rA - alpha*AyA", len(sA), policy,
               [sA.handle, rA.handle, AyA.handle], body, category="solve")


def _axpy_kernel(y, x, a, policy, name):
    yv, xv = y.values, x.values

    def body(s, e):
        yv[s:e] += a * xv[s:e]

    run_kernel(name, len(y), policy, [y.handle, x.handle], body,
               category="solve")


def _update_psi(psi, yA, zA, alpha, omega, policy):
    p, y, z = psi.values, yA.values, zA.values

    def body(s, e):
        p[s:e] += alpha * y[s:e] + omega * z[s:e]

    run_kernel("psi += alpha*yA + omega*zA", len(psi), policy,
               [psi.handle, yA.handle, zA.handle], body, category="solve")


def _update_rA(rA, sA, tA, omega, policy):
    r, s_, t = rA.values, sA.values, tA.values

    def body(s, e):
        r[s:e] = s_[s:e] - omega * t[s:e]

    run_kernel("rA = sA - omega*tA", len(rA), policy,
               [rA.handle, sA.handle, tA.handle], body, category="solve")
