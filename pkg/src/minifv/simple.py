"""Steady SIMPLE pressure-velocity coupling on a lid-driven cavity.

Colocated variables with momentum interpolation: the pressure equation is
built from face-interpolated HbyA fluxes (Rhie-Chow), which suppresses
checkerboarding on the colocated grid.  Convection is first-order upwind on
the face flux, diffusion central.  Walls are no-slip with a moving lid on
the north patch; boundary conditions are folded into matrix diagonals and
sources, so there are no ghost cells and no stored boundary faces (wall
fluxes are identically zero).  Velocity boundary values are constants owned
by the patches and re-enter the matrices at every assembly, which is this
formulation's analog of re-imposing boundary conditions after the explicit
velocity correction.
"""

from dataclasses import dataclass

import numpy as np

from .dispatch import run_kernel, run_serial
from .errors import AssemblyError
from .field import Field, elementwise_ternary, field_scope, reduce_max_abs
from .ldu import LduMatrix, amul, pbicgstab_solve


@dataclass
class SimpleControls:
    nu: float
    lid_velocity: float = 1.0
    relax_u: float = 0.7
    relax_p: float = 0.3
    n_non_orth_correctors: int = 1
    momentum_tol: float = 1e-8
    pressure_tol: float = 1e-7
    max_outer_iters: int = 200
    p_ref_cell: int = 0
    p_ref_value: float = 0.0
    # Inner-solver knobs beyond the core set: loose relative momentum
    # convergence is standard practice; pressure keeps an absolute target so
    # the corrected fluxes satisfy continuity to pressure_tol every step.
    momentum_rel_tol: float = 0.1
    pressure_rel_tol: float = 0.0
    momentum_max_iter: int = 200
    pressure_max_iter: int = 2000
    residual_floor: float = 0.0

    def __post_init__(self):
        if not 0 < self.relax_u <= 1 or not 0 < self.relax_p <= 1:
            raise ValueError("relaxation factors must lie in (0, 1]")
        if self.momentum_tol <= 0 or self.pressure_tol <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.nu < 0:
            raise ValueError("viscosity must be non-negative")


@dataclass
class SimpleState:
    mesh: object
    u: Field
    v: Field
    p: Field
    phi: Field
    rAU: Field
    HbyA_u: Field
    HbyA_v: Field
    phiHbyA: Field = None  # transient between pressure assembly and correct


@dataclass
class IterationReport:
    u_perf: object
    v_perf: object
    p_perf: object
    continuity_max: float
    continuity_normalized: float


def initialize_state(mesh, controls, policy):
    n, m = mesh.n_cells, mesh.n_faces
    state = SimpleState(
        mesh=mesh,
        u=Field.zeros(n, "u", policy=policy),
        v=Field.zeros(n, "v", policy=policy),
        p=Field.zeros(n, "p", policy=policy),
        phi=Field.zeros(m, "phi", policy=policy),
        rAU=Field.zeros(n, "rAU", policy=policy),
        HbyA_u=Field.zeros(n, "HbyA_u", policy=policy),
        HbyA_v=Field.zeros(n, "HbyA_v", policy=policy),
    )
    state.p.values[:] = controls.p_ref_value
    return state


def gauss_gradient(p, mesh, policy, gx, gy, category="assembly"):
    """Cell-centred Gauss gradient with zero-gradient boundary values."""
    addr = mesh.addressing
    own, nb = addr.owner, addr.neighbour
    ostart, lsort, lstart = addr.owner_start, addr.losort, addr.losort_start
    snx, sny = mesh.face_snx, mesh.face_sny
    bsx, bsy = mesh.bnd_sx, mesh.bnd_sy
    inv_vol = 1.0 / mesh.cell_volume
    pv, gxv, gyv = p.values, gx.values, gy.values

    def body(s, e):
        osl = slice(ostart[s], ostart[e])
        lsl = lsort[lstart[s]:lstart[e]]
        pf_own = 0.5 * (pv[own[osl]] + pv[nb[osl]])
        pf_inc = 0.5 * (pv[own[lsl]] + pv[nb[lsl]])
        for gv, sn, bs in ((gxv, snx, bsx), (gyv, sny, bsy)):
            gv[s:e] = np.bincount(own[osl] - s, weights=pf_own * sn[osl],
                                  minlength=e - s)
            gv[s:e] -= np.bincount(nb[lsl] - s, weights=pf_inc * sn[lsl],
                                   minlength=e - s)
            gv[s:e] += pv[s:e] * bs[s:e]
            gv[s:e] *= inv_vol

    run_kernel(f"grad({p.label or 'p'})", mesh.n_cells, policy,
               [p.handle, gx.handle, gy.handle], body, category=category)
    return gx, gy


def _check_face_coeffs(A):
    for arr in (A.lower.values, A.upper.values):
        bad = np.flatnonzero(~np.isfinite(arr))
        if bad.size:
            raise AssemblyError(
                f"non-finite coefficient at face {int(bad[0])}")


def assemble_momentum(state, mesh, controls, policy):
    """Upwind convection + central diffusion with implicit under-relaxation.

    Returns (A, bu, bv); the sources include the -grad(p) term and the
    relaxation compensation around the previous velocity.
    """
    addr = mesh.addressing
    n, nf = mesh.n_cells, mesh.n_faces
    A = LduMatrix(mesh, policy=policy, label="UEqn")
    bu = Field.zeros(n, "bu", policy=policy)
    bv = Field.zeros(n, "bv", policy=policy)

    nu = controls.nu
    area, delta = mesh.face_area, mesh.face_delta
    phiv = state.phi.values
    lo, up, dg = A.lower.values, A.upper.values, A.diag.values
    own, nb = addr.owner, addr.neighbour
    ostart, lsort, lstart = addr.owner_start, addr.losort, addr.losort_start

    def face_body(s, e):
        dcoef = nu * area[s:e] / delta[s:e]
        f = phiv[s:e]
        up[s:e] = np.minimum(f, 0.0) - dcoef
        lo[s:e] = -np.maximum(f, 0.0) - dcoef

    run_kernel("UEqn.faceCoeffs", nf, policy,
               [state.phi.handle, A.lower.handle, A.upper.handle], face_body,
               category="assembly")
    _check_face_coeffs(A)

    b2 = mesh.bnd_two_a_over_d

    def diag_body(s, e):
        osl = slice(ostart[s], ostart[e])
        lsl = lsort[lstart[s]:lstart[e]]
        dcoef_o = nu * area[osl] / delta[osl]
        dcoef_i = nu * area[lsl] / delta[lsl]
        dg[s:e] = np.bincount(own[osl] - s,
                              weights=np.maximum(phiv[osl], 0.0) + dcoef_o,
                              minlength=e - s)
        dg[s:e] += np.bincount(nb[lsl] - s,
                               weights=-np.minimum(phiv[lsl], 0.0) + dcoef_i,
                               minlength=e - s)
        dg[s:e] += nu * b2[s:e]

    run_kernel("UEqn.diag", n, policy,
               [state.phi.handle, A.diag.handle], diag_body,
               category="assembly")

    with field_scope(policy) as fs:
        gx = fs.empty(n, "gradP.x")
        gy = fs.empty(n, "gradP.y")
        gauss_gradient(state.p, mesh, policy, gx, gy)
        vol = mesh.cell_volume
        buv, bvv = bu.values, bv.values
        gxv, gyv = gx.values, gy.values

        def src_body(s, e):
            buv[s:e] = -vol * gxv[s:e]
            bvv[s:e] = -vol * gyv[s:e]

        run_kernel("UEqn.source", n, policy,
                   [gx.handle, gy.handle, bu.handle, bv.handle], src_body,
                   category="assembly")

    north = mesh.boundary_patches["north"]
    lid_coef = nu * north.area / north.half_dist * controls.lid_velocity
    cells = north.cells

    def lid_body():
        buv[cells] += lid_coef

    run_serial("UEqn.lidSource", policy, [bu.handle], lid_body,
               category="assembly")

    # Implicit under-relaxation: diag /= relax with compensation around the
    # previous velocity, applied after the unrelaxed diagonal is complete.
    relax = controls.relax_u
    if relax < 1.0:
        comp = 1.0 / relax - 1.0
        uv, vv = state.u.values, state.v.values

        def relax_body(s, e):
            buv[s:e] += dg[s:e] * comp * uv[s:e]
            bvv[s:e] += dg[s:e] * comp * vv[s:e]
            dg[s:e] *= 1.0 / relax

        run_kernel("UEqn.relax", n, policy,
                   [A.diag.handle, bu.handle, bv.handle,
                    state.u.handle, state.v.handle], relax_body,
                   category="assembly")

    return A, bu, bv


def momentum_predict(state, A, bu, bv, controls, policy):
    """Solve the momentum system per component, then build rAU and HbyA."""
    mesh = state.mesh
    n = mesh.n_cells
    perfs = []
    for comp, b in ((state.u, bu), (state.v, bv)):
        x, perf = pbicgstab_solve(
            A, comp, b, policy, precond="dilu",
            tol=controls.momentum_tol, rel_tol=controls.momentum_rel_tol,
            max_iter=controls.momentum_max_iter)
        comp.values[:] = x.values
        x.release(policy)
        perfs.append(perf)

    rau, dg = state.rAU.values, A.diag.values
    vol = mesh.cell_volume

    def rau_body(s, e):
        # Reciprocal of the volume-normalised diagonal: rows are assembled
        # volume-integrated, so 1/A() is cell_volume/diag.
        rau[s:e] = vol / dg[s:e]

    run_kernel("rAU = 1/UEqn.A", n, policy,
               [A.diag.handle, state.rAU.handle], rau_body,
               category="assembly")

    with field_scope(policy) as fs:
        gx = fs.empty(n, "gradP.x")
        gy = fs.empty(n, "gradP.y")
        gauss_gradient(state.p, mesh, policy, gx, gy)
        for comp, b, g, h in ((state.u, bu, gx, state.HbyA_u),
                              (state.v, bv, gy, state.HbyA_v)):
            wa = fs.empty(n, "wA")
            amul(A, comp, policy, out=wa, category="assembly")
            cv, bvv, gv, hv, wav = (comp.values, b.values, g.values,
                                    h.values, wa.values)

            def hbya_body(s, e, cv=cv, bvv=bvv, gv=gv, hv=hv, wav=wav):
                # H(U): source without the pressure term, minus the
                # off-diagonal action (Amul minus the diagonal part),
                # over the momentum diagonal.
                hv[s:e] = (bvv[s:e] + vol * gv[s:e]
                           - wav[s:e] + dg[s:e] * cv[s:e]) / dg[s:e]

            run_kernel("HbyA = rAU*H(U)", n, policy,
                       [b.handle, g.handle, wa.handle,
                        A.diag.handle, comp.handle, h.handle], hbya_body,
                       category="assembly")

    return perfs[0], perfs[1]


def assemble_pressure(state, mesh, controls, policy):
    """Laplacian(rAU, p) system with the divergence of the interpolated
    HbyA flux as source; the reference cell is pinned."""
    addr = mesh.addressing
    n, nf = mesh.n_cells, mesh.n_faces
    Ap = LduMatrix(mesh, policy=policy, label="pEqn")
    bp = Field.zeros(n, "bp", policy=policy)
    phiH = Field.zeros(nf, "phiHbyA", policy=policy)
    state.phiHbyA = phiH

    own, nb = addr.owner, addr.neighbour
    ostart, lsort, lstart = addr.owner_start, addr.losort, addr.losort_start
    area, delta = mesh.face_area, mesh.face_delta
    snx, sny = mesh.face_snx, mesh.face_sny
    rau = state.rAU.values
    hu, hv = state.HbyA_u.values, state.HbyA_v.values
    lo, up, dg = Ap.lower.values, Ap.upper.values, Ap.diag.values
    phv = phiH.values

    def face_body(s, e):
        o, q = own[s:e], nb[s:e]
        coef = 0.5 * (rau[o] + rau[q]) * area[s:e] / delta[s:e]
        up[s:e] = -coef
        lo[s:e] = -coef
        phv[s:e] = (0.5 * (hu[o] + hu[q]) * snx[s:e]
                    + 0.5 * (hv[o] + hv[q]) * sny[s:e])

    run_kernel("pEqn.faceCoeffs", nf, policy,
               [state.rAU.handle, state.HbyA_u.handle, state.HbyA_v.handle,
                Ap.lower.handle, Ap.upper.handle, phiH.handle], face_body,
               category="assembly")
    _check_face_coeffs(Ap)

    def cell_body(s, e):
        osl = slice(ostart[s], ostart[e])
        lsl = lsort[lstart[s]:lstart[e]]
        dg[s:e] = -np.bincount(own[osl] - s, weights=up[osl],
                               minlength=e - s)
        dg[s:e] -= np.bincount(nb[lsl] - s, weights=lo[lsl],
                               minlength=e - s)
        # bp = -div(phiHbyA): owned faces leave the cell, incoming ones enter
        bp.values[s:e] = -np.bincount(own[osl] - s, weights=phv[osl],
                                      minlength=e - s)
        bp.values[s:e] += np.bincount(nb[lsl] - s, weights=phv[lsl],
                                      minlength=e - s)

    run_kernel("pEqn.diag+source", n, policy,
               [Ap.lower.handle, Ap.upper.handle, Ap.diag.handle,
                phiH.handle, bp.handle], cell_body, category="assembly")

    ref = controls.p_ref_cell
    ref_value = controls.p_ref_value

    def pin_body():
        bp.values[ref] += dg[ref] * ref_value
        dg[ref] += dg[ref]

    run_serial("pEqn.setReference", policy, [Ap.diag.handle, bp.handle],
               pin_body, category="assembly")
    return Ap, bp


def pressure_correct(state, Ap, bp, controls, policy):
    """Solve for p (non-orthogonal corrector loop), reconstruct conservative
    fluxes on the final pass, then under-relax p."""
    mesh = state.mesh
    phiH = state.phiHbyA
    if phiH is None:
        raise RuntimeError("assemble_pressure must run before pressure_correct")

    x = None
    perf = None
    n_corr = max(1, controls.n_non_orth_correctors)
    try:
        for k in range(n_corr):
            guess = state.p if x is None else x
            x_new, perf = pbicgstab_solve(
                Ap, guess, bp, policy, precond="dilu",
                tol=controls.pressure_tol, rel_tol=controls.pressure_rel_tol,
                max_iter=controls.pressure_max_iter)
            if x is not None:
                x.release(policy)
            x = x_new

            if k == n_corr - 1:
                addr = mesh.addressing
                own, nb = addr.owner, addr.neighbour
                up = Ap.upper.values
                phiv, phv, xv = state.phi.values, phiH.values, x.values

                def flux_body(s, e):
                    # phi = phiHbyA - coef*(p_nb - p_own); upper holds -coef
                    phiv[s:e] = phv[s:e] + up[s:e] * (xv[nb[s:e]] - xv[own[s:e]])

                run_kernel("phi = phiHbyA - pEqn.flux", mesh.n_faces, policy,
                           [phiH.handle, Ap.upper.handle, x.handle,
                            state.phi.handle], flux_body, category="assembly")

        relax = controls.relax_p
        pv, xv = state.p.values, x.values

        def relax_body(s, e):
            pv[s:e] += relax * (xv[s:e] - pv[s:e])

        run_kernel("p.relax", mesh.n_cells, policy,
                   [state.p.handle, x.handle], relax_body,
                   category="assembly")
    finally:
        if x is not None:
            x.release(policy)
    return perf


def momentum_correct(state, mesh, policy):
    """Explicit velocity correction u = HbyA - rAU*grad(p) as dispatched
    elementwise kernels."""
    n = mesh.n_cells
    with field_scope(policy) as fs:
        gx = fs.empty(n, "gradP.x")
        gy = fs.empty(n, "gradP.y")
        gauss_gradient(state.p, mesh, policy, gx, gy, category="compute")
        tmp = fs.empty(n, "rAU*gradP")
        for comp, g, h in ((state.u, gx, state.HbyA_u),
                           (state.v, gy, state.HbyA_v)):
            elementwise_ternary(tmp, "=", state.rAU, "*", g, policy)
            elementwise_ternary(comp, "=", h, "-", tmp, policy)
    return state.u, state.v


def continuity_error(state, policy):
    """Max per-cell net face flux magnitude after correction."""
    mesh = state.mesh
    addr = mesh.addressing
    own, nb = addr.owner, addr.neighbour
    ostart, lsort, lstart = addr.owner_start, addr.losort, addr.losort_start
    phiv = state.phi.values
    with field_scope(policy) as fs:
        net = fs.empty(mesh.n_cells, "netFlux")
        netv = net.values

        def body(s, e):
            osl = slice(ostart[s], ostart[e])
            lsl = lsort[lstart[s]:lstart[e]]
            netv[s:e] = np.bincount(own[osl] - s, weights=phiv[osl],
                                    minlength=e - s)
            netv[s:e] -= np.bincount(nb[lsl] - s, weights=phiv[lsl],
                                     minlength=e - s)

        run_kernel("continuity(phi)", mesh.n_cells, policy,
                   [state.phi.handle, net.handle], body, category="assembly")
        return reduce_max_abs(net, policy, category="assembly")


def simple_outer_iteration(state, controls, policy):
    """One predictor/pressure/corrector pass; transients come from and
    return to the policy's buffer pool."""
    mesh = state.mesh
    A, bu, bv = assemble_momentum(state, mesh, controls, policy)
    try:
        u_perf, v_perf = momentum_predict(state, A, bu, bv, controls, policy)
        Ap, bp = assemble_pressure(state, mesh, controls, policy)
        try:
            p_perf = pressure_correct(state, Ap, bp, controls, policy)
        finally:
            bp.release(policy)
            Ap.release(policy)
            if state.phiHbyA is not None:
                state.phiHbyA.release(policy)
                state.phiHbyA = None
        momentum_correct(state, mesh, policy)
    finally:
        bv.release(policy)
        bu.release(policy)
        A.release(policy)

    cont = continuity_error(state, policy)
    return IterationReport(
        u_perf=u_perf, v_perf=v_perf, p_perf=p_perf, continuity_max=cont,
        continuity_normalized=cont / p_perf.norm_factor)


def run_simple(state, controls, policy, n_iters=None):
    """Drive outer iterations until the count or the residual floor."""
    n = n_iters if n_iters is not None else controls.max_outer_iters
    reports = []
    for _ in range(n):
        rep = simple_outer_iteration(state, controls, policy)
        reports.append(rep)
        floor = controls.residual_floor
        if floor > 0:
            worst = max(rep.u_perf.initial_residual,
                        rep.v_perf.initial_residual,
                        rep.p_perf.initial_residual)
            if worst < floor:
                break
    return reports
