"""Independent reference implementations used as test oracles.

Everything here is deliberately written against plain numpy (dense matrices,
brute-force enumeration, scalar loops) and never calls the library's own
compute paths for the quantity it checks.
"""

import numpy as np


def enumerate_faces_bruteforce(nx, ny):
    """All internal faces of an nx-by-ny grid via pairwise adjacency tests,
    sorted by (owner, neighbour)."""
    def coords(c):
        return c % nx, c // nx

    n_cells = nx * ny
    pairs = []
    for a in range(n_cells):
        for b in range(a + 1, n_cells):
            ia, ja = coords(a)
            ib, jb = coords(b)
            if abs(ia - ib) + abs(ja - jb) == 1:
                pairs.append((a, b))
    pairs.sort()
    return pairs


def to_dense(A):
    """Dense matrix from LDU storage by direct element placement."""
    n = A.addr.n_cells
    dense = np.zeros((n, n))
    dense[np.arange(n), np.arange(n)] = A.diag.values
    for f in range(A.addr.n_faces):
        o = int(A.addr.owner[f])
        q = int(A.addr.neighbour[f])
        dense[o, q] = A.upper.values[f]
        dense[q, o] = A.lower.values[f]
    return dense


def dense_dilu_diagonal(dense):
    """DILU modified diagonal computed on the dense matrix: for ascending j,
    d[j] = A[j,j] - sum over i<j with A[i,j] != 0 of A[j,i]*A[i,j]/d[i]."""
    n = dense.shape[0]
    d = dense.diagonal().copy()
    for j in range(n):
        for i in range(j):
            if dense[i, j] != 0.0:
                d[j] -= dense[j, i] * dense[i, j] / d[i]
    return d


def dense_dilu_solve(dense, r):
    """Apply the DILU preconditioner via a dense (L+D) D^-1 (D+U) solve."""
    d = dense_dilu_diagonal(dense)
    L = np.tril(dense, -1)
    U = np.triu(dense, 1)
    D = np.diag(d)
    M = (L + D) @ np.linalg.inv(D) @ (D + U)
    return np.linalg.solve(M, r)


def random_ldu(addr, rng, dominance=1.5, symmetric=False):
    """Random strictly diagonally dominant LDU coefficients (in place on a
    fresh LduMatrix is the caller's job; this returns raw arrays)."""
    nf = addr.n_faces
    lower = rng.uniform(-1.0, 1.0, nf)
    upper = lower.copy() if symmetric else rng.uniform(-1.0, 1.0, nf)
    row_off = np.zeros(addr.n_cells)
    np.add.at(row_off, addr.owner, np.abs(upper))
    np.add.at(row_off, addr.neighbour, np.abs(lower))
    diag = (row_off + 0.1) * (dominance + rng.uniform(0.0, 1.0, addr.n_cells))
    sign = np.where(rng.uniform(size=addr.n_cells) < 0.5, 1.0, 1.0)
    return diag * sign, lower, upper


def poisson_system(mesh, rng=None):
    """Heat-conduction style 5-point Poisson coefficients on a mesh: face
    coefficient area/delta, Dirichlet walls folded into the diagonal.
    Built straight from mesh geometry, independent of the assembly module."""
    coef = mesh.face_area / mesh.face_delta
    diag = np.zeros(mesh.n_cells)
    np.add.at(diag, mesh.owner, coef)
    np.add.at(diag, mesh.neighbour, coef)
    diag += mesh.bnd_two_a_over_d
    lower = -coef.copy()
    upper = -coef.copy()
    return diag, lower, upper


def variable_poisson_system(mesh):
    """Variable-coefficient 2D Poisson (the laplacian(kappa, p) form the
    pressure equation produces): kappa varies 1..10 over a smooth bump, so
    the diagonal actually varies and Jacobi-type scaling has something to
    do.  On the constant-coefficient 5-point Laplacian the diagonal is
    near-uniform and diagonal preconditioning degenerates to a global
    rescaling."""
    x, y = mesh.cell_centers()
    kappa = 1.0 + 9.0 * np.exp(-((x - 0.3) ** 2 + (y - 0.4) ** 2) / 0.1)
    kf = 0.5 * (kappa[mesh.owner] + kappa[mesh.neighbour])
    coef = kf * mesh.face_area / mesh.face_delta
    diag = np.zeros(mesh.n_cells)
    np.add.at(diag, mesh.owner, coef)
    np.add.at(diag, mesh.neighbour, coef)
    diag += kappa * mesh.bnd_two_a_over_d
    return diag, -coef, -coef.copy()


def dense_matvec_from_addressing(addr, diag, lower, upper, x):
    """Scalar-loop LDU matrix-vector product."""
    y = diag * x
    for f in range(addr.n_faces):
        o = int(addr.owner[f])
        q = int(addr.neighbour[f])
        y[o] += upper[f] * x[q]
        y[q] += lower[f] * x[o]
    return y
