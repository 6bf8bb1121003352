"""Structured 2D grids and their owner/neighbour face addressing.

Cells are numbered row-major (cell = j*nx + i).  Internal faces connect each
cell to its east neighbour (cell+1) and north neighbour (cell+nx), stored
sorted by owner then neighbour, so owner < neighbour on every face and the
owner array is non-decreasing: the upper-triangular ordering the sequential
preconditioner sweeps rely on.  Boundary sides are kept as named patches and
folded into matrix diagonals and sources at assembly time; no ghost cells or
boundary faces are stored.
"""

from dataclasses import dataclass, field

import numpy as np


class Addressing:
    """Owner/neighbour face lists plus derived row structures.

    owner must be non-decreasing with owner[f] < neighbour[f] for every face.
    owner_start/losort/losort_start give, per cell, the faces it owns and the
    faces pointing into it (sorted by neighbour), for row-wise products.
    """

    def __init__(self, n_cells, owner, neighbour):
        owner = np.asarray(owner, dtype=np.int64)
        neighbour = np.asarray(neighbour, dtype=np.int64)
        if owner.shape != neighbour.shape:
            raise ValueError("owner/neighbour length mismatch")
        if owner.size and not (owner < neighbour).all():
            raise ValueError("addressing requires owner < neighbour on every face")
        if owner.size and (np.diff(owner) < 0).any():
            raise ValueError("faces must be sorted by owner")
        if owner.size and (neighbour.max() >= n_cells or owner.min() < 0):
            raise ValueError("cell index out of range")
        self.n_cells = int(n_cells)
        self.owner = owner
        self.neighbour = neighbour
        self.owner.setflags(write=False)
        self.neighbour.setflags(write=False)
        cells = np.arange(self.n_cells + 1)
        self.owner_start = np.searchsorted(owner, cells, side="left")
        self.losort = np.argsort(neighbour, kind="stable")
        self.losort_start = np.searchsorted(neighbour[self.losort], cells,
                                            side="left")

    @property
    def n_faces(self):
        return self.owner.size


def chain_addressing(n_cells):
    """1D chain: face f joins cells f and f+1 (handy for solver tests)."""
    idx = np.arange(n_cells - 1, dtype=np.int64)
    return Addressing(n_cells, idx, idx + 1)


@dataclass
class Patch:
    """One boundary side: the cells whose given side touches the boundary."""

    name: str
    side: str                 # west | east | south | north
    cells: np.ndarray
    area: float               # boundary face length per cell
    half_dist: float          # cell centre to wall distance

    def pairs(self):
        return [(int(c), self.side) for c in self.cells]


@dataclass
class Mesh:
    nx: int
    ny: int
    dx: float
    dy: float
    cell_volume: float        # uniform grid: one scalar per mesh
    addressing: Addressing
    face_area: np.ndarray     # per-face edge length
    face_delta: np.ndarray    # centre-to-centre distance across the face
    face_snx: np.ndarray      # signed face area component along x (owner->neighbour)
    face_sny: np.ndarray
    boundary_patches: dict = field(default_factory=dict)
    # Per-cell aggregates of the boundary geometry, used by assembly:
    bnd_sx: np.ndarray = None      # sum of boundary area*normal_x per cell
    bnd_sy: np.ndarray = None
    bnd_two_a_over_d: np.ndarray = None  # sum of 2*area/dist per cell

    @property
    def n_cells(self):
        return self.addressing.n_cells

    @property
    def n_faces(self):
        return self.addressing.n_faces

    @property
    def owner(self):
        return self.addressing.owner

    @property
    def neighbour(self):
        return self.addressing.neighbour

    @property
    def lx(self):
        return self.nx * self.dx

    @property
    def ly(self):
        return self.ny * self.dy

    def cell_index(self, i, j):
        return j * self.nx + i

    def cell_centers(self):
        i = np.arange(self.nx)
        j = np.arange(self.ny)
        x = (i + 0.5) * self.dx
        y = (j + 0.5) * self.dy
        xx, yy = np.meshgrid(x, y)
        return xx.ravel(), yy.ravel()


def build_structured_mesh(nx, ny, lx, ly):
    """Uniform nx-by-ny grid over an lx-by-ly rectangle.

    Raises ValueError for fewer than 2 cells per axis or non-positive
    lengths.
    """
    if nx < 2 or ny < 2:
        raise ValueError(f"need at least 2 cells per axis, got {nx}x{ny}")
    if lx <= 0 or ly <= 0:
        raise ValueError(f"domain lengths must be positive, got {lx}x{ly}")

    dx = lx / nx
    dy = ly / ny
    n_cells = nx * ny

    owner = []
    neighbour = []
    is_x_face = []
    # Cell-by-cell in row-major order; east (c, c+1) before north (c, c+nx)
    # keeps faces sorted by (owner, neighbour) since nx >= 2.
    for j in range(ny):
        for i in range(nx):
            c = j * nx + i
            if i < nx - 1:
                owner.append(c)
                neighbour.append(c + 1)
                is_x_face.append(True)
            if j < ny - 1:
                owner.append(c)
                neighbour.append(c + nx)
                is_x_face.append(False)

    addressing = Addressing(n_cells, owner, neighbour)
    is_x = np.array(is_x_face, dtype=bool)
    face_area = np.where(is_x, dy, dx)
    face_delta = np.where(is_x, dx, dy)
    face_snx = np.where(is_x, dy, 0.0)
    face_sny = np.where(is_x, 0.0, dx)
    for arr in (face_area, face_delta, face_snx, face_sny):
        arr.setflags(write=False)

    i_idx = np.arange(nx)
    j_idx = np.arange(ny)
    patches = {
        "west": Patch("west", "west", (j_idx * nx).astype(np.int64), dy, dx / 2),
        "east": Patch("east", "east", (j_idx * nx + nx - 1).astype(np.int64), dy, dx / 2),
        "south": Patch("south", "south", i_idx.astype(np.int64), dx, dy / 2),
        "north": Patch("north", "north", ((ny - 1) * nx + i_idx).astype(np.int64), dx, dy / 2),
    }

    bnd_sx = np.zeros(n_cells)
    bnd_sy = np.zeros(n_cells)
    bnd_two = np.zeros(n_cells)
    normals = {"west": (-1.0, 0.0), "east": (1.0, 0.0),
               "south": (0.0, -1.0), "north": (0.0, 1.0)}
    for p in patches.values():
        nxc, nyc = normals[p.side]
        np.add.at(bnd_sx, p.cells, p.area * nxc)
        np.add.at(bnd_sy, p.cells, p.area * nyc)
        np.add.at(bnd_two, p.cells, p.area / p.half_dist)
    for arr in (bnd_sx, bnd_sy, bnd_two):
        arr.setflags(write=False)

    return Mesh(nx=nx, ny=ny, dx=dx, dy=dy, cell_volume=dx * dy,
                addressing=addressing, face_area=face_area,
                face_delta=face_delta, face_snx=face_snx, face_sny=face_sny,
                boundary_patches=patches, bnd_sx=bnd_sx, bnd_sy=bnd_sy,
                bnd_two_a_over_d=bnd_two)


def face_cells(mesh, face):
    """The (owner, neighbour) pair of one internal face."""
    if not 0 <= face < mesh.n_faces:
        raise IndexError(f"face {face} out of range [0, {mesh.n_faces})")
    return int(mesh.owner[face]), int(mesh.neighbour[face])
