"""Truncated exponential-weight space-time mesh and discrete operators.

Everything lives on the rescaled clock with weight e^{-t}: one grid serves
all values of the regularization parameter, and original-time content is
recovered afterwards by resampling.  Spatial nodes include the two boundary
columns, so Dirichlet data is imposed by pinning nodes rather than through
ghost values; nx still counts interior nodes and dx = Lx/(nx+1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import BoundaryData, SystemSpec


@dataclass
class SpaceTimeGrid:
    dim: int
    nx: int
    Lx: float
    nt: int
    T_r: float
    ny: int = 0
    Ly: float = 0.0
    tail_tol: float = 1e-8

    # derived quantities, filled by build_grid
    dx: float = field(init=False)
    dy: float = field(init=False, default=0.0)
    dt: float = field(init=False)
    x: np.ndarray = field(init=False)
    y: np.ndarray = field(init=False, default=None)
    t: np.ndarray = field(init=False)
    cell_weights: np.ndarray = field(init=False)
    node_time_weights: np.ndarray = field(init=False)
    space_weights: np.ndarray = field(init=False)
    boundary_mask: np.ndarray = field(init=False)
    tail_mass: float = field(init=False)
    tail_ok: bool = field(init=False)

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError("spatial dimension must be 1 or 2")
        if self.nx < 3 or self.nt < 3:
            raise ValueError("nx and nt must both be >= 3")
        if self.T_r <= 0:
            raise ValueError("T_r must be positive")

        self.dx = self.Lx / (self.nx + 1)
        self.dt = self.T_r / (self.nt - 1)
        self.x = np.linspace(0.0, self.Lx, self.nx + 2)
        self.t = np.linspace(0.0, self.T_r, self.nt)

        # exact per-cell integrals of e^{-t}; their sum is 1 - e^{-T_r}
        et = np.exp(-self.t)
        self.cell_weights = et[:-1] - et[1:]
        w = self.cell_weights
        c = np.empty(self.nt)
        c[0] = 0.5 * w[0]
        c[1:-1] = 0.5 * (w[:-1] + w[1:])
        c[-1] = 0.5 * w[-1]
        self.node_time_weights = c

        wx = np.full(self.nx + 2, self.dx)
        wx[0] = wx[-1] = 0.5 * self.dx
        if self.dim == 1:
            self.space_weights = wx
            bmask = np.zeros(self.nx + 2, dtype=bool)
            bmask[0] = bmask[-1] = True
            self.boundary_mask = bmask
        else:
            if self.ny < 3:
                raise ValueError("ny must be >= 3 in 2-D")
            self.dy = self.Ly / (self.ny + 1)
            self.y = np.linspace(0.0, self.Ly, self.ny + 2)
            wy = np.full(self.ny + 2, self.dy)
            wy[0] = wy[-1] = 0.5 * self.dy
            self.space_weights = np.outer(wx, wy)
            bmask = np.zeros((self.nx + 2, self.ny + 2), dtype=bool)
            bmask[0, :] = bmask[-1, :] = True
            bmask[:, 0] = bmask[:, -1] = True
            self.boundary_mask = bmask

        self.tail_mass = float(np.exp(-self.T_r))
        self.tail_ok = self.tail_mass <= self.tail_tol

    @property
    def space_shape(self) -> tuple:
        return self.space_weights.shape

    @property
    def volume(self) -> float:
        return self.Lx if self.dim == 1 else self.Lx * self.Ly

    def x_field(self) -> np.ndarray:
        """x-coordinate at every spatial node, in the spatial shape."""
        if self.dim == 1:
            return self.x
        return np.broadcast_to(self.x[:, None], self.space_shape).copy()

    def metadata(self) -> dict:
        md = {
            "dim": self.dim, "nx": self.nx, "Lx": self.Lx,
            "nt": self.nt, "T_r": self.T_r,
            "dx": self.dx, "dt": self.dt,
            "tail_mass": self.tail_mass, "tail_ok": self.tail_ok,
        }
        if self.dim == 2:
            md.update(ny=self.ny, Ly=self.Ly, dy=self.dy)
        return md


def build_grid(dim, nx, Lx, nt, T_r, ny=None, Ly=None, tail_tol=1e-8) -> SpaceTimeGrid:
    return SpaceTimeGrid(
        dim=dim, nx=nx, Lx=Lx, nt=nt, T_r=T_r,
        ny=ny or 0, Ly=Ly or 0.0, tail_tol=tail_tol,
    )


@dataclass
class StateField:
    """k-component nodal values on a space-time grid, shape (k, nt, *space)."""

    values: np.ndarray
    grid: SpaceTimeGrid
    spec: SystemSpec

    def copy(self) -> "StateField":
        return StateField(self.values.copy(), self.grid, self.spec)


def zeros_field(grid: SpaceTimeGrid, spec: SystemSpec) -> StateField:
    return StateField(
        np.zeros((spec.k, grid.nt) + grid.space_shape), grid, spec
    )


def discrete_time_derivative(field: StateField) -> np.ndarray:
    """Forward differences per time cell, shape (k, nt-1, *space)."""
    u = field.values
    return (u[:, 1:] - u[:, :-1]) / field.grid.dt


def discrete_gradient(field: StateField, j: int) -> list[np.ndarray]:
    """Per-axis forward differences on spatial cells for time slice j."""
    return spatial_gradients(field.values[:, j], field.grid)


def spatial_gradients(values: np.ndarray, grid: SpaceTimeGrid) -> list[np.ndarray]:
    """Cell gradients of nodal values along each spatial axis.

    values may carry arbitrary leading axes; differences act on the
    trailing spatial axes.
    """
    if grid.dim == 1:
        return [np.diff(values, axis=-1) / grid.dx]
    gx = np.diff(values, axis=-2) / grid.dx
    gy = np.diff(values, axis=-1) / grid.dy
    return [gx, gy]


def impose_pins(values: np.ndarray, grid: SpaceTimeGrid, data: BoundaryData) -> None:
    """Overwrite pinned nodes (initial slice / lateral trace) in place."""
    if data.pins_initial:
        values[:, 0] = data.v0
    if data.pins_dirichlet:
        g0 = data.v0[:, grid.boundary_mask]  # (k, nb)
        values[:, :, grid.boundary_mask] = g0[:, None, :]


def project_constraints(field: StateField, data: BoundaryData) -> StateField:
    """Clip to [0, 1] and re-impose the prescribed traces.  Idempotent."""
    v = np.clip(field.values, 0.0, 1.0)
    impose_pins(v, field.grid, data)
    return StateField(v, field.grid, field.spec)


def free_mask(grid: SpaceTimeGrid, data: BoundaryData) -> np.ndarray:
    """Boolean (nt, *space) mask of nodes the optimizer may move."""
    mask = np.ones((grid.nt,) + grid.space_shape, dtype=bool)
    if data.pins_initial:
        mask[0] = False
    if data.pins_dirichlet:
        mask[:, grid.boundary_mask] = False
    return mask
