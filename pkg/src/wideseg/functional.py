"""Discrete exponential-weight functional, its gradient, and slice energies.

The functional is

    J(u) = sum_j w_j * (I_j + R_j),

with w_j the exact e^{-t} mass of time cell j, I_j the kinetic slice
integral of the forward time difference, and R_j the trapezoidal average of
the potential slice energy

    eps * ( |grad u|^2 - 2 F(u) + (beta/2) <u^2, A u^2> )

at the two bounding time nodes.  Spatial quadrature is trapezoidal at nodes
for the pointwise terms and cell-midpoint for the gradient term, so the
gradient of the discrete functional is available in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import SpaceTimeGrid, StateField, spatial_gradients
from .model import BoundaryData, SystemSpec
from . import grid as gridmod

#: time cells closer than this to the truncation horizon are excluded from
#: the energy-identity residual (the truncated tail corrupts E there)
HORIZON_GUARD = 7.0


@dataclass
class EnergyTrace:
    """Per-time-cell kinetic (I) and potential (R) integrals, the forward
    exponential energy average E per node, and the functional value J."""

    t: np.ndarray          # (nt,) rescaled time nodes
    I: np.ndarray          # (nt-1,) kinetic integral per time cell
    R: np.ndarray          # (nt-1,) weighted potential integral per cell
    E: np.ndarray          # (nt,)  E_j = e^{t_j} sum_{m>=j} w_m (I_m + R_m)
    J: float


def penalty_density(values: np.ndarray, A: np.ndarray) -> np.ndarray:
    """<v^2, A v^2> pointwise; values has shape (k, ...)."""
    v2 = values * values
    return np.einsum("i...,ij,j...->...", v2, A, v2)


def _time_expand(arr: np.ndarray, n_space_axes: int) -> np.ndarray:
    """Reshape a (nt,)-like array for broadcasting over spatial axes."""
    return arr.reshape(arr.shape + (1,) * n_space_axes)


def _slice_terms(values, grid: SpaceTimeGrid, spec: SystemSpec, beta: float):
    """Dirichlet, reaction and penalty integrals per time slice.

    values: (k, nt, *space).  Returns (D, F, P), each of shape (nt,).
    """
    grads = spatial_gradients(values, grid)
    if grid.dim == 1:
        D = np.sum(grads[0] ** 2, axis=(0, 2)) * grid.dx
    else:
        wy = grid.space_weights[0, :] / grid.dx   # trapezoid weights along y
        wx = grid.space_weights[:, 0] / grid.dy   # trapezoid weights along x
        D = (
            np.einsum("kjpq,q->j", grads[0] ** 2, wy) * grid.dx
            + np.einsum("kjpq,p->j", grads[1] ** 2, wx) * grid.dy
        )
    sw = grid.space_weights
    Fnod = spec.F_sum(values)                     # (nt, *space)
    F = np.tensordot(Fnod, sw, axes=sw.ndim)
    if beta != 0.0:
        P = np.tensordot(penalty_density(values, spec.A), sw, axes=sw.ndim)
    else:
        P = np.zeros(values.shape[1])
    return D, F, P


def slice_potential(field: StateField, eps: float, beta: float) -> np.ndarray:
    """Potential slice energy at every time node, shape (nt,)."""
    D, F, P = _slice_terms(field.values, field.grid, field.spec, beta)
    return eps * (D - 2.0 * F + 0.5 * beta * P)


def _kinetic_cells(field: StateField) -> np.ndarray:
    g = field.grid
    du = (field.values[:, 1:] - field.values[:, :-1]) / g.dt
    sw = g.space_weights
    return np.tensordot(np.sum(du * du, axis=0), sw, axes=sw.ndim)


def eval_J(field: StateField, eps: float, beta: float) -> EnergyTrace:
    """Evaluate the discrete functional and its slice decomposition."""
    g = field.grid
    Rslice = slice_potential(field, eps, beta)
    R = 0.5 * (Rslice[:-1] + Rslice[1:])
    I = _kinetic_cells(field)
    w = g.cell_weights
    cell = w * (I + R)
    J = float(cell.sum())
    E = np.zeros(g.nt)
    E[:-1] = np.exp(g.t[:-1]) * np.cumsum(cell[::-1])[::-1]
    return EnergyTrace(t=g.t, I=I, R=R, E=E, J=J)


def eval_J_value(field: StateField, eps: float, beta: float) -> float:
    """Functional value only (cheaper path for line searches)."""
    g = field.grid
    Rslice = slice_potential(field, eps, beta)
    R = 0.5 * (Rslice[:-1] + Rslice[1:])
    I = _kinetic_cells(field)
    return float(np.dot(g.cell_weights, I + R))


def potential_gradient(u: np.ndarray, g: SpaceTimeGrid, spec: SystemSpec,
                       beta: float) -> np.ndarray:
    """d/du of the per-slice potential D - 2F + (beta/2)P, slicewise.

    u has shape (k, n_slices, *space); the time axis is inert here, so the
    same routine serves space-time slices and purely spatial fields.
    """
    sw = g.space_weights
    grads = spatial_gradients(u, g)
    gpot = np.zeros_like(u)
    if g.dim == 1:
        gx2 = 2.0 * grads[0]          # d(D)/du for D = sum (diff/dx)^2 dx
        gpot[..., :-1] -= gx2
        gpot[..., 1:] += gx2
    else:
        wy = g.space_weights[0, :] / g.dx
        wx = g.space_weights[:, 0] / g.dy
        termx = 2.0 * grads[0] * wy
        gpot[..., :-1, :] -= termx
        gpot[..., 1:, :] += termx
        termy = 2.0 * grads[1] * wx[:, None]
        gpot[..., :, :-1] -= termy
        gpot[..., :, 1:] += termy

    gpot += sw * (-2.0 * spec.f_all(u))
    if beta != 0.0:
        Au2 = np.einsum("ij,j...->i...", spec.A, u * u)
        gpot += sw * (2.0 * beta * u * Au2)
    return gpot


def grad_J(field: StateField, eps: float, beta: float,
           data: BoundaryData) -> np.ndarray:
    """Exact gradient of the discrete functional over free nodes.

    Pinned nodes (initial slice and/or lateral trace, per bc_mode) report 0.
    """
    g = field.grid
    spec = field.spec
    u = field.values
    sw = g.space_weights
    nsp = sw.ndim

    # kinetic part: d/du sum_j w_j sum_x m_x |du_j|^2 / dt^2
    du = (u[:, 1:] - u[:, :-1]) / g.dt
    flux = (2.0 / g.dt) * du * _time_expand(g.cell_weights, nsp) * sw
    out = np.zeros_like(u)
    out[:, :-1] -= flux
    out[:, 1:] += flux

    # potential part: every node j carries coefficient eps * c_j
    gpot = potential_gradient(u, g, spec, beta)
    out += eps * _time_expand(g.node_time_weights, nsp) * gpot

    out[:, ~gridmod.free_mask(g, data)] = 0.0
    return out


def energy_identity_residual(trace: EnergyTrace, guard: float = HORIZON_GUARD):
    """Residual of the forward-average energy law E' + 2I = 0.

    Returns (r, rel, mask): per-cell residual r_j = (E_{j+1}-E_j)/dt + 2 I_j,
    the max interior residual relative to max(1, max_j(I_j + R_j)), and the
    boolean mask of interior cells used.  The first cell and cells within
    ``guard`` of the truncation horizon are excluded (the truncated tail
    corrupts E there).
    """
    t = trace.t
    dt = t[1] - t[0]
    r = (trace.E[1:] - trace.E[:-1]) / dt + 2.0 * trace.I
    mask = np.zeros_like(r, dtype=bool)
    mask[1:] = True
    mask &= t[1:] <= t[-1] - guard
    denom = max(1.0, float(np.max(trace.I + trace.R)))
    rel = float(np.max(np.abs(r[mask])) / denom) if mask.any() else float("nan")
    return r, rel, mask


def competitor_field(data: BoundaryData, grid: SpaceTimeGrid,
                     spec: SystemSpec) -> StateField:
    """Time-constant extension of v0 (segregated, penalty-free)."""
    vals = np.broadcast_to(
        data.v0[:, None], (spec.k, grid.nt) + grid.space_shape
    ).copy()
    return StateField(vals, grid, spec)


def competitor_value(data: BoundaryData, grid: SpaceTimeGrid,
                     spec: SystemSpec, eps: float) -> float:
    """J of the time-constant extension of v0."""
    return eval_J_value(competitor_field(data, grid, spec), eps, beta=0.0)


def slice_estimates(trace: EnergyTrace, eps: float, M: float, volume: float,
                    J_competitor: float, rel_slack: float = 0.02,
                    abs_slack: float = 1e-6) -> dict:
    """Check the level, energy and kinetic-integral bounds on a trace."""
    dt = trace.t[1] - trace.t[0]
    lower = -eps * M * volume
    slack = abs_slack + rel_slack * max(abs(lower), abs(J_competitor))
    level_ok = (trace.J >= lower - slack) and (trace.J <= J_competitor + slack)
    E_lo = lower - slack
    E_hi = trace.J + slack
    E_bound_ok = bool((trace.E >= E_lo).all() and (trace.E <= E_hi).all())
    I_total = float(dt * trace.I.sum())
    I_cap = 0.5 * (J_competitor + eps * M * volume)
    I_integral_ok = I_total <= I_cap + slack
    return {
        "level_ok": bool(level_ok),
        "E_bound_ok": E_bound_ok,
        "I_integral_ok": bool(I_integral_ok),
        "J": trace.J,
        "J_lower": lower,
        "J_competitor": J_competitor,
        "E_max_abs": float(np.max(np.abs(trace.E))),
        "I_total": I_total,
        "I_cap": I_cap,
    }
