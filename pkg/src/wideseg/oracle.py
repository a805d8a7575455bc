"""Reference solvers for cross-validation of the variational pipeline.

Two independent oracles: an IMEX time-stepper for the competing-species
parabolic system in original time, and a direct projected-gradient
minimizer of the stationary spatial energy.  Neither shares discretization
choices with the space-time functional beyond the mesh itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import interp1d
from scipy.sparse.linalg import cg, spsolve

from .continuation import hard_segregation, to_original_time
from .functional import _slice_terms, penalty_density, potential_gradient
from .grid import SpaceTimeGrid, StateField
from .model import BoundaryData, SystemSpec
from .optimizer import OptimizerConfig, minimize, node_mass, projected_bb


@dataclass
class ParabolicRun:
    taus: np.ndarray            # (n_steps + 1,) original-time nodes
    values: np.ndarray          # (k, n_steps + 1, *space)
    beta: float
    meta: dict = field(default_factory=dict)


@dataclass
class EllipticResult:
    w: np.ndarray               # (k, *space)
    energy: float
    iters: int
    converged: bool
    pg_norm: float


def _reaction_slope_bound(spec: SystemSpec) -> float:
    """max over species and s in [0, 1] of |f_i'(s)|."""
    out = 0.0
    for r in spec.reactions:
        if r.kind == "cubic":
            out = max(out, r.lam)   # |lam (2s - 3 s^2)| peaks at s = 1
    return out


def _stiffness(grid: SpaceTimeGrid):
    """P1 stiffness matrix on the full node set (boundary rows included)."""
    if grid.dim == 1:
        n = grid.nx + 2
        main = np.full(n, 2.0 / grid.dx)
        main[0] = main[-1] = 1.0 / grid.dx
        off = np.full(n - 1, -1.0 / grid.dx)
        return sp.diags([off, main, off], [-1, 0, 1], format="csr")
    nx, ny = grid.nx + 2, grid.ny + 2

    def line(n, h):
        main = np.full(n, 2.0 / h)
        main[0] = main[-1] = 1.0 / h
        off = np.full(n - 1, -1.0 / h)
        return sp.diags([off, main, off], [-1, 0, 1])

    def lumped(n, h):
        m = np.full(n, h)
        m[0] = m[-1] = 0.5 * h
        return sp.diags(m)

    Kx, Ky = line(nx, grid.dx), line(ny, grid.dy)
    Mx, My = lumped(nx, grid.dx), lumped(ny, grid.dy)
    return (sp.kron(Kx, My) + sp.kron(Mx, Ky)).tocsr()


def step_parabolic(spec: SystemSpec, data: BoundaryData, grid: SpaceTimeGrid,
                   beta: float, dtau: float, n_steps: int) -> ParabolicRun:
    """March the competing-species system with an IMEX scheme.

    Crank-Nicolson for diffusion, explicit reaction, and the penalty's
    diagonal factor implicit so the admissible step is beta-independent;
    values are clipped to [0, 1] after each step.  Lumped-mass P1 in space,
    direct tridiagonal solves in 1-D and conjugate gradients in 2-D.
    """
    slope = _reaction_slope_bound(spec)
    if dtau * slope > 0.5 + 1e-12:
        raise ValueError(
            f"explicit reaction step unstable: dtau * max|f'| = "
            f"{dtau * slope:.3g} > 1/2"
        )
    K = _stiffness(grid)
    m = grid.space_weights.ravel()
    n = m.size
    bnd = grid.boundary_mask.ravel()
    pin = data.pins_dirichlet
    g0 = data.v0.reshape(spec.k, n)[:, bnd]

    v = data.v0.reshape(spec.k, n).copy()
    out = np.empty((spec.k, n_steps + 1, n))
    out[:, 0] = v
    taus = dtau * np.arange(n_steps + 1)
    Mdiag = sp.diags(m)
    base_lhs = Mdiag / dtau + 0.5 * K
    base_rhs_op = Mdiag / dtau - 0.5 * K

    for step in range(n_steps):
        cross = np.einsum("ij,jn->in", spec.A, v * v)   # (k, n)
        fv = spec.f_all(v)
        v_new = np.empty_like(v)
        for i in range(spec.k):
            lhs = base_lhs + beta * sp.diags(m * cross[i])
            rhs = base_rhs_op @ v[i] + m * fv[i]
            if pin:
                lhs = lhs.tolil()
                lhs[bnd, :] = 0.0
                lhs[bnd, np.flatnonzero(bnd)] = 1.0
                lhs = lhs.tocsr()
                rhs = rhs.copy()
                rhs[bnd] = g0[i]
            if grid.dim == 1:
                v_new[i] = spsolve(lhs.tocsc(), rhs)
            else:
                sol, info = cg(lhs, rhs, x0=v[i], rtol=1e-10, maxiter=2000)
                if info != 0:
                    raise RuntimeError(
                        f"CG failed at step {step}, component {i}: "
                        f"info = {info}"
                    )
                v_new[i] = sol
        v = np.clip(v_new, 0.0, 1.0)
        out[:, step + 1] = v

    return ParabolicRun(
        taus=taus,
        values=out.reshape((spec.k, n_steps + 1) + grid.space_shape),
        beta=beta,
        meta={"scheme": "imex-cn", "dtau": dtau, "n_steps": n_steps,
              "dirichlet": pin},
    )


def sample_run(run: ParabolicRun, taus: np.ndarray) -> np.ndarray:
    """Linear-in-time resampling of a parabolic trajectory."""
    f = interp1d(run.taus, run.values, axis=1, kind="linear")
    return f(np.asarray(taus, dtype=float))


def compare_with_minimizer(entries, run: ParabolicRun, taus: np.ndarray,
                           grid: SpaceTimeGrid, slack: float = 1.1) -> dict:
    """L2 discrepancy between minimizers and the parabolic trajectory.

    entries: list of (eps, StateField) in descending eps order.  Reports
    one row per eps and whether the discrepancy decreases along the ladder
    (each entry at most ``slack`` times its predecessor).
    """
    ref = sample_run(run, taus)
    sw = grid.space_weights
    rows = []
    for eps, fld in entries:
        v = to_original_time(fld, eps, taus)
        d2 = np.sum((v - ref) ** 2, axis=0)
        per_tau = np.tensordot(d2, sw, axes=sw.ndim)
        rows.append({
            "eps": eps,
            "discrepancy": float(np.sqrt(np.trapezoid(per_tau, taus))),
        })
    dec = all(
        rows[i + 1]["discrepancy"] <= slack * rows[i]["discrepancy"]
        for i in range(len(rows) - 1)
    )
    return {"rows": rows, "decreasing": bool(dec)}


def elliptic_energy(w: np.ndarray, grid: SpaceTimeGrid, spec: SystemSpec,
                    beta: float) -> float:
    """Spatial energy int { |grad w|^2 - 2 F(w) + (beta/2) <w^2, A w^2> }."""
    D, F, P = _slice_terms(w[:, None], grid, spec, beta)
    return float(D[0] - 2.0 * F[0] + 0.5 * beta * P[0])


def minimize_elliptic(spec: SystemSpec, data: BoundaryData,
                      grid: SpaceTimeGrid, beta: float,
                      config: OptimizerConfig | None = None,
                      support: np.ndarray | None = None) -> EllipticResult:
    """Projected-gradient minimizer of the stationary spatial energy.

    Boundary nodes stay pinned to the trace of v0; the initial iterate is
    v0 itself.  Shares the descent core with the space-time minimizer.
    With ``support`` (a (k, *space) boolean mask), nodes outside the mask
    are held at zero.
    """
    cfg = config or OptimizerConfig()
    bmask = grid.boundary_mask
    mass = np.broadcast_to(
        grid.space_weights, (spec.k,) + grid.space_shape
    ).copy()
    mass[:, bmask] = 0.0
    if support is not None:
        mass[~support] = 0.0
    g0 = data.v0[:, bmask]

    def value_fn(w):
        return elliptic_energy(w, grid, spec, beta)

    def grad_fn(w):
        g = potential_gradient(w[:, None], grid, spec, beta)[:, 0]
        g[:, bmask] = 0.0
        if support is not None:
            g[~support] = 0.0
        return g

    def project_fn(w):
        w = np.clip(w, 0.0, 1.0)
        if support is not None:
            w[~support] = 0.0
        w[:, bmask] = g0
        return w

    L = 8.0 / grid.dx**2
    if grid.dim == 2:
        L += 8.0 / grid.dy**2
    if beta > 0:
        L += 6.0 * beta * float(np.max(np.sum(np.abs(spec.A), axis=1)))
    L += 2.0 * _reaction_slope_bound(spec)

    w, info = projected_bb(
        data.v0.copy(), value_fn, grad_fn, mass, project_fn, cfg, L
    )
    return EllipticResult(
        w=w, energy=info["J"], iters=info["iters"],
        converged=info["converged"], pg_norm=info["pg_norm"],
    )


def spatial_overlap(w: np.ndarray, grid: SpaceTimeGrid,
                    spec: SystemSpec) -> float:
    """int <w^2, A w^2> over the domain."""
    sw = grid.space_weights
    return float(np.tensordot(penalty_density(w, spec.A), sw, axes=sw.ndim))


def elliptic_beta_ladder(spec: SystemSpec, data: BoundaryData,
                         grid: SpaceTimeGrid, betas,
                         config: OptimizerConfig | None = None) -> dict:
    """Stationary minimizers up the penalty ladder, warm-started.

    Reports the overlap per rung, its top/bottom decay ratio, and the
    hard-projected top-rung field.
    """
    cfg = config or OptimizerConfig()
    results = []
    overlaps = []
    warm = data
    for beta in betas:
        res = minimize_elliptic(spec, warm, grid, beta, cfg)
        results.append(res)
        overlaps.append(spatial_overlap(res.w, grid, spec))
        warm = BoundaryData.make(
            np.where(np.abs(res.w) < 1e-300, 0.0, res.w), data.bc_mode
        )
    ratio = overlaps[-1] / overlaps[0] if overlaps[0] > 0 else 0.0
    projected = hard_segregation(results[-1].w[:, None])[:, 0]
    # the segregated limit minimizes the penalty-free energy on the frozen
    # partition; re-minimizing there removes the projection cliff
    refined = minimize_elliptic(
        spec, BoundaryData.make(projected, data.bc_mode), grid, 0.0, cfg,
        support=projected > 0.0,
    )
    w_seg = hard_segregation(refined.w[:, None])[:, 0]
    return {
        "betas": list(betas),
        "results": results,
        "overlaps": overlaps,
        "decay_ratio": float(ratio),
        "w_segregated": w_seg,
        "all_converged": all(r.converged for r in results)
        and refined.converged,
    }


def check_elliptic_equivalence(spec: SystemSpec, data: BoundaryData,
                               grid: SpaceTimeGrid, eps: float, beta: float,
                               config: OptimizerConfig | None = None) -> dict:
    """Space-time minimization with a free initial slice vs the stationary
    minimizer: temporal variation of the former and the L2 gap between its
    time average and the latter."""
    if not (data.pins_dirichlet and not data.pins_initial):
        raise ValueError("elliptic equivalence needs bc_mode='dirichlet_only'")
    cfg = config or OptimizerConfig()
    res = minimize(spec, data, grid, eps, beta, cfg, init="competitor")
    u = res.field.values
    c = grid.node_time_weights
    ubar = np.tensordot(u, c, axes=([1], [0])) / c.sum()   # (k, *space)

    sw = grid.space_weights
    d2 = np.sum((u - ubar[:, None]) ** 2, axis=0)           # (nt, *space)
    var = float(np.sqrt(np.max(np.tensordot(d2, sw, axes=sw.ndim))))

    ell = minimize_elliptic(spec, data, grid, beta, cfg)
    gap2 = np.sum((ubar - ell.w) ** 2, axis=0)
    gap = float(np.sqrt(np.tensordot(gap2, sw, axes=sw.ndim)))
    return {
        "temporal_variation": var,
        "elliptic_gap": gap,
        "space_time": res,
        "elliptic": ell,
        "ubar": ubar,
        "all_converged": bool(res.converged and ell.converged),
    }
