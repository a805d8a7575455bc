"""Competition-system definitions: species matrix, reaction families, boundary data.

A system couples k >= 2 species through a symmetric penalty matrix A with
zero diagonal and positive off-diagonal entries.  Each species carries a
reaction family from a small built-in catalogue whose primitives are known
in closed form, so the admissibility conditions (monotone tails, flat
derivative at zero) hold by construction instead of being checked at
runtime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: nodal values below this threshold are treated as exact zeros when
#: checking / enforcing the segregation condition
SEGREGATION_TOL = 1e-14

BC_MODES = ("dirichlet_and_initial", "initial_only", "dirichlet_only")


@dataclass(frozen=True)
class ReactionFamily:
    """One reaction term f and its primitive F.

    ``zero``  : f(s) = 0,               F(s) = 0
    ``cubic`` : f(s) = lam*s^2*(1-s),   F(s) = lam*(s^3/3 - s^4/4)

    Both primitives are non-decreasing on (-inf, 0), non-increasing on
    (1, inf) and have F'(0) = 0, so truncating a field to [0, 1] never
    increases the energy.
    """

    kind: str = "zero"
    lam: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("zero", "cubic"):
            raise ValueError(f"unknown reaction family {self.kind!r}")
        if self.lam < 0:
            raise ValueError("reaction strength lam must be >= 0")

    def f(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(s)
        return self.lam * s * s * (1.0 - s)

    def F(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(s)
        return self.lam * (s**3 / 3.0 - s**4 / 4.0)

    @property
    def F_max(self) -> float:
        """Global maximum of F over the real line (attained at s = 1)."""
        return 0.0 if self.kind == "zero" else self.lam / 12.0


def eval_reaction(family: ReactionFamily, s):
    """Return the pair (f(s), F(s)) for a reaction family."""
    return family.f(s), family.F(s)


@dataclass(frozen=True)
class SystemSpec:
    """Species count, competition matrix and per-species reactions."""

    k: int
    A: np.ndarray
    reactions: tuple[ReactionFamily, ...]

    @staticmethod
    def make(k: int, A, reactions=None) -> "SystemSpec":
        A = np.array(A, dtype=float)
        if reactions is None:
            reactions = tuple(ReactionFamily("zero") for _ in range(k))
        else:
            reactions = tuple(reactions)
        return SystemSpec(k=int(k), A=A, reactions=reactions)

    @property
    def M_bound(self) -> float:
        """2 * sum_i max F_i, the coercivity defect of the potential term."""
        return 2.0 * sum(r.F_max for r in self.reactions)

    def f_all(self, values: np.ndarray) -> np.ndarray:
        """Apply f_i componentwise; values has shape (k, ...)."""
        return np.stack([self.reactions[i].f(values[i]) for i in range(self.k)])

    def F_sum(self, values: np.ndarray) -> np.ndarray:
        """sum_i F_i(v_i), pointwise over the trailing axes."""
        out = np.zeros(values.shape[1:])
        for i in range(self.k):
            out += self.reactions[i].F(values[i])
        return out


def validate_system(spec: SystemSpec) -> list[str]:
    """Check the structural invariants of a SystemSpec.

    Returns a list of human-readable violations; an empty list means ok.
    """
    out: list[str] = []
    if spec.k < 2:
        out.append(f"species count k = {spec.k} must be >= 2")
    A = np.asarray(spec.A)
    if A.shape != (spec.k, spec.k):
        out.append(f"A has shape {A.shape}, expected ({spec.k}, {spec.k})")
        return out
    if not np.allclose(A, A.T):
        out.append("A is not symmetric")
    for i in range(spec.k):
        if A[i, i] != 0.0:
            out.append(f"a_{i+1}{i+1} != 0 (diagonal must vanish)")
    for i in range(spec.k):
        for j in range(i + 1, spec.k):
            if A[i, j] <= 0.0:
                out.append(f"a_{i+1}{j+1} <= 0 (off-diagonal must be positive)")
    if len(spec.reactions) != spec.k:
        out.append(
            f"{len(spec.reactions)} reaction families for {spec.k} species"
        )
    return out


@dataclass(frozen=True)
class BoundaryData:
    """Initial profile v0 and the lateral trace derived from it.

    v0 has shape (k, *spatial nodes) including the boundary nodes; the
    Dirichlet trace is always the restriction of v0 to the spatial
    boundary, never supplied independently.
    """

    v0: np.ndarray
    bc_mode: str

    @staticmethod
    def make(v0, bc_mode: str = "dirichlet_and_initial") -> "BoundaryData":
        if bc_mode not in BC_MODES:
            raise ValueError(f"bc_mode must be one of {BC_MODES}, got {bc_mode!r}")
        v0 = np.array(v0, dtype=float)
        # kill float noise so segregation is exact nodewise
        v0[np.abs(v0) < SEGREGATION_TOL] = 0.0
        v0.setflags(write=False)
        return BoundaryData(v0=v0, bc_mode=bc_mode)

    @property
    def pins_initial(self) -> bool:
        return self.bc_mode in ("dirichlet_and_initial", "initial_only")

    @property
    def pins_dirichlet(self) -> bool:
        return self.bc_mode in ("dirichlet_and_initial", "dirichlet_only")


def validate_boundary(data: BoundaryData, spec: SystemSpec) -> list[str]:
    """Check bounds and pairwise segregation of the initial profile.

    Raises ValueError on a component-count mismatch; invariant violations
    are returned as data.
    """
    v0 = data.v0
    if v0.shape[0] != spec.k:
        raise ValueError(
            f"v0 has {v0.shape[0]} components but the system has k = {spec.k}"
        )
    out: list[str] = []
    if v0.min() < 0.0 or v0.max() > 1.0:
        out.append(
            f"bound 0 <= v0 <= 1 fails (range [{v0.min():.3g}, {v0.max():.3g}])"
        )
    for i in range(spec.k):
        for j in range(i + 1, spec.k):
            prod = np.abs(v0[i] * v0[j])
            if prod.max() > SEGREGATION_TOL:
                out.append(
                    f"segregation fails for components ({i+1}, {j+1}): "
                    f"max overlap {prod.max():.3g}"
                )
    return out


def preset_v0(name: str, x: np.ndarray, k: int) -> np.ndarray:
    """Built-in initial profiles.

    ``x`` is the x-coordinate field (any spatial shape, values in [0, L]);
    profiles vary along x only, which keeps them segregated in 2-D as well.
    """
    x = np.asarray(x, dtype=float)
    L = x.max()
    xi = x / L if L > 0 else x
    if name == "zero":
        return np.zeros((k,) + x.shape)
    if name == "two_ramp":
        if k != 2:
            raise ValueError("two_ramp preset requires k = 2")
        return np.stack([
            np.clip(1.0 - 2.0 * xi, 0.0, None),
            np.clip(2.0 * xi - 1.0, 0.0, None),
        ])
    if name == "k_blocks":
        # one tent per species, supported on its own block of the domain
        comps = []
        for i in range(k):
            center = (2 * i + 1) / (2 * k)
            comps.append(np.clip(1.0 - 2.0 * k * np.abs(xi - center), 0.0, None))
        return np.stack(comps)
    raise ValueError(f"unknown profile preset {name!r}")
