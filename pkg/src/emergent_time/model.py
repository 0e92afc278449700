"""Composite environment + system Hamiltonian on a one-dimensional grid.

Units are hbar = 1 throughout. The composite state is stored environment-major:
index ``i * n_sys + a`` for grid point ``i`` and system level ``a``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

DEFAULT_MAX_DIM = 60_000
HERMITIAN_TOL = 1e-12


class ModelError(ValueError):
    pass


class SizeError(ModelError):
    pass


@dataclass(frozen=True)
class Grid:
    r_min: float
    r_max: float
    n_points: int

    @property
    def h(self) -> float:
        return (self.r_max - self.r_min) / (self.n_points - 1)

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.r_min, self.r_max, self.n_points)

    def refined(self, factor: int = 2) -> "Grid":
        """Same interval with the spacing divided by ``factor``."""
        return Grid(self.r_min, self.r_max, (self.n_points - 1) * factor + 1)


POTENTIAL_KINDS = ("free", "constant", "harmonic", "gaussian", "tabulated")


@dataclass(frozen=True, eq=False)
class EnvSpec:
    """Environment mass and potential V_E(R).

    harmonic: 0.5 * M * omega**2 * (R - center)**2
    gaussian: height * exp(-(R - center)**2 / (2 width**2))
    constant: height
    tabulated: cubic interpolation through (table_r, table_v)
    """

    mass: float
    potential: str = "free"
    omega: float = 1.0
    center: float = 0.0
    height: float = 0.0
    width: float = 1.0
    table_r: tuple[float, ...] | None = None
    table_v: tuple[float, ...] | None = None

    def _spline(self) -> CubicSpline:
        return CubicSpline(np.asarray(self.table_r), np.asarray(self.table_v))

    def potential_at(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        kind = self.potential
        if kind == "free":
            return np.zeros_like(r)
        if kind == "constant":
            return np.full_like(r, self.height)
        if kind == "harmonic":
            return 0.5 * self.mass * self.omega**2 * (r - self.center) ** 2
        if kind == "gaussian":
            return self.height * np.exp(-((r - self.center) ** 2) / (2 * self.width**2))
        if kind == "tabulated":
            return self._spline()(r)
        raise ModelError(f"unknown potential kind {kind!r}")

    def potential_derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        kind = self.potential
        if kind in ("free", "constant"):
            return np.zeros_like(r)
        if kind == "harmonic":
            return self.mass * self.omega**2 * (r - self.center)
        if kind == "gaussian":
            return -(r - self.center) / self.width**2 * self.potential_at(r)
        if kind == "tabulated":
            return self._spline()(r, 1)
        raise ModelError(f"unknown potential kind {kind!r}")

    @property
    def is_flat(self) -> bool:
        return self.potential in ("free", "constant")


@dataclass(frozen=True, eq=False)
class SystemSpec:
    h_sys: np.ndarray

    def __post_init__(self):
        a = np.array(self.h_sys, dtype=complex if np.iscomplexobj(self.h_sys) else float)
        a.setflags(write=False)
        object.__setattr__(self, "h_sys", a)

    @classmethod
    def diagonal(cls, energies) -> "SystemSpec":
        return cls(np.diag(np.asarray(energies, dtype=float)))

    @property
    def n_sys(self) -> int:
        return self.h_sys.shape[0]

    def spectrum(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.h_sys)


COUPLING_KINDS = ("none", "linear", "gaussian", "tabulated")


def _default_shape(n: int) -> np.ndarray:
    return np.ones((n, n)) - np.eye(n)


@dataclass(frozen=True, eq=False)
class CouplingSpec:
    """Position-dependent coupling H_ES(R) = envelope(R) * shape.

    linear: strength * (R - center)
    gaussian: strength * exp(-(R - center)**2 / (2 width**2))
    tabulated: ``table_m[i]`` is the full matrix at ``table_r[i]``
    The default shape couples every pair of levels with unit weight
    (sigma_x for two levels).
    """

    kind: str = "none"
    strength: float = 0.0
    width: float = 1.0
    center: float = 0.0
    shape: np.ndarray | None = None
    table_r: np.ndarray | None = None
    table_m: np.ndarray | None = None

    def envelope(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "none":
            return np.zeros_like(r)
        if self.kind == "linear":
            return self.strength * (r - self.center)
        if self.kind == "gaussian":
            return self.strength * np.exp(-((r - self.center) ** 2) / (2 * self.width**2))
        raise ModelError(f"coupling kind {self.kind!r} has no scalar envelope")

    def matrices(self, r, n_sys: int) -> np.ndarray:
        """Coupling matrices, shape ``(len(r), n_sys, n_sys)``."""
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if self.kind == "tabulated":
            tr = np.asarray(self.table_r, dtype=float)
            tm = np.asarray(self.table_m)
            out = CubicSpline(tr, tm.real, axis=0)(r)
            if np.iscomplexobj(tm):
                out = out + 1j * CubicSpline(tr, tm.imag, axis=0)(r)
            return out
        shape = _default_shape(n_sys) if self.shape is None else np.asarray(self.shape)
        return self.envelope(r)[:, None, None] * shape[None, :, :]


@dataclass(frozen=True, eq=False)
class CompositeModel:
    grid: Grid
    env: EnvSpec
    sys: SystemSpec
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    max_dim: int = DEFAULT_MAX_DIM

    @property
    def n_sys(self) -> int:
        return self.sys.n_sys

    @property
    def dim(self) -> int:
        return self.n_sys * self.grid.n_points

    def coupling_at(self, r) -> np.ndarray:
        return self.coupling.matrices(r, self.n_sys)

    def local_hamiltonians(self, r=None) -> np.ndarray:
        """H_S + H_ES(R) at each R (grid points by default)."""
        r = self.grid.points if r is None else np.atleast_1d(r)
        return self.sys.h_sys[None, :, :] + self.coupling_at(r)

    def with_strength(self, strength: float) -> "CompositeModel":
        from dataclasses import replace

        return replace(self, coupling=replace(self.coupling, strength=strength))


def kinetic_operator(grid: Grid, mass: float, stencil: int = 3) -> sp.csr_matrix:
    """Finite-difference -(1/2M) d^2/dR^2 with Dirichlet walls just outside the grid."""
    n, h = grid.n_points, grid.h
    if stencil == 3:
        coeffs = {0: -2.0, 1: 1.0}
        scale = 1.0 / h**2
    elif stencil == 5:
        coeffs = {0: -30.0, 1: 16.0, 2: -1.0}
        scale = 1.0 / (12 * h**2)
    else:
        raise ModelError(f"stencil must be 3 or 5, got {stencil}")
    offsets, diags = [], []
    for k, c in coeffs.items():
        for off in {k, -k}:
            offsets.append(off)
            diags.append(np.full(n - abs(off), c))
    lap = sp.diags(diags, offsets, shape=(n, n), format="csr")
    return (-0.5 / mass * scale) * lap


def environment_hamiltonian(model: CompositeModel, stencil: int = 3) -> sp.csr_matrix:
    k = kinetic_operator(model.grid, model.env.mass, stencil)
    return (k + sp.diags(model.env.potential_at(model.grid.points))).tocsr()


def check_model(model: CompositeModel, allow_small_grid: bool = False) -> None:
    problems = validate_model(model)
    if allow_small_grid:
        problems = [p for p in problems if "below 8" not in p]
    if problems:
        size = [p for p in problems if "exceeds cap" in p]
        if size and len(size) == len(problems):
            raise SizeError(size[0])
        raise ModelError("; ".join(problems))


def assemble_composite(model: CompositeModel, stencil: int = 3) -> sp.csr_matrix:
    """Sparse composite Hamiltonian K(x)1 + V_E(x)1 + 1(x)H_S + diag_R H_ES(R).

    Tiny grids (fewer than 8 points) are assembled anyway so hand-checkable
    cases stay possible; every other invariant violation raises.
    """
    check_model(model, allow_small_grid=True)
    n = model.n_sys
    n_pts = model.grid.n_points
    h_env = environment_hamiltonian(model, stencil)
    blocks = model.local_hamiltonians()
    local = sp.bsr_matrix(
        (blocks, np.arange(n_pts), np.arange(n_pts + 1)), shape=(n_pts * n, n_pts * n)
    )
    h = sp.kron(h_env, sp.identity(n, format="csr"), format="csr") + local.tocsr()
    return h.tocsr()


def _hermitian_residual(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - np.conj(np.swapaxes(a, -1, -2))), initial=0.0))


def validate_model(model: CompositeModel, scattering: bool = False) -> list[str]:
    """List every violated invariant; an empty list means the model is valid."""
    report: list[str] = []
    g = model.grid
    if not (np.isfinite(g.r_min) and np.isfinite(g.r_max)) or not g.r_min < g.r_max:
        report.append("grid r_min not below r_max")
    if g.n_points < 8:
        report.append(f"grid n_points {g.n_points} below 8")

    h_sys = model.sys.h_sys
    if h_sys.ndim != 2 or h_sys.shape[0] != h_sys.shape[1]:
        report.append("system Hamiltonian not square")
        return report
    if h_sys.shape[0] < 2:
        report.append("system dimension below 2")
    if not np.all(np.isfinite(h_sys)):
        report.append("system Hamiltonian not finite")
    elif _hermitian_residual(h_sys) > HERMITIAN_TOL:
        report.append("system Hamiltonian not Hermitian")

    env = model.env
    if not env.mass > 0:
        report.append("environment mass nonpositive")
    if env.potential not in POTENTIAL_KINDS:
        report.append(f"environment potential kind {env.potential!r} unknown")
    elif g.n_points >= 2:
        try:
            if not np.all(np.isfinite(env.potential_at(g.points))):
                report.append("environment potential not finite on grid")
        except Exception as exc:  # tabulated table malformed
            report.append(f"environment potential not evaluable: {exc}")

    if model.coupling.kind not in COUPLING_KINDS:
        report.append(f"coupling kind {model.coupling.kind!r} unknown")
    elif g.n_points >= 2:
        c = model.coupling_at(g.points)
        if c.shape[1:] != h_sys.shape:
            report.append("coupling matrix shape does not match system dimension")
        elif not np.all(np.isfinite(c)):
            report.append("coupling not finite on grid")
        else:
            bad = np.max(np.abs(c - np.conj(np.swapaxes(c, 1, 2))), axis=(1, 2))
            if np.any(bad > HERMITIAN_TOL):
                i = int(np.argmax(bad))
                report.append(f"coupling not Hermitian at R={g.points[i]:.6g}")
            if scattering:
                report.extend(edge_decay_problems(model))

    if model.dim > model.max_dim:
        report.append(f"composite dimension {model.dim} exceeds cap {model.max_dim}")
    return report


def edge_decay_problems(model: CompositeModel, rel_tol: float = 1e-10, fraction: float = 0.1):
    """Check that the coupling is negligible on the outer ``fraction`` of the grid."""
    r = model.grid.points
    norms = np.linalg.norm(model.coupling_at(r), axis=(1, 2), ord=2)
    peak = norms.max()
    if peak == 0.0:
        return []
    n_edge = max(2, int(np.ceil(fraction * len(r))))
    edge = max(norms[:n_edge].max(), norms[-n_edge:].max())
    if edge >= rel_tol * peak:
        return [f"coupling does not decay at grid edges (edge/peak = {edge / peak:.3g})"]
    return []
