"""1+1D time-dependent Dirac equation for a two-component spinor on a periodic box.

The only time dependence enters through a ClassicalTrajectory R(t) of the
environment; the coupling is a scalar potential h(x, R) times the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .model import CompositeModel, CouplingSpec, EnvSpec, Grid, SystemSpec
from .semiclassical import ClassicalTrajectory
from .tdse import NormalizationError, StepSizeError, TimeRangeError, accumulated_phase

ALPHA = np.array([[0.0, 1.0], [1.0, 0.0]])
BETA = np.array([[1.0, 0.0], [0.0, -1.0]])


class GridError(ValueError):
    pass


def _check_algebra(alpha, beta, tol=1e-15):
    eye = np.eye(2)
    worst = max(
        np.max(np.abs(alpha @ alpha - eye)),
        np.max(np.abs(beta @ beta - eye)),
        np.max(np.abs(alpha @ beta + beta @ alpha)),
    )
    if worst > tol:
        raise ValueError(f"alpha/beta do not anticommute (residual {worst:.3g})")


@dataclass(frozen=True, eq=False)
class DiracSpec:
    """Light speed, system mass and a periodic x-box.

    The box is [r_min, r_max) with ``n_points`` samples, so the spacing is
    (r_max - r_min) / n_points and r_max itself is not a sample.
    """

    c: float
    mass: float
    grid: Grid

    def __post_init__(self):
        _check_algebra(ALPHA, BETA)
        if not self.c > 0 or not self.mass > 0:
            raise ValueError("c and mass must be positive")
        if self.dx > 1.0 / (4 * self.mass * self.c):
            raise GridError(
                f"spacing {self.dx:.3g} does not resolve the Compton scale 1/(4mc) = "
                f"{1 / (4 * self.mass * self.c):.3g}"
            )

    @property
    def length(self) -> float:
        return self.grid.r_max - self.grid.r_min

    @property
    def n(self) -> int:
        return self.grid.n_points

    @property
    def dx(self) -> float:
        return self.length / self.n

    @property
    def x(self) -> np.ndarray:
        return self.grid.r_min + np.arange(self.n) * self.dx

    @property
    def momenta(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.n, d=self.dx)

    def energy(self, p) -> np.ndarray:
        return np.sqrt((np.asarray(p) * self.c) ** 2 + (self.mass * self.c**2) ** 2)

    def kinetic_propagator(self, dt: float) -> np.ndarray:
        """exp(-i dt (c alpha p + beta m c^2)) per momentum, shape (n, 2, 2)."""
        p = self.momenta
        e = self.energy(p)
        ax, az = self.c * p / e, self.mass * self.c**2 / e
        cs, sn = np.cos(e * dt), np.sin(e * dt)
        u = np.empty((self.n, 2, 2), dtype=complex)
        u[:, 0, 0] = cs - 1j * sn * az
        u[:, 1, 1] = cs + 1j * sn * az
        u[:, 0, 1] = u[:, 1, 0] = -1j * sn * ax
        return u


@dataclass(frozen=True, eq=False)
class SpinorState:
    """Upper (u) and lower (w) components on the periodic x-grid."""

    u: np.ndarray
    w: np.ndarray
    dx: float

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.u) ** 2 + np.abs(self.w) ** 2) * self.dx))

    @property
    def upper_weight(self) -> float:
        return float(np.sum(np.abs(self.u) ** 2) * self.dx)

    @property
    def lower_weight(self) -> float:
        return float(np.sum(np.abs(self.w) ** 2) * self.dx)

    def stacked(self) -> np.ndarray:
        return np.stack([self.u, self.w], axis=1)

    @classmethod
    def from_stacked(cls, psi: np.ndarray, dx: float) -> "SpinorState":
        return cls(u=psi[:, 0].copy(), w=psi[:, 1].copy(), dx=dx)


def positive_energy_spinor(spec: DiracSpec, p: float) -> np.ndarray:
    """Unit eigenvector of c alpha p + beta m c^2 with eigenvalue +E(p)."""
    e = float(spec.energy(p))
    vec = np.array([e + spec.mass * spec.c**2, spec.c * p])
    return vec / np.linalg.norm(vec)


def plane_wave(spec: DiracSpec, mode: int = 0) -> SpinorState:
    """Box-normalized positive-energy plane wave with momentum 2 pi mode / L."""
    p = 2 * np.pi * mode / spec.length
    spinor = positive_energy_spinor(spec, p)
    phase = np.exp(1j * p * spec.x) / np.sqrt(spec.length)
    return SpinorState(u=spinor[0] * phase, w=spinor[1] * phase, dx=spec.dx)


def superpose(a: SpinorState, b: SpinorState, ca: complex, cb: complex) -> SpinorState:
    s = SpinorState(u=ca * a.u + cb * b.u, w=ca * a.w + cb * b.w, dx=a.dx)
    nrm = s.norm
    return SpinorState(u=s.u / nrm, w=s.w / nrm, dx=s.dx)


def velocity_expectation(spec: DiracSpec, state: SpinorState) -> float:
    """<c alpha> = 2 c Re integral conj(u) w dx."""
    if abs(state.norm - 1.0) > 1e-10:
        raise NormalizationError(f"spinor norm {state.norm:.15g}")
    return float(2 * spec.c * np.real(np.sum(np.conj(state.u) * state.w)) * state.dx)


class GaussianCosineCoupling:
    """h(x, R) = lambda exp(-(R - R_c)^2 / 2 sigma^2) cos(q x), a scalar potential."""

    def __init__(self, strength: float, width: float, q: float, center: float = 0.0):
        self.strength = strength
        self.width = width
        self.q = q
        self.center = center

    def envelope(self, r: float) -> float:
        return self.strength * np.exp(-((r - self.center) ** 2) / (2 * self.width**2))

    def __call__(self, x: np.ndarray, r: float) -> np.ndarray:
        return self.envelope(r) * np.cos(self.q * x)


@dataclass(frozen=True, eq=False)
class DiracSeries:
    t: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    norm_defect: np.ndarray
    gauge_phase: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray  # (n_snap, n, 2)
    final: SpinorState
    n_steps: int = 0
    n_rejected: int = 0


def propagate_tdde(
    spec: DiracSpec,
    traj: ClassicalTrajectory,
    coupling,
    psi0: SpinorState,
    window: tuple[float, float] | None = None,
    tol: float = 1e-8,
    snapshot_times=None,
    dt0: float | None = None,
    max_steps: int = 2_000_000,
) -> DiracSeries:
    """Strang split step: half coupling, exact kinetic in momentum space, half coupling.

    The step size is chosen by step doubling so that the local error stays
    below ``tol``. Time enters only through ``traj`` (R(t) by cubic
    interpolation); ``coupling`` is a callable (x, R) -> potential on x, or None.
    """
    if abs(psi0.norm - 1.0) > 1e-10:
        raise NormalizationError(f"initial spinor norm {psi0.norm:.15g}")
    if window is None:
        window = (float(traj.t[0]), float(traj.t[-1]))
    t0, t1 = window
    span = t1 - t0
    slack = 1e-12 * max(abs(span), 1.0)
    if not t1 > t0 or t0 < traj.t[0] - slack or t1 > traj.t[-1] + slack:
        raise TimeRangeError("window not covered by the trajectory")
    r_of = CubicSpline(traj.t, traj.r)
    x = spec.x

    def potential(t):
        if coupling is None:
            return None
        return coupling(x, float(r_of(np.clip(t, traj.t[0], traj.t[-1]))))

    def step(psi, t, dt):
        v0 = potential(t)
        if v0 is not None:
            psi = psi * np.exp(-0.5j * dt * v0)[:, None]
        ph = np.fft.fft(psi, axis=0)
        ph = np.einsum("kij,kj->ki", spec.kinetic_propagator(dt), ph)
        psi = np.fft.ifft(ph, axis=0)
        v1 = potential(t + dt)
        if v1 is not None:
            psi = psi * np.exp(-0.5j * dt * v1)[:, None]
        return psi

    snaps_t = np.array([], dtype=float) if snapshot_times is None else np.asarray(snapshot_times, float)
    if np.any(np.diff(snaps_t) <= 0) or (len(snaps_t) and (snaps_t[0] < t0 or snaps_t[-1] > t1)):
        raise TimeRangeError("snapshot times must increase inside the window")
    psi = psi0.stacked().astype(complex)
    dx = spec.dx

    def weights(p):
        up = float(np.sum(np.abs(p[:, 0]) ** 2) * dx)
        lo = float(np.sum(np.abs(p[:, 1]) ** 2) * dx)
        return up, lo

    ts, ups, los = [t0], [], []
    u, l = weights(psi)
    ups.append(u)
    los.append(l)
    snaps, snap_t = [], []
    j = 0
    if len(snaps_t) and snaps_t[0] == t0:
        snaps.append(psi.copy())
        snap_t.append(t0)
        j = 1

    t = t0
    dt = dt0 if dt0 is not None else min(span / 100, 0.1 / (spec.mass * spec.c**2))
    floor = 1e-13 * span
    n_steps = n_rejected = 0
    while t1 - t > 1e-15 * span:
        dt = min(dt, t1 - t)
        if j < len(snaps_t):
            dt = min(dt, snaps_t[j] - t)
        full = step(psi, t, dt)
        half = step(step(psi, t, dt / 2), t + dt / 2, dt / 2)
        err = float(np.sqrt(np.sum(np.abs(full - half) ** 2) * dx))
        if err <= tol:
            t += dt
            psi = half
            n_steps += 1
            ts.append(t)
            u, l = weights(psi)
            ups.append(u)
            los.append(l)
            if j < len(snaps_t) and abs(t - snaps_t[j]) <= 1e-15 * span:
                snaps.append(psi.copy())
                snap_t.append(snaps_t[j])
                j += 1
            dt *= 2.0 if err == 0 else max(0.2, min(2.0, 0.9 * (tol / err) ** (1 / 3)))
        else:
            n_rejected += 1
            dt *= max(0.2, 0.9 * (tol / err) ** (1 / 3))
            if dt < floor:
                raise StepSizeError(f"tolerance {tol:g} not reachable at t={t:.6g}")
        if n_steps + n_rejected > max_steps:
            raise StepSizeError(f"more than {max_steps} steps")

    ups, los = np.array(ups), np.array(los)
    t_arr = np.array(ts)
    return DiracSeries(
        t=t_arr,
        upper=ups,
        lower=los,
        norm_defect=np.abs(np.sqrt(ups + los) - 1.0),
        gauge_phase=np.zeros_like(t_arr),
        snapshot_times=np.array(snap_t),
        snapshots=np.array(snaps).reshape(len(snaps), spec.n, 2),
        final=SpinorState.from_stacked(psi, dx),
        n_steps=n_steps,
        n_rejected=n_rejected,
    )


def gauge_transform_dirac(series: DiracSeries, u_s_of_t, inverse: bool = False) -> DiracSeries:
    """Phase factor exp(+-i integral U_S dt) on snapshots and final state; densities copied."""
    phi = accumulated_phase(series.t, u_s_of_t)
    sign = -1.0 if inverse else 1.0
    phi_final = phi[-1]
    if len(series.snapshot_times):
        # snapshots are taken on accepted steps, so their times are samples of t
        phi_snap = phi[np.searchsorted(series.t, series.snapshot_times)]
        snaps = series.snapshots * np.exp(1j * sign * phi_snap)[:, None, None]
    else:
        snaps = series.snapshots
    f = np.exp(1j * sign * phi_final)
    final = SpinorState(u=series.final.u * f, w=series.final.w * f, dx=series.final.dx)
    return replace(series, snapshots=snaps, final=final, gauge_phase=series.gauge_phase + sign * phi)


def mode_populations(spec: DiracSpec, state: SpinorState, modes) -> np.ndarray:
    """Upper-component weight in the plane waves exp(2 pi i k x / L) for k in ``modes``."""
    # referenced to x = r_min; a shifted origin only changes phases
    uk = np.fft.fft(state.u) * np.sqrt(spec.length) / spec.n
    idx = np.asarray(modes) % spec.n
    return np.abs(uk[idx]) ** 2


def matched_mode_model(
    spec: DiracSpec,
    coupling: GaussianCosineCoupling,
    env_mass: float,
    r_window: tuple[float, float],
    n_modes: int = 3,
    n_points: int = 64,
) -> tuple[CompositeModel, np.ndarray]:
    """Nonrelativistic counterpart: plane-wave modes k = -K..K as system levels.

    H_S = diag(p_k^2 / 2m); cos(q x) couples neighbouring modes with weight
    1/2 when q is the box's fundamental momentum. Returns the model and the
    mode numbers.
    """
    q0 = 2 * np.pi / spec.length
    step = int(round(coupling.q / q0))
    if step < 1 or abs(step * q0 - coupling.q) > 1e-12 * coupling.q:
        raise ValueError("coupling wave number must be a multiple of the box momentum")
    modes = np.arange(-n_modes, n_modes + 1) * step
    p = modes * q0
    h_sys = SystemSpec.diagonal(p**2 / (2 * spec.mass))
    size = len(modes)
    shape = 0.5 * (np.eye(size, k=1) + np.eye(size, k=-1))
    cpl = CouplingSpec(
        kind="gaussian", strength=coupling.strength, width=coupling.width,
        center=coupling.center, shape=shape,
    )
    grid = Grid(r_window[0], r_window[1], n_points)
    return CompositeModel(grid, EnvSpec(env_mass), h_sys, cpl), modes


def rest_energy_velocity_mismatch(momentum: float, mass: float, c: float) -> float:
    """Relative excess of P/M (clock velocity with E_E = M c^2) over c^2 P / E_E(full)."""
    full = c**2 * momentum / np.sqrt((momentum * c) ** 2 + (mass * c**2) ** 2)
    return float(momentum / mass / full - 1.0)


def dirac_rows(series: DiracSeries):
    header = ["t", "upper", "lower", "norm_defect", "gauge_phase"]
    rows = [
        list(r)
        for r in zip(series.t, series.upper, series.lower, series.norm_defect, series.gauge_phase)
    ]
    return header, rows
