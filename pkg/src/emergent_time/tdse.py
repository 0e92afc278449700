"""Effective time-dependent system equation driven by a classical environment clock."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .model import CompositeModel, edge_decay_problems
from .semiclassical import ClassicalTrajectory, straight_line

NORM_TOL = 1e-10
ASYMMETRY_WARN = 10.0


class TimeRangeError(ValueError):
    pass


class StepSizeError(RuntimeError):
    pass


class NormalizationError(ValueError):
    pass


class WindowError(ValueError):
    pass


class EffectiveHamiltonian:
    """t -> H_S + H_ES(R(t)), with R(t) a cubic interpolant of the trajectory.

    ``u_s`` (callable of R, optional) is the averaged potential; it enters
    only through ``offset`` and ``matrix(t, with_offset=True)``.
    """

    def __init__(self, model: CompositeModel, traj: ClassicalTrajectory, u_s=None):
        if len(traj.t) < 2:
            raise TimeRangeError("trajectory needs at least two samples")
        self.model = model
        self.traj = traj
        self.u_s = u_s
        self.t_min = float(traj.t[0])
        self.t_max = float(traj.t[-1])
        self._r = CubicSpline(traj.t, traj.r)

    @property
    def n_sys(self) -> int:
        return self.model.n_sys

    def position(self, t) -> np.ndarray:
        t_arr = np.asarray(t, dtype=float)
        span = self.t_max - self.t_min
        slack = 1e-12 * max(span, 1.0)
        if np.any(t_arr < self.t_min - slack) or np.any(t_arr > self.t_max + slack):
            raise TimeRangeError(f"t outside the trajectory window [{self.t_min}, {self.t_max}]")
        return self._r(np.clip(t_arr, self.t_min, self.t_max))

    def offset(self, t) -> np.ndarray:
        if self.u_s is None:
            return np.zeros_like(np.asarray(t, dtype=float))
        return np.asarray(self.u_s(self.position(t)), dtype=float)

    def matrix(self, t: float, with_offset: bool = False) -> np.ndarray:
        h = self.model.local_hamiltonians(np.atleast_1d(self.position(t)))[0]
        if with_offset:
            h = h + float(self.offset(t)) * np.eye(self.n_sys)
        return h

    def __call__(self, t: float) -> np.ndarray:
        return self.matrix(t)


def effective_hamiltonian(model: CompositeModel, traj: ClassicalTrajectory, u_s=None):
    return EffectiveHamiltonian(model, traj, u_s)


@dataclass(frozen=True, eq=False)
class PropagationResult:
    """Amplitudes psi~(t) at the sample times with the norm and phase ledgers."""

    t: np.ndarray
    amplitudes: np.ndarray  # (n_t, n_sys)
    populations: np.ndarray
    gauge_phase: np.ndarray  # integral of U_S from t[0]
    norm_defect: np.ndarray
    r: np.ndarray | None = None
    n_steps: int = 0
    n_rejected: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.amplitudes[-1]

    def expectation(self, op: np.ndarray) -> np.ndarray:
        a = self.amplitudes
        return np.real(np.einsum("ti,ij,tj->t", np.conj(a), op, a))


def _step(h: np.ndarray, psi: np.ndarray, dt: float) -> np.ndarray:
    w, v = np.linalg.eigh(h)
    return v @ (np.exp(-1j * w * dt) * (np.conj(v.T) @ psi))


def propagate(
    ham,
    psi0,
    t0: float,
    t1: float,
    tol: float = 1e-10,
    t_eval=None,
    with_offset: bool = False,
    dt0: float | None = None,
    max_steps: int = 2_000_000,
) -> PropagationResult:
    """Midpoint-exponential stepping with step-doubling error control.

    Each trial step is taken once with dt and twice with dt/2; the
    half-step result is kept when the two differ by less than ``tol``.
    ``ham`` is an EffectiveHamiltonian or any callable t -> Hermitian matrix.
    """
    psi = np.asarray(psi0, dtype=complex).copy()
    if abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise NormalizationError(f"initial state norm {np.linalg.norm(psi):.15g}")
    if not t1 > t0:
        raise TimeRangeError("t1 must exceed t0")
    if isinstance(ham, EffectiveHamiltonian):
        ham.position([t0, t1])

        def h_of(t):
            return ham.matrix(t, with_offset)
    else:
        h_of = ham

    span = t1 - t0
    floor = 1e-13 * span
    if t_eval is None:
        targets = None
    else:
        targets = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(targets) <= 0) or targets[0] < t0 or targets[-1] > t1:
            raise TimeRangeError("t_eval must increase inside [t0, t1]")

    ts, amps = [t0], [psi.copy()]
    if targets is not None:
        ts, amps = [], []
        if targets[0] == t0:
            ts.append(t0)
            amps.append(psi.copy())
    next_target = 0 if targets is None else len(ts)

    t = t0
    dt = dt0 if dt0 is not None else span / 100
    n_steps = n_rejected = 0
    while t1 - t > 1e-15 * span:
        dt = min(dt, t1 - t)
        if targets is not None and next_target < len(targets):
            dt = min(dt, targets[next_target] - t)
        full = _step(h_of(t + dt / 2), psi, dt)
        half = _step(h_of(t + dt / 4), psi, dt / 2)
        half = _step(h_of(t + 3 * dt / 4), half, dt / 2)
        err = float(np.linalg.norm(full - half))
        if err <= tol:
            t += dt
            psi = half
            n_steps += 1
            if targets is None:
                ts.append(t)
                amps.append(psi.copy())
            elif next_target < len(targets) and abs(t - targets[next_target]) <= 1e-15 * span:
                t = float(targets[next_target])
                ts.append(t)
                amps.append(psi.copy())
                next_target += 1
            grow = 2.0 if err == 0 else min(2.0, 0.9 * (tol / err) ** (1 / 3))
            dt *= max(grow, 0.2)
        else:
            n_rejected += 1
            dt *= max(0.2, 0.9 * (tol / err) ** (1 / 3))
            if dt < floor:
                raise StepSizeError(f"tolerance {tol:g} not reachable above step floor {floor:g} at t={t:.6g}")
        if n_steps + n_rejected > max_steps:
            raise StepSizeError(f"more than {max_steps} steps")

    amps = np.array(amps)
    t_arr = np.array(ts)
    defect = np.abs(np.linalg.norm(amps, axis=1) - 1.0)
    r = ham.position(t_arr) if isinstance(ham, EffectiveHamiltonian) else None
    return PropagationResult(
        t=t_arr,
        amplitudes=amps,
        populations=np.abs(amps) ** 2,
        gauge_phase=np.zeros_like(t_arr),
        norm_defect=defect,
        r=r,
        n_steps=n_steps,
        n_rejected=n_rejected,
    )


def accumulated_phase(t: np.ndarray, u_s_of_t) -> np.ndarray:
    """phi(t) = integral of U_S from t[0]; ``u_s_of_t`` is a callable or samples at ``t``."""
    t = np.asarray(t, dtype=float)
    if u_s_of_t is None:
        return np.zeros_like(t)
    if callable(u_s_of_t):
        seg = [
            quad(lambda s: float(u_s_of_t(s)), a, b, epsabs=1e-14, epsrel=1e-12, limit=200)[0]
            for a, b in zip(t[:-1], t[1:])
        ]
        return np.concatenate([[0.0], np.cumsum(seg)])
    vals = np.asarray(u_s_of_t, dtype=float)
    if vals.shape != t.shape:
        raise ValueError("tabulated U_S must be sampled at the result times")
    if len(t) < 2:
        return np.zeros_like(t)
    anti = CubicSpline(t, vals).antiderivative()
    return anti(t) - anti(t[0])


def gauge_transform(result: PropagationResult, u_s_of_t, inverse: bool = False) -> PropagationResult:
    """Multiply amplitudes by exp(+i phi(t)), or exp(-i phi(t)) for the inverse.

    Applied to a run that kept U_S in its Hamiltonian this removes the
    averaged potential; the inverse puts it back. Populations are copied,
    not recomputed, so they stay bit-identical.
    """
    phi = accumulated_phase(result.t, u_s_of_t)
    sign = -1.0 if inverse else 1.0
    factor = np.exp(1j * sign * phi)
    return replace(
        result,
        amplitudes=result.amplitudes * factor[:, None],
        gauge_phase=result.gauge_phase + sign * phi,
    )


@dataclass(frozen=True, eq=False)
class ImpactResult:
    probabilities: np.ndarray
    result: PropagationResult
    velocity: float
    kinetic_over_spacing: float
    initial: np.ndarray
    final_basis: np.ndarray


def level_spread(model: CompositeModel) -> float:
    e = model.sys.spectrum()
    return float(e[-1] - e[0])


def impact_parameter_run(
    model: CompositeModel, p_z: float, psi0=0, tol: float = 1e-10
) -> ImpactResult:
    """Straight-line clock Z = (P_Z/M) t across the grid window.

    ``psi0`` is an index into the eigenstates of the local Hamiltonian at
    r_min (ascending) or an explicit amplitude vector in the system basis.
    Returns the final populations in the eigenbasis at r_max.
    """
    problems = edge_decay_problems(model)
    if problems:
        raise WindowError(problems[0])
    mass = model.env.mass
    ratio = p_z**2 / (2 * mass) / level_spread(model)
    if ratio < ASYMMETRY_WARN:
        warnings.warn(f"kinetic/spacing ratio {ratio:.3g} below {ASYMMETRY_WARN:g}", stacklevel=2)
    g = model.grid
    v = p_z / mass
    t_end = (g.r_max - g.r_min) / v
    traj = straight_line(mass, p_z, g.r_min, np.linspace(0.0, t_end, 5))
    ham = EffectiveHamiltonian(model, traj)

    _, v_in = np.linalg.eigh(model.local_hamiltonians(g.r_min)[0])
    _, v_out = np.linalg.eigh(model.local_hamiltonians(g.r_max)[0])
    if np.ndim(psi0) == 0:
        start = v_in[:, int(psi0)].astype(complex)
    else:
        start = np.asarray(psi0, dtype=complex)
    res = propagate(ham, start, 0.0, t_end, tol=tol, dt0=min(t_end, 0.05 / level_spread(model)))
    probs = np.abs(np.conj(v_out.T) @ res.final) ** 2
    return ImpactResult(
        probabilities=probs,
        result=res,
        velocity=v,
        kinetic_over_spacing=ratio,
        initial=start,
        final_basis=v_out,
    )


def first_order_gaussian(strength: float, width: float, velocity: float, gap: float) -> float:
    """|integral of lambda exp(-(vt)^2 / 2 sigma^2) exp(i gap t) dt|^2, first-order transition."""
    return (
        strength**2 * 2 * np.pi * width**2 / velocity**2
        * np.exp(-(gap**2) * width**2 / velocity**2)
    )


def propagation_rows(result: PropagationResult):
    n = result.amplitudes.shape[1]
    header = (
        ["t", "R"]
        + [f"re_{k}" for k in range(n)]
        + [f"im_{k}" for k in range(n)]
        + [f"pop_{k}" for k in range(n)]
        + ["norm_defect", "gauge_phase"]
    )
    r = result.r if result.r is not None else np.full_like(result.t, np.nan)
    pops = result.populations
    rows = []
    for j, t in enumerate(result.t):
        a = result.amplitudes[j]
        rows.append(
            [t, r[j], *a.real, *a.imag, *pops[j], result.norm_defect[j], result.gauge_phase[j]]
        )
    return header, rows
