"""WKB environment states, classical trajectories and the emergent time map."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad, romb, solve_ivp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .model import EnvSpec, Grid

TURNING_EPS = 1e-6


class SemiclassicalError(RuntimeError):
    pass


class NoAllowedRegionError(SemiclassicalError):
    pass


class MotionError(SemiclassicalError):
    pass


class BranchError(SemiclassicalError):
    pass


def effective_potential(env: EnvSpec, u_s=None, grid: Grid | None = None):
    """V_eff = V_E + U_S as ``(value, derivative)`` callables.

    ``u_s`` is either None (bare V_E), a callable, or values tabulated on ``grid``.
    """
    if u_s is None:
        return env.potential_at, env.potential_derivative
    if callable(u_s):
        spline = None
        u_fn = u_s
        du_fn = None
    else:
        if grid is None:
            raise ValueError("a tabulated U_S needs its grid")
        spline = CubicSpline(grid.points, np.asarray(u_s, dtype=float))
        u_fn = spline
        du_fn = spline.derivative()
    if du_fn is None:
        def du_fn(r, _f=u_fn, _d=1e-6):
            return (_f(np.asarray(r) + _d) - _f(np.asarray(r) - _d)) / (2 * _d)

    def v(r):
        return env.potential_at(r) + u_fn(r)

    def dv(r):
        return env.potential_derivative(r) + du_fn(r)

    return v, dv


def cumulative_integral(
    f: Callable, nodes: np.ndarray, rtol: float = 1e-10, max_level: int = 10
) -> tuple[np.ndarray, float]:
    """Integral of ``f`` from ``nodes[0]`` to each node.

    Each interval is integrated with Romberg's rule on 2**k + 1 points; k is
    raised until the largest change relative to the total is below ``rtol``.
    Returns the cumulative values and the last relative change.
    """
    a, b = nodes[:-1], nodes[1:]
    prev = None
    change = np.inf
    for level in range(2, max_level + 1):
        m = 2**level
        s = np.linspace(0.0, 1.0, m + 1)
        pts = a[:, None] + (b - a)[:, None] * s[None, :]
        vals = f(pts)
        seg = romb(vals, dx=1.0 / m, axis=1) * (b - a)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        if prev is not None:
            scale = max(np.max(np.abs(cum)), 1e-300)
            change = float(np.max(np.abs(cum - prev)) / scale)
            if change < rtol:
                return cum, change
        prev = cum
    return prev, change


@dataclass(frozen=True, eq=False)
class WkbState:
    """Lowest-order semiclassical state A(R) exp(i W(R)) with A = P**-1/2.

    ``action`` is measured from ``r0`` (first valid point); ``turning_points``
    are the roots of E - V_eff bracketing the valid branch (nan when absent).
    """

    r: np.ndarray
    energy: float
    mass: float
    momentum: np.ndarray
    action: np.ndarray
    amplitude: np.ndarray
    valid: np.ndarray
    r0: float
    turning_points: tuple[float, float]
    action_offset: float  # W(r0) measured from the left turning point
    quadrature_change: float

    def wavefunction(self) -> np.ndarray:
        return np.where(self.valid, self.amplitude * np.exp(1j * self.action), 0.0)

    def flux(self) -> np.ndarray:
        return np.where(self.valid, self.amplitude**2 * self.momentum, 0.0)

    def standing_wave(self) -> np.ndarray:
        """Real bound-state form 2A cos(W - pi/4) with W counted from the left turning point."""
        if not np.isfinite(self.turning_points[0]):
            raise NoAllowedRegionError("no left turning point for a standing wave")
        w = self.action + self.action_offset
        return np.where(self.valid, 2 * self.amplitude * np.cos(w - np.pi / 4), 0.0)

    def dropped_term_ratio(self) -> float:
        """max |(1/A) dA/dR| / P on the valid mask: size of the discarded amplitude term."""
        p = self.momentum[self.valid]
        r = self.r[self.valid]
        if len(p) < 3:
            return np.nan
        dlogp = np.gradient(np.log(p), r)
        return float(np.max(np.abs(0.5 * dlogp) / p))


def _contiguous(mask: np.ndarray) -> bool:
    idx = np.flatnonzero(mask)
    return len(idx) > 0 and idx[-1] - idx[0] + 1 == len(idx)


def _turning_point(f, lo: float, hi: float) -> float:
    if f(lo) * f(hi) > 0:
        return np.nan
    return brentq(f, lo, hi, xtol=1e-14, rtol=1e-15)


def wkb_wavefunction(
    env: EnvSpec,
    grid: Grid,
    energy: float,
    u_s=None,
    window: tuple[float, float] | None = None,
    eps_turn: float = TURNING_EPS,
    rtol: float = 1e-10,
) -> WkbState:
    v_fn, _ = effective_potential(env, u_s, grid)
    r = grid.points
    kin = energy - v_fn(r)
    scale = max(float(np.max(np.abs(kin))), 1e-300)
    valid = kin > eps_turn * scale
    if window is not None:
        valid &= (r >= window[0]) & (r <= window[1])
    if not valid.any():
        raise NoAllowedRegionError(f"energy {energy} below the potential on the whole window")
    if not _contiguous(valid):
        raise NoAllowedRegionError("allowed region is not a single interval; pass a window")
    idx = np.flatnonzero(valid)
    nodes = r[idx]
    mass = env.mass

    def p_of(x):
        return np.sqrt(np.maximum(2 * mass * (energy - v_fn(x)), 0.0))

    w, change = cumulative_integral(p_of, nodes, rtol=rtol)
    p = np.zeros_like(r)
    p[idx] = p_of(nodes)
    action = np.zeros_like(r)
    action[idx] = w
    amp = np.zeros_like(r)
    amp[idx] = p[idx] ** -0.5

    def kin_fn(x):
        return energy - float(v_fn(np.array(x)))

    forbidden = kin <= 0
    left = right = np.nan
    lo = np.flatnonzero(forbidden & (r < nodes[0]))
    if len(lo):
        left = _turning_point(kin_fn, r[lo[-1]], r[lo[-1] + 1])
    hi = np.flatnonzero(forbidden & (r > nodes[-1]))
    if len(hi):
        right = _turning_point(kin_fn, r[hi[0] - 1], r[hi[0]])
    offset = np.nan
    if np.isfinite(left):
        offset = quad(
            lambda x: float(p_of(np.array(x))), left, nodes[0], epsabs=1e-14, limit=200
        )[0]
    return WkbState(
        r=r,
        energy=float(energy),
        mass=mass,
        momentum=p,
        action=action,
        amplitude=amp,
        valid=valid,
        r0=float(nodes[0]),
        turning_points=(left, right),
        action_offset=offset,
        quadrature_change=change,
    )


@dataclass(frozen=True, eq=False)
class ClassicalTrajectory:
    t: np.ndarray
    r: np.ndarray
    p: np.ndarray
    energy: float
    mass: float
    reference: str  # "bare" (V_E) or "averaged" (V_E + U_S)
    turning: bool
    energy_residual: np.ndarray
    potential: Callable = None

    @property
    def velocity(self) -> np.ndarray:
        return self.p / self.mass


def straight_line(mass: float, momentum: float, r_start: float, t: np.ndarray) -> ClassicalTrajectory:
    """Free motion R = R0 + (P/M) t, exact."""
    t = np.asarray(t, dtype=float)
    r = r_start + momentum / mass * (t - t[0])
    return ClassicalTrajectory(
        t=t,
        r=r,
        p=np.full_like(t, momentum),
        energy=momentum**2 / (2 * mass),
        mass=mass,
        reference="bare",
        turning=False,
        energy_residual=np.zeros_like(t),
        potential=lambda x: np.zeros_like(np.asarray(x, dtype=float)),
    )


def classical_trajectory(
    env: EnvSpec,
    energy: float,
    r_start: float,
    direction: int,
    t_grid,
    u_s=None,
    grid: Grid | None = None,
    rtol: float = 1e-12,
    atol: float = 1e-12,
    stop_at_turning: bool = True,
) -> ClassicalTrajectory:
    """Integrate dR/dt = P/M, dP/dt = -dV_eff/dR from ``t_grid[0]``.

    A turning point (P = 0) ends the trajectory early with ``turning`` set.
    With ``stop_at_turning=False`` the motion continues through turning
    points and ``turning`` only records that one occurred.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    v_fn, dv_fn = effective_potential(env, u_s, grid)
    mass = env.mass
    kin = energy - float(v_fn(np.array(r_start)))
    if kin < 0:
        raise MotionError(f"energy {energy} forbids motion at R={r_start}")
    sign = 1.0 if direction >= 0 else -1.0
    p0 = sign * np.sqrt(2 * mass * kin)
    reference = "bare" if u_s is None else "averaged"

    if u_s is None and env.is_flat:
        traj = straight_line(mass, p0, r_start, t_grid)
        return ClassicalTrajectory(
            t=traj.t, r=traj.r, p=traj.p, energy=float(energy), mass=mass, reference=reference,
            turning=False, energy_residual=traj.p**2 / (2 * mass) + v_fn(traj.r) - energy,
            potential=v_fn,
        )

    def rhs(_t, y):
        return [y[1] / mass, -float(dv_fn(np.array(y[0])))]

    def stop(_t, y):
        return y[1]

    stop.terminal = stop_at_turning
    stop.direction = -sign
    sol = solve_ivp(
        rhs, (t_grid[0], t_grid[-1]), [r_start, p0], method="DOP853",
        t_eval=t_grid, events=stop, rtol=rtol, atol=atol,
    )
    if not sol.success:
        raise MotionError(sol.message)
    r, p = sol.y
    turning = sol.status == 1 or len(sol.t_events[0]) > 0 or bool(np.any(p * sign < 0))
    resid = p**2 / (2 * mass) + v_fn(r) - energy
    return ClassicalTrajectory(
        t=sol.t, r=r, p=p, energy=float(energy), mass=mass, reference=reference,
        turning=turning, energy_residual=resid, potential=v_fn,
    )


class TimeMap:
    """t(R) = t0 + integral of M / P(R') dR' along a monotone branch.

    P(R) comes from energy conservation, not from the stored samples, so the
    map is an independent check of the integrated trajectory.
    """

    def __init__(self, traj: ClassicalTrajectory):
        if traj.turning or np.any(np.sign(traj.p) != np.sign(traj.p[0])) or traj.p[0] == 0:
            raise BranchError("trajectory is not a monotone branch")
        self.traj = traj
        self.sign = float(np.sign(traj.p[0]))
        self.r_lo = float(np.min(traj.r))
        self.r_hi = float(np.max(traj.r))

    def _inv_velocity(self, x: float) -> float:
        tr = self.traj
        kin = tr.energy - float(tr.potential(np.array(x)))
        return tr.mass / (self.sign * np.sqrt(2 * tr.mass * kin))

    def __call__(self, r):
        r_arr = np.atleast_1d(np.asarray(r, dtype=float))
        span = self.r_hi - self.r_lo
        slack = 1e-12 * max(span, 1.0)
        if np.any(r_arr < self.r_lo - slack) or np.any(r_arr > self.r_hi + slack):
            raise BranchError("R outside the traversed branch")
        r0 = self.traj.r[0]
        out = np.array(
            [quad(self._inv_velocity, r0, x, epsabs=1e-13, epsrel=1e-13, limit=200)[0] for x in r_arr]
        )
        out += self.traj.t[0]
        return out if np.ndim(r) else float(out[0])


def time_map(traj: ClassicalTrajectory) -> TimeMap:
    return TimeMap(traj)


def wkb_rows(state: WkbState):
    header = ["R", "P", "W", "A", "valid"]
    rows = [
        [r, p, w, a, int(v)]
        for r, p, w, a, v in zip(state.r, state.momentum, state.action, state.amplitude, state.valid)
    ]
    return header, rows


def trajectory_rows(traj: ClassicalTrajectory):
    header = ["t", "R", "P", "E_residual"]
    return header, [list(x) for x in zip(traj.t, traj.r, traj.p, traj.energy_residual)]
