"""End-to-end ladders combining the exact and emergent pictures."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .adiabatic import adiabatic_states
from .analysis import ComparisonReport, compare_exact_vs_emergent, convergence_ladder
from .exact_solver import solve_close_coupling, solve_env_single_channel
from .model import CompositeModel, CouplingSpec, EnvSpec, Grid, SystemSpec
from .relativistic import (
    DiracSpec,
    GaussianCosineCoupling,
    matched_mode_model,
    mode_populations,
    plane_wave,
    propagate_tdde,
)
from .semiclassical import straight_line, wkb_wavefunction
from .tdse import EffectiveHamiltonian, impact_parameter_run, propagate


def beam_model(mass=2000.0, gap=1.0, strength=0.5, width=0.15, half_width=3.0, n_points=6001):
    """Free beam environment crossing a Gaussian coupling that flips a two-level system."""
    return CompositeModel(
        Grid(-half_width, half_width, n_points),
        EnvSpec(mass),
        SystemSpec.diagonal([0.0, gap]),
        CouplingSpec("gaussian", strength, width),
    )


def oscillator_grid_ladder(n_points=(101, 201, 401, 801), half_width=8.0, omega=1.0, mass=1.0):
    """Ground-level error of the three-point harmonic oscillator against (n + 1/2) omega."""
    sys = SystemSpec.diagonal([0.0, 1.0])

    def run(n):
        m = CompositeModel(Grid(-half_width, half_width, int(n)), EnvSpec(mass, "harmonic", omega), sys)
        st = solve_env_single_channel(m, adiabatic_states(m), 0, 1)[0]
        return abs(st.energy - 0.5 * omega)

    g = [Grid(-half_width, half_width, int(n)).h for n in n_points]
    rows = convergence_ladder(list(n_points), run)
    return g, rows


@dataclass(frozen=True)
class WkbRung:
    mass: float
    level: int
    energy: float
    error: float
    dropped_term: float


def wkb_error(mass, classical_energy=20.0, window_fraction=0.7, half_width=9.0, n_points=18001,
              stencil=5) -> WkbRung:
    """Relative L2 gap between the standing WKB form and the exact oscillator level.

    The oscillator has unit stiffness (omega = 1/sqrt(M)); the level closest
    to ``classical_energy`` is compared on the central ``window_fraction`` of
    the classically allowed interval after a least-squares amplitude fit.
    """
    omega = 1.0 / np.sqrt(mass)
    grid = Grid(-half_width, half_width, n_points)
    m = CompositeModel(grid, EnvSpec(mass, "harmonic", omega), SystemSpec.diagonal([0.0, 1.0]))
    level = int(round(classical_energy / omega - 0.5))
    st = solve_env_single_channel(m, adiabatic_states(m), 0, 1, stencil=stencil, index=level)[0]
    a = np.sqrt(2 * st.energy)
    w = wkb_wavefunction(m.env, grid, st.energy, window=(-window_fraction * a, window_fraction * a))
    f = w.standing_wave()[w.valid]
    chi = st.chi[w.valid]
    scale = (f @ chi) / (f @ f)
    err = np.linalg.norm(scale * f - chi) / np.linalg.norm(chi)
    return WkbRung(float(mass), level, st.energy, float(err), w.dropped_term_ratio())


def wkb_mass_ladder(masses=(1.0, 4.0, 16.0, 64.0), **kw):
    rungs = {}

    def run(mass):
        rungs[mass] = wkb_error(mass, **kw)
        return rungs[mass].error

    rows = convergence_ladder(list(masses), run)
    return rows, [rungs[m] for m in masses]


def mott_rung(model: CompositeModel, ratio: float, tol: float = 1e-10) -> ComparisonReport:
    """Impact-parameter run and close coupling at the same total energy.

    ``ratio`` is the beam kinetic energy over the system level spread; the
    system starts in its lowest level, so the total energy equals the kinetic one.
    """
    spread = float(np.ptp(model.sys.spectrum()))
    levels = model.sys.spectrum()
    kinetic = ratio * spread
    p_z = np.sqrt(2 * model.env.mass * kinetic)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        emergent = impact_parameter_run(model, p_z, 0, tol=tol)
    exact = solve_close_coupling(model, adiabatic_states(model), kinetic + levels[0], 0)
    return compare_exact_vs_emergent(exact, emergent, initial=0, parameter=ratio)


def mott_ladder(model: CompositeModel, ratios=(100.0, 400.0, 1600.0, 6400.0), tol=1e-10):
    """Kinetic/spacing ratios x4 apart, i.e. beam momenta x2 apart."""
    return [mott_rung(model, r, tol) for r in ratios]


@dataclass(frozen=True)
class DiracRung:
    c: float
    dirac_population: float
    reference_population: float
    deviation: float
    norm_defect: float
    steps: int


def dirac_c_ladder(
    speeds=(5.0, 10.0, 20.0),
    mass=1.0,
    strength=0.2,
    width=1.0,
    q=1.0,
    half_window=7.0,
    box=2 * np.pi,
    n_points=1024,
    env_mass=1.0,
    env_momentum=1.0,
    n_modes=3,
    tol=1e-7,
):
    """Population of the first excited momentum mode against the matched TDSE run.

    Returns the rungs and the fitted exponent of |deviation| against c.
    """
    traj = straight_line(env_mass, env_momentum, -half_window,
                         np.linspace(0.0, 2 * half_window * env_mass / env_momentum, 5))
    coupling = GaussianCosineCoupling(strength, width, q)
    rungs = []
    ref = None
    for c in speeds:
        spec = DiracSpec(float(c), mass, Grid(0.0, box, n_points))
        if ref is None:
            model, modes = matched_mode_model(spec, coupling, env_mass, (-half_window, half_window),
                                              n_modes)
            psi0 = np.zeros(len(modes))
            psi0[n_modes] = 1.0
            res = propagate(EffectiveHamiltonian(model, traj), psi0, traj.t[0], traj.t[-1], tol=1e-12)
            ref = res.populations[-1][n_modes + 1]
        series = propagate_tdde(spec, traj, coupling, plane_wave(spec, 0), tol=tol)
        pop = mode_populations(spec, series.final, [modes[n_modes + 1]])[0]
        rungs.append(DiracRung(float(c), float(pop), float(ref), float((pop - ref) / ref),
                               float(series.norm_defect.max()), series.n_steps))
    slope = np.polyfit(np.log([r.c for r in rungs]), np.log([abs(r.deviation) for r in rungs]), 1)[0]
    return rungs, float(slope)
