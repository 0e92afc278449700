"""Uncertainty relations, exact-vs-emergent comparisons, decoupling and convergence ladders."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .adiabatic import AdiabaticBasis
from .exact_solver import BoundSolution, ChannelSolution, solve_bound
from .model import CompositeModel, Grid, environment_hamiltonian
from .tdse import ImpactResult, PropagationResult, impact_parameter_run

ASYMMETRY_THRESHOLD = 100.0
SEPARABLE = "separable: environment no longer provides time"


class MappingError(ValueError):
    pass


class LadderError(ValueError):
    pass


# --- uncertainty ---------------------------------------------------------------


@dataclass(frozen=True)
class UncertaintyReport:
    """Operator-level spreads of an environment state and the inferred time spread.

    ``velocity`` is i<[H_E, R]>, which is what the Robertson bound involves;
    ``momentum_over_mass`` is the central-difference <P>/M (equal to it for
    the three-point stencil). ``delta_t`` is nan for standing states.
    """

    delta_h: float
    delta_r: float
    mean_r: float
    velocity: float
    momentum_over_mass: float
    delta_t: float
    delta_e_sys: float
    bound: float  # |velocity| / 2
    slack: float  # delta_h * delta_r - bound
    time_product: float  # delta_e_sys * delta_t
    standing: bool

    @property
    def lower_bound(self) -> float:
        return 0.5

    @property
    def saturation(self) -> float:
        """delta_h * delta_r / bound; 1 for a minimum-uncertainty state."""
        return (self.delta_h * self.delta_r) / self.bound if self.bound > 0 else np.inf


def _as_columns(state: np.ndarray, n_points: int) -> np.ndarray:
    a = np.asarray(state)
    if a.ndim == 1:
        if a.size == n_points:
            return a[:, None]
        if a.size % n_points == 0:
            return a.reshape(n_points, a.size // n_points)
    if a.ndim == 2 and a.shape[0] == n_points:
        return a
    raise ValueError(f"state shape {a.shape} does not fit a grid of {n_points} points")


def uncertainty_check(state, model: CompositeModel, stencil: int = 3, velocity_floor: float = 1e-12):
    """Spreads of H_E and R for an environment state.

    ``state`` is an environment vector (n_points,), a composite vector in the
    environment-major layout, or a column matrix whose columns form a mixed
    state rho = sum_a |col_a><col_a| (the partial trace of a composite
    vector). Normalization is the plain Euclidean one, sum |psi_i|^2 = 1.
    """
    g = model.grid
    a = _as_columns(state, g.n_points).astype(complex)
    total = float(np.sum(np.abs(a) ** 2))
    if abs(total - 1.0) > 1e-10:
        raise ValueError(f"state not normalized: sum |psi|^2 = {total:.15g}")
    h = environment_hamiltonian(model, stencil)
    r = g.points[:, None]
    ha = h @ a
    ra = r * a

    def expect(x, y):
        return np.sum(np.conj(x) * y)

    mean_h = float(expect(a, ha).real)
    mean_h2 = float(expect(ha, ha).real)
    mean_r = float(expect(a, ra).real)
    mean_r2 = float(expect(ra, ra).real)
    delta_h = float(np.sqrt(max(mean_h2 - mean_h**2, 0.0)))
    delta_r = float(np.sqrt(max(mean_r2 - mean_r**2, 0.0)))
    # i<[H, R]> = -2 Im <H psi | R psi> for Hermitian H and R
    velocity = float(-2.0 * np.imag(expect(ha, ra)))

    dpsi = np.zeros_like(a)
    dpsi[1:-1] = (a[2:] - a[:-2]) / (2 * g.h)
    dpsi[0] = a[1] / (2 * g.h)
    dpsi[-1] = -a[-2] / (2 * g.h)
    p_mean = float(np.real(expect(a, -1j * dpsi)))

    bound = 0.5 * abs(velocity)
    standing = abs(velocity) < velocity_floor
    delta_t = np.nan if standing else delta_r / abs(velocity)
    return UncertaintyReport(
        delta_h=delta_h,
        delta_r=delta_r,
        mean_r=mean_r,
        velocity=velocity,
        momentum_over_mass=p_mean / model.env.mass,
        delta_t=delta_t,
        delta_e_sys=delta_h,
        bound=bound,
        slack=delta_h * delta_r - bound,
        time_product=delta_h * delta_t,
        standing=standing,
    )


def gaussian_packet(grid: Grid, center: float, width: float, momentum: float) -> np.ndarray:
    """exp(-(R - R0)^2 / 4 s^2 + i p0 R), unit Euclidean norm on the grid."""
    r = grid.points
    psi = np.exp(-((r - center) ** 2) / (4 * width**2) + 1j * momentum * r)
    return psi / np.linalg.norm(psi)


def gaussian_product_closed_form(width: float, momentum: float, mass: float) -> tuple[float, float]:
    """Continuum (delta_H * delta_R, |<P>|/2M) for a free Gaussian packet."""
    product = np.sqrt(momentum**2 + 1.0 / (8 * width**2)) / (2 * mass)
    return float(product), abs(momentum) / (2 * mass)


def conditional_environment_state(
    psi: np.ndarray,
    n_points: int,
    n_sys: int,
    method: str = "partial_trace",
    basis: AdiabaticBasis | None = None,
    channel: int = 0,
) -> tuple[np.ndarray, float]:
    """Environment state extracted from a composite vector.

    partial_trace: the (n_points, n_sys) column matrix of the reduced density
    matrix, weight 1. projection: chi_m(R) = <psi_m(R)|Psi(R)> on adiabatic
    channel ``channel``, renormalized; the weight is the channel population.
    """
    a = np.asarray(psi).reshape(n_points, n_sys)
    if method == "partial_trace":
        return a / np.linalg.norm(a), 1.0
    if method == "projection":
        if basis is None:
            raise ValueError("projection needs the adiabatic basis")
        chi = np.einsum("ia,ia->i", np.conj(basis.vectors[:, :, channel]), a)
        weight = float(np.sum(np.abs(chi) ** 2))
        if weight == 0:
            raise ValueError(f"channel {channel} carries no weight")
        return chi / np.sqrt(weight), weight
    raise ValueError(f"unknown method {method!r}")


# --- exact vs emergent -----------------------------------------------------------


@dataclass(frozen=True)
class ComparisonReport:
    channels: tuple[int, ...]
    exact: np.ndarray
    emergent: np.ndarray
    max_abs: float
    mean_abs: float
    transition_relative: float  # relative difference summed over non-initial channels
    asymmetry: float
    parameter: float
    warning: str = ""

    @property
    def valid(self) -> bool:
        return not self.warning


def _emergent_probabilities(emergent) -> np.ndarray:
    if isinstance(emergent, ImpactResult):
        return emergent.probabilities
    if isinstance(emergent, PropagationResult):
        return emergent.populations[-1]
    return np.asarray(emergent, dtype=float)


def compare_exact_vs_emergent(
    exact: ChannelSolution | BoundSolution,
    emergent,
    channel_map: dict[int, int] | None = None,
    initial: int | None = None,
    parameter: float = np.nan,
    threshold: float = ASYMMETRY_THRESHOLD,
) -> ComparisonReport:
    """Pair exact channel probabilities with emergent final populations.

    ``channel_map`` sends emergent level index -> exact channel index
    (identity by default). ``initial`` is the emergent starting level and
    must map onto the exact incoming channel.
    """
    p_em = _emergent_probabilities(emergent)
    if isinstance(exact, ChannelSolution):
        p_ex = exact.transition_probabilities[:, exact.incoming]
        asym = exact.asymmetry_ratio()
        incoming = exact.incoming
    elif isinstance(exact, BoundSolution):
        p_ex = exact.system_populations(0)
        asym = np.nan
        incoming = None
    else:
        raise TypeError("exact must be a ChannelSolution or BoundSolution")

    if channel_map is None:
        if len(p_em) != len(p_ex):
            raise MappingError(f"{len(p_em)} emergent levels vs {len(p_ex)} exact channels")
        channel_map = {k: k for k in range(len(p_em))}
    for k, m in channel_map.items():
        if not (0 <= k < len(p_em) and 0 <= m < len(p_ex)):
            raise MappingError(f"channel pair ({k}, {m}) out of range")
    if initial is not None and incoming is not None and channel_map.get(initial) != incoming:
        raise MappingError(f"initial level {initial} does not map to incoming channel {incoming}")

    if np.any(p_ex < -1e-12) or np.any(p_ex > 1 + 1e-12):
        raise ValueError("exact probabilities outside [0, 1]")
    if incoming is not None and abs(p_ex.sum() - 1.0) > 1e-6:
        raise ValueError(f"exact probabilities sum to {p_ex.sum():.12g}, not 1")

    keys = tuple(sorted(channel_map))
    ex = np.array([p_ex[channel_map[k]] for k in keys])
    em = np.array([p_em[k] for k in keys])
    diff = np.abs(ex - em)
    start = initial if initial is not None else incoming
    others = [i for i, k in enumerate(keys) if k != start]
    if others and ex[others].sum() > 0:
        rel = float(abs(em[others].sum() - ex[others].sum()) / ex[others].sum())
    else:
        rel = 0.0 if not others or em[others].sum() == 0 else np.inf
    warning = ""
    if np.isfinite(asym) and asym < threshold:
        warning = f"asymmetry ratio {asym:.3g} below {threshold:g}: product ansatz not licensed"
    return ComparisonReport(
        channels=keys,
        exact=ex,
        emergent=em,
        max_abs=float(diff.max()),
        mean_abs=float(diff.mean()),
        transition_relative=rel,
        asymmetry=float(asym),
        parameter=float(parameter),
        warning=warning,
    )


# --- decoupling limit ------------------------------------------------------------


@dataclass(frozen=True)
class DecouplingRow:
    strength: float
    delta_e_sys: float
    delta_t: float
    product: float
    delta_e_env_trace: float
    delta_e_env_projection: float
    note: str = ""


def system_energy_spread(populations: np.ndarray, levels: np.ndarray) -> float:
    p = np.asarray(populations, dtype=float)
    mean = p @ levels
    return float(np.sqrt(max(p @ levels**2 - mean**2, 0.0)))


def decoupling_limit_study(
    model: CompositeModel,
    p_z: float,
    strengths,
    bound_model: CompositeModel | None = None,
    tol: float = 1e-10,
    separable_tol: float = 1e-14,
) -> list[DecouplingRow]:
    """Energy exchange and inferred time spread as the coupling is switched off.

    ``model`` is a beam model run through the impact-parameter driver;
    delta_E_S is the spread of system energy in the final state and
    delta_t = 1/(2 delta_E_S) by definition. When ``bound_model`` is given, the
    environment energy spread of its composite ground state at the same
    strength is added (partial trace and channel-0 projection).
    """
    lam = np.asarray(strengths, dtype=float)
    if len(lam) < 2 or np.any(np.diff(lam) >= 0) or np.any(lam < 0):
        raise LadderError("strengths must be nonnegative and strictly decreasing")
    levels = model.sys.spectrum()
    rows = []
    for s in lam:
        m = model.with_strength(float(s))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            run = impact_parameter_run(m, p_z, 0, tol=tol)
        de_s = system_energy_spread(run.probabilities, levels)
        de_tr = de_pr = np.nan
        if bound_model is not None:
            de_tr, de_pr = _bound_env_spreads(bound_model.with_strength(float(s)))
        if s == 0 or de_s <= separable_tol:
            rows.append(DecouplingRow(float(s), 0.0, np.inf, np.nan, de_tr, de_pr, SEPARABLE))
            continue
        dt = 0.5 / de_s
        rows.append(DecouplingRow(float(s), de_s, dt, de_s * dt, de_tr, de_pr))
    return rows


def _bound_env_spreads(model: CompositeModel) -> tuple[float, float]:
    from .adiabatic import adiabatic_states

    sol = solve_bound(model, 1)
    psi = sol.vectors[:, 0]
    n_pts, n = model.grid.n_points, model.n_sys
    tr, _ = conditional_environment_state(psi, n_pts, n, "partial_trace")
    basis = adiabatic_states(model)
    pr, _ = conditional_environment_state(psi, n_pts, n, "projection", basis, 0)
    return uncertainty_check(tr, model).delta_h, uncertainty_check(pr, model).delta_h


def decoupling_rows(rows: list[DecouplingRow]):
    header = ["lambda", "dE_S", "dt", "product", "dE_E_trace", "dE_E_projection", "note"]
    return header, [
        [r.strength, r.delta_e_sys, r.delta_t, r.product, r.delta_e_env_trace,
         r.delta_e_env_projection, r.note]
        for r in rows
    ]


# --- ladders -------------------------------------------------------------------


@dataclass(frozen=True)
class LadderRow:
    value: float
    error: float
    ratio: float  # previous error / this error (nan on the first rung)


def convergence_ladder(values, run) -> list[LadderRow]:
    """Evaluate ``run(value) -> error`` on each rung and record successive ratios."""
    values = list(values)
    if len(values) < 3:
        raise LadderError(f"a ladder needs at least 3 rungs, got {len(values)}")
    rows = []
    prev = None
    for v in values:
        err = float(run(v))
        ratio = np.nan if prev is None else (prev / err if err != 0 else np.inf)
        rows.append(LadderRow(float(v), err, ratio))
        prev = err
    return rows


def ladder_rows(rows: list[LadderRow], parameter: str = "value"):
    return [parameter, "error", "ratio"], [[r.value, r.error, r.ratio] for r in rows]


def nonincreasing(errors) -> bool:
    e = np.asarray(errors, dtype=float)
    return bool(np.all(np.diff(e) <= 0))


def comparison_rows(reports: list[ComparisonReport]):
    header = ["parameter", "channel", "exact", "emergent", "abs_diff", "transition_relative",
              "asymmetry", "warning"]
    rows = []
    for rep in reports:
        for k, ex, em in zip(rep.channels, rep.exact, rep.emergent):
            rows.append([rep.parameter, k, ex, em, abs(ex - em), rep.transition_relative,
                         rep.asymmetry, rep.warning])
    return header, rows


def uncertainty_rows(reports: list[UncertaintyReport]):
    header = ["delta_H", "delta_R", "mean_R", "velocity", "P_over_M", "delta_t", "delta_E_S",
              "bound", "slack", "time_product", "standing"]
    return header, [
        [r.delta_h, r.delta_r, r.mean_r, r.velocity, r.momentum_over_mass, r.delta_t,
         r.delta_e_sys, r.bound, r.slack, r.time_product, int(r.standing)]
        for r in reports
    ]
