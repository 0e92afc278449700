"""Exact composite solutions: bound spectra, single-channel environment
states and the multichannel scattering matrix."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .adiabatic import AdiabaticBasis, averaged_potential
from .model import (
    CompositeModel,
    Grid,
    assemble_composite,
    check_model,
    edge_decay_problems,
    kinetic_operator,
)

DENSE_THRESHOLD = 2000


class SolverError(RuntimeError):
    pass


class SpectrumError(SolverError):
    pass


class CrossingError(SolverError):
    pass


class EnergyError(SolverError):
    pass


class BoundaryError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class BoundSolution:
    energies: np.ndarray
    vectors: np.ndarray  # (dim, k), unit Euclidean norm
    residuals: np.ndarray
    n_points: int
    n_sys: int
    method: str

    def amplitudes(self, k: int) -> np.ndarray:
        """Eigenvector k reshaped to ``(n_points, n_sys)``."""
        return self.vectors[:, k].reshape(self.n_points, self.n_sys)

    def schmidt_coefficients(self, k: int = 0) -> np.ndarray:
        return np.linalg.svd(self.amplitudes(k), compute_uv=False)

    def system_populations(self, k: int, system_basis: np.ndarray | None = None) -> np.ndarray:
        """Reduced system populations of eigenstate k in ``system_basis`` columns."""
        a = self.amplitudes(k)
        if system_basis is not None:
            a = a @ np.conj(system_basis)
        return np.sum(np.abs(a) ** 2, axis=0)


def _edge_threshold(model: CompositeModel) -> float:
    r = np.array([model.grid.r_min, model.grid.r_max])
    v = model.env.potential_at(r)
    lowest = np.linalg.eigvalsh(model.local_hamiltonians(r))[:, 0]
    return float(np.min(v + lowest))


def _band_storage(h: sp.spmatrix, bandwidth: int) -> np.ndarray:
    n = h.shape[0]
    band = np.zeros((bandwidth + 1, n), dtype=h.dtype)
    for d in range(bandwidth + 1):
        band[d, : n - d] = h.diagonal(-d)
    return band


def _lowest_sparse(h: sp.spmatrix, k: int):
    """Lowest k eigenpairs by shift-invert Lanczos below a Gershgorin bound."""
    d = h.diagonal().real
    off = np.asarray(abs(h).sum(axis=1)).ravel() - np.abs(d)
    low = float(np.min(d - off))
    sigma = low - 1e-3 * (1.0 + abs(low))
    # fixed start vector: ARPACK's default is random, which breaks byte-identical reruns
    v0 = np.random.default_rng(0).standard_normal(h.shape[0])
    w, v = spla.eigsh(h.tocsc(), k=k, sigma=sigma, which="LM", tol=0, v0=v0)
    order = np.argsort(w)
    w, v = w[order], v[:, order]
    v, _ = np.linalg.qr(v)
    # Rayleigh quotients after re-orthonormalization
    w = np.real(np.einsum("ik,ik->k", np.conj(v), h @ v))
    return w, v


def solve_bound(
    model: CompositeModel, k_lowest: int, method: str = "auto", stencil: int = 3
) -> BoundSolution:
    """Lowest ``k_lowest`` eigenpairs of the composite Hamiltonian.

    method: ``dense`` (full diagonalization), ``banded`` (LAPACK band solver),
    ``iterative`` (shift-invert Lanczos) or ``auto`` (dense up to dimension
    2000, iterative above).
    """
    check_model(model, allow_small_grid=True)
    h = assemble_composite(model, stencil)
    dim = h.shape[0]
    if not 0 < k_lowest < dim:
        raise SpectrumError(f"k_lowest must be in [1, {dim - 1}]")
    if method == "auto":
        method = "dense" if dim <= DENSE_THRESHOLD else "iterative"

    if method == "dense":
        w, v = sla.eigh(h.toarray(), subset_by_index=[0, k_lowest - 1])
    elif method == "banded":
        bw = model.n_sys * (stencil // 2)
        w, v = sla.eig_banded(
            _band_storage(h, bw), lower=True, select="i", select_range=(0, k_lowest - 1)
        )
    elif method == "iterative":
        w, v = _lowest_sparse(h, k_lowest)
    else:
        raise ValueError(f"unknown method {method!r}")

    threshold = _edge_threshold(model)
    if w[-1] >= threshold:
        raise SpectrumError(
            f"requested eigenvalue {w[-1]:.6g} not confined: box edges open at {threshold:.6g}"
        )
    resid = np.linalg.norm(h @ v - v * w[None, :], axis=0) / np.linalg.norm(v, axis=0)
    return BoundSolution(
        energies=np.asarray(w),
        vectors=v,
        residuals=resid,
        n_points=model.grid.n_points,
        n_sys=model.n_sys,
        method=method,
    )


def box_sensitivity(
    model: CompositeModel, k_lowest: int, factor: float = 1.5, method: str = "auto"
) -> np.ndarray:
    """Eigenvalue shifts when the box is enlarged by ``factor`` at fixed spacing."""
    g = model.grid
    mid = 0.5 * (g.r_min + g.r_max)
    half = 0.5 * (g.r_max - g.r_min) * factor
    n = int(round(2 * half / g.h)) + 1
    big = replace(model, grid=Grid(mid - half, mid + half, n))
    a = solve_bound(model, k_lowest, method).energies
    b = solve_bound(big, k_lowest, method).energies
    return b - a


@dataclass(frozen=True, eq=False)
class EnvEigenstate:
    r: np.ndarray
    chi: np.ndarray  # normalized so that sum |chi|^2 h = 1
    energy: float
    surface: int
    residual: float


def solve_env_single_channel(
    model: CompositeModel,
    basis: AdiabaticBasis,
    m: int,
    k_lowest: int,
    weights=None,
    stencil: int = 3,
    index: int | None = None,
) -> list[EnvEigenstate]:
    """Environment eigenstates on surface m, or on U_S when ``weights`` is given.

    With ``index`` only that single level is returned (``k_lowest`` is then
    ignored); the five-point solve is seeded by the three-point level.
    """
    if weights is None:
        if basis.surface_has_crossing(m):
            raise CrossingError(f"surface {m} has a flagged crossing")
        v_eff = basis.energies[:, m]
    else:
        v_eff = averaged_potential(basis, weights)
    g = model.grid
    v_tot = model.env.potential_at(g.points) + v_eff
    k = kinetic_operator(g, model.env.mass, stencil)
    h = (k + sp.diags(v_tot)).tocsr()
    lo, hi = (0, k_lowest - 1) if index is None else (index, index)
    if stencil == 3 or index is not None:
        h3 = h if stencil == 3 else (kinetic_operator(g, model.env.mass, 3) + sp.diags(v_tot))
        w, vec = sla.eigh_tridiagonal(
            h3.diagonal(), h3.diagonal(-1), select="i", select_range=(lo, hi)
        )
    if stencil != 3:
        if index is None:
            w, vec = _lowest_sparse(h, k_lowest)
        else:
            ws, vs = spla.eigsh(h.tocsc(), k=3, sigma=float(w[0]), which="LM", tol=0, v0=vec[:, 0])
            j = int(np.argmin(np.abs(ws - w[0])))
            w, vec = ws[j : j + 1], vs[:, j : j + 1]
    out = []
    for j in range(len(w)):
        c = vec[:, j]
        c = c / np.linalg.norm(c)
        lead = np.flatnonzero(np.abs(c) > 1e-3 * np.abs(c).max())[0]
        c = c * np.sign(c[lead])
        res = float(np.linalg.norm(h @ c - w[j] * c))
        out.append(
            EnvEigenstate(
                r=g.points, chi=c / np.sqrt(g.h), energy=float(w[j]), surface=m, residual=res
            )
        )
    return out


# --- close coupling -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChannelSolution:
    """Scattering solution at total energy E.

    Ports are ordered ``[left open channels..., right open channels...]`` and
    ``s_matrix[out, in]`` uses flux-normalized waves exp(+-ikR)/sqrt(k).
    ``transition_probabilities[n, j]`` is the probability of leaving in system
    state n (either direction) for incidence from the left in state j.
    ``channel_functions[i, n]`` are the adiabatic components chi_n(R_i) of the
    solution incident from the left in channel ``incoming``.
    """

    energy: float
    incoming: int
    channel_energies_left: np.ndarray
    channel_energies_right: np.ndarray
    k_left: np.ndarray
    k_right: np.ndarray
    open_left: np.ndarray
    open_right: np.ndarray
    s_matrix: np.ndarray
    transmission: np.ndarray
    reflection: np.ndarray
    transition_probabilities: np.ndarray
    r: np.ndarray
    channel_functions: np.ndarray
    energy_env: float
    energy_sys: float

    def unitarity_defect(self) -> float:
        s = self.s_matrix
        return float(np.max(np.abs(np.conj(s.T) @ s - np.eye(len(s)))))

    @property
    def kinetic_energy(self) -> float:
        return float(self.energy - self.channel_energies_left[self.incoming])

    def asymmetry_ratio(self) -> float:
        """Incident kinetic energy over the largest asymptotic level spacing."""
        e = self.channel_energies_left
        spread = float(e.max() - e.min())
        return np.inf if spread == 0 else self.kinetic_energy / spread


def _sector_propagators(w_mats: np.ndarray, h: float):
    """Exact log-derivative blocks for each sector with constant W = 2M(V - E).

    psi'(a) = y1 psi(a) + y2 psi(b), psi'(b) = y3 psi(a) + y4 psi(b).
    """
    lam, u = np.linalg.eigh(w_mats)
    kappa = np.sqrt(np.abs(lam))
    x = kappa * h
    diag = np.empty_like(kappa)
    cross = np.empty_like(kappa)
    closed = lam > 0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        # closed: kappa coth, kappa csch; open: k cot, k csc
        diag[closed] = kappa[closed] / np.tanh(x[closed])
        cross[closed] = kappa[closed] / np.sinh(x[closed])
        diag[~closed] = kappa[~closed] / np.tan(x[~closed])
        cross[~closed] = kappa[~closed] / np.sin(x[~closed])
    tiny = x < 1e-7
    diag[tiny] = 1.0 / h
    cross[tiny] = 1.0 / h
    cross[~np.isfinite(cross)] = 0.0
    uh = np.conj(np.swapaxes(u, 1, 2))
    a = (u * diag[:, None, :]) @ uh
    b = (u * cross[:, None, :]) @ uh
    return -a, b, -b, a


def _incident_from_left(r, local, v_env, energy, mass, u_left, e_left, u_right, e_right):
    """Solve with incidence from the low-R end; returns amplitudes and wavefunction."""
    n = local.shape[1]
    h = r[1] - r[0]
    mid_local = 0.5 * (local[1:] + local[:-1])
    mid_v = 0.5 * (v_env[1:] + v_env[:-1])
    w = 2 * mass * (mid_local + (mid_v - energy)[:, None, None] * np.eye(n))
    y1, y2, y3, y4 = _sector_propagators(w, h)

    def momenta(e_ch, v_edge):
        q = 2 * mass * (energy - v_edge - e_ch)
        return np.sqrt(np.abs(q)), q > 0

    k_l, open_l = momenta(e_left, v_env[0])
    k_r, open_r = momenta(e_right, v_env[-1])

    # outgoing (open) or decaying (closed) to the right of the last point
    y_edge = np.where(open_r, 1j * k_r, -k_r)
    y = (u_right * y_edge[None, :]) @ np.conj(u_right.T)
    steps = []
    for i in range(len(r) - 2, -1, -1):
        inv = np.linalg.inv(y - y4[i])
        m_i = inv @ y3[i]
        steps.append(m_i)
        y = y1[i] + y2[i] @ m_i
    steps.reverse()

    a = r[0]
    y_ch = np.conj(u_left.T) @ y @ u_left
    idx_in = np.flatnonzero(open_l)
    ko = k_l[idx_in]
    f_in = np.zeros((n, len(idx_in)), dtype=complex)
    df_in = np.zeros_like(f_in)
    f_in[idx_in, np.arange(len(idx_in))] = np.exp(1j * ko * a) / np.sqrt(ko)
    df_in[idx_in, np.arange(len(idx_in))] = 1j * ko * np.exp(1j * ko * a) / np.sqrt(ko)
    with np.errstate(divide="ignore"):
        g = np.where(open_l, np.exp(-1j * k_l * a) / np.sqrt(k_l), 1.0)
    dg = np.where(open_l, -1j * k_l * g, k_l * g)
    lhs = np.diag(dg) - y_ch @ np.diag(g)
    coef = np.linalg.solve(lhs, y_ch @ f_in - df_in)
    psi_ch0 = f_in + g[:, None] * coef
    refl = coef[idx_in]

    psi = np.empty((len(r), n, len(idx_in)), dtype=complex)
    psi[0] = u_left @ psi_ch0
    for i, m_i in enumerate(steps):
        psi[i + 1] = m_i @ psi[i]
    b = r[-1]
    out_ch = np.conj(u_right.T) @ psi[-1]
    idx_out = np.flatnonzero(open_r)
    kr = k_r[idx_out]
    trans = out_ch[idx_out] * (np.sqrt(kr) * np.exp(-1j * kr * b))[:, None]
    return dict(
        k_left=k_l,
        k_right=k_r,
        open_left=idx_in,
        open_right=idx_out,
        reflection=refl,
        transmission=trans,
        psi=psi,
    )


def solve_close_coupling(
    model: CompositeModel,
    basis: AdiabaticBasis,
    energy: float,
    incoming: int = 0,
    match_fraction: float = 0.1,
    coupling_tol: float = 1e-10,
) -> ChannelSolution:
    """Coupled-channel scattering at total energy E with all channels retained.

    The coupled equations are marched sector by sector with exact
    log-derivative propagators of the locally frozen coupling matrix (step =
    grid spacing), from the outgoing boundary back to the incident side, and
    matched to flux-normalized plane waves in the asymptotic adiabatic
    channels at both grid edges. Solving the equations in the fixed system
    basis is equivalent to the adiabatic-channel form with all potential and
    dynamical couplings kept.
    """
    check_model(model)
    problems = edge_decay_problems(model, coupling_tol, match_fraction)
    if problems:
        raise BoundaryError(problems[0])
    r = model.grid.points
    v_env = model.env.potential_at(r)
    n_edge = max(2, int(np.ceil(match_fraction * len(r))))
    for side in (v_env[:n_edge], v_env[-n_edge:]):
        if np.ptp(side) > coupling_tol * max(1.0, np.abs(v_env).max()):
            raise BoundaryError("environment potential not flat in the matching region")

    local = model.local_hamiltonians(r)
    mass = model.env.mass
    u_l, e_l = basis.vectors[0], basis.energies[0]
    u_r, e_r = basis.vectors[-1], basis.energies[-1]
    if not np.any(energy - v_env[0] - e_l > 0):
        raise EnergyError(f"all channels closed at E={energy}")
    if energy - v_env[0] - e_l[incoming] <= 0:
        raise EnergyError(f"incoming channel {incoming} closed at E={energy}")

    fwd = _incident_from_left(r, local, v_env, energy, mass, u_l, e_l, u_r, e_r)
    # mirror R -> -R for incidence from the right; port conventions coincide
    bwd = _incident_from_left(
        -r[::-1], local[::-1], v_env[::-1], energy, mass, u_r, e_r, u_l, e_l
    )

    n_l, n_r = len(fwd["open_left"]), len(fwd["open_right"])
    s = np.zeros((n_l + n_r, n_l + n_r), dtype=complex)
    s[:n_l, :n_l] = fwd["reflection"]
    s[n_l:, :n_l] = fwd["transmission"]
    s[n_l:, n_l:] = bwd["reflection"]
    s[:n_l, n_l:] = bwd["transmission"]

    n = model.n_sys
    probs = np.zeros((n, n))
    for col, j in enumerate(fwd["open_left"]):
        probs[fwd["open_left"], j] += np.abs(fwd["reflection"][:, col]) ** 2
        probs[fwd["open_right"], j] += np.abs(fwd["transmission"][:, col]) ** 2

    col = int(np.flatnonzero(fwd["open_left"] == incoming)[0])
    psi = fwd["psi"][:, :, col]
    chans = np.einsum("ian,ia->in", np.conj(basis.vectors), psi)
    weight = np.sum(np.abs(psi) ** 2)
    e_sys = float(np.real(np.einsum("ia,iab,ib->", np.conj(psi), local, psi)) / weight)
    return ChannelSolution(
        energy=float(energy),
        incoming=incoming,
        channel_energies_left=e_l,
        channel_energies_right=e_r,
        k_left=fwd["k_left"],
        k_right=fwd["k_right"],
        open_left=fwd["open_left"],
        open_right=fwd["open_right"],
        s_matrix=s,
        transmission=fwd["transmission"],
        reflection=fwd["reflection"],
        transition_probabilities=probs,
        r=r,
        channel_functions=chans,
        energy_env=float(energy) - e_sys,
        energy_sys=e_sys,
    )


def smatrix_rows(sol: ChannelSolution):
    """Header and rows ``E, m, n, Re S, Im S, |S|^2`` over the port indices."""
    header = ["E", "m", "n", "re_S", "im_S", "abs_S2"]
    rows = []
    s = sol.s_matrix
    for m in range(s.shape[0]):
        for n in range(s.shape[1]):
            z = s[m, n]
            rows.append([sol.energy, m, n, z.real, z.imag, abs(z) ** 2])
    return header, rows
