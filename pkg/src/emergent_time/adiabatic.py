"""Adiabatic (perturbed-stationary-state) basis, surfaces and couplings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CompositeModel, check_model

DEGENERACY_TOL = 1e-10
CROSSING_RADIUS = 3


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AdiabaticBasis:
    """Eigenvectors of H_S + H_ES(R) per grid point.

    ``vectors[i][:, n]`` is psi_n at ``r[i]``; ``energies[i, n]`` is E_n(r[i]).
    ``phases[i, n]`` records the unit factor applied by phase fixing and
    ``crossings`` holds ``(i, n, n + 1)`` for near-degenerate neighbours.
    """

    r: np.ndarray
    vectors: np.ndarray
    energies: np.ndarray
    phases: np.ndarray
    crossings: tuple[tuple[int, int, int], ...]

    @property
    def n_sys(self) -> int:
        return self.energies.shape[1]

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.vectors)

    def surface_has_crossing(self, m: int) -> bool:
        return any(m in (a, b) for _, a, b in self.crossings)

    def unreliable_points(self, radius: int = CROSSING_RADIUS) -> np.ndarray:
        mask = np.zeros(len(self.r), dtype=bool)
        for i, _, _ in self.crossings:
            mask[max(0, i - radius) : i + radius + 1] = True
        return mask

    def gram_deviation(self) -> float:
        v = self.vectors
        gram = np.conj(np.swapaxes(v, 1, 2)) @ v
        return float(np.max(np.abs(gram - np.eye(self.n_sys))))

    def overlaps(self) -> np.ndarray:
        """<psi_n(R_i)|psi_n(R_{i+1})>, shape ``(n_points - 1, n_sys)``."""
        v = self.vectors
        return np.einsum("ian,ian->in", np.conj(v[:-1]), v[1:])


def _seed_phase(col: np.ndarray) -> complex:
    """Factor making the first non-negligible component real and positive."""
    big = np.flatnonzero(np.abs(col) > 1e-8 * np.abs(col).max())[0]
    c = col[big]
    return np.conj(c) / abs(c)


def adiabatic_states(model: CompositeModel) -> AdiabaticBasis:
    check_model(model, allow_small_grid=True)
    local = model.local_hamiltonians()
    energies, vectors = np.linalg.eigh(local)
    n_pts, n = energies.shape
    phases = np.ones((n_pts, n), dtype=vectors.dtype)

    for k in range(n):
        phases[0, k] = _seed_phase(vectors[0, :, k])
    vectors[0] *= phases[0][None, :]
    for i in range(1, n_pts):
        ov = np.einsum("an,an->n", np.conj(vectors[i - 1]), vectors[i])
        mag = np.abs(ov)
        factor = np.where(mag > 0, np.conj(ov) / np.where(mag > 0, mag, 1.0), 1.0)
        if not np.iscomplexobj(vectors):
            factor = np.sign(factor.real) + (factor.real == 0)
        phases[i] = factor
        vectors[i] *= factor[None, :]

    gaps = np.diff(energies, axis=1)
    crossings = tuple(
        (int(i), int(k), int(k + 1)) for i, k in zip(*np.nonzero(gaps < DEGENERACY_TOL))
    )
    return AdiabaticBasis(
        r=model.grid.points,
        vectors=vectors,
        energies=energies,
        phases=phases,
        crossings=crossings,
    )


@dataclass(frozen=True, eq=False)
class CouplingTensor:
    """First- and second-derivative couplings at interior grid points.

    ``first[j, m, n]`` = <psi_m|d/dR psi_n> and ``second[j, m]`` =
    <psi_m|d^2/dR^2 psi_m> at ``r[j]``; ``unreliable`` flags points within a
    few steps of a flagged crossing.
    """

    r: np.ndarray
    first: np.ndarray
    second: np.ndarray
    unreliable: np.ndarray

    def antisymmetry_defect(self) -> float:
        f = self.first
        return float(np.max(np.abs(f + np.conj(np.swapaxes(f, 1, 2))), initial=0.0))

    def sum_rule_residual(self) -> np.ndarray:
        """-G_mm - sum_n |F_nm|^2 per interior point and state.

        For a real orthonormal basis this vanishes identically in the continuum;
        on the grid it is an O(h^2) truncation residue.
        """
        s = np.sum(np.abs(self.first) ** 2, axis=1)
        return -self.second.real - s


def nonadiabatic_couplings(basis: AdiabaticBasis) -> CouplingTensor:
    """Centered-difference couplings, second order in the grid spacing.

    The first-derivative matrix is projected onto its anti-Hermitian part,
    which is exact in the continuum and removes the O(h^2) symmetric residue
    of the stencil.
    """
    v = basis.vectors
    h = basis.r[1] - basis.r[0]
    vh = np.conj(np.swapaxes(v[1:-1], 1, 2))
    raw = vh @ (v[2:] - v[:-2]) / (2 * h)
    first = 0.5 * (raw - np.conj(np.swapaxes(raw, 1, 2)))
    lap = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    second = np.einsum("iam,iam->im", np.conj(v[1:-1]), lap)
    if basis.is_real:
        second = second.real
    return CouplingTensor(
        r=basis.r[1:-1],
        first=first,
        second=second,
        unreliable=basis.unreliable_points()[1:-1],
    )


def averaged_potential(
    basis: AdiabaticBasis,
    weights,
    include_second_derivative: bool = False,
    couplings: CouplingTensor | None = None,
    mass: float | None = None,
) -> np.ndarray:
    """U_S(R) = sum_m |a_m|^2 E_m(R) on the basis grid.

    With ``include_second_derivative`` the diagonal term -(1/2M) G_mm is added
    back (interior points; the two edge values copy their neighbours).
    """
    a = np.asarray(weights)
    p = np.abs(a) ** 2
    if a.shape != (basis.n_sys,):
        raise NormalizationError(f"expected {basis.n_sys} weights, got shape {a.shape}")
    if abs(p.sum() - 1.0) > 1e-12:
        raise NormalizationError(f"weights not normalized: sum |a|^2 = {p.sum():.15g}")
    u = basis.energies @ p
    if include_second_derivative:
        if couplings is None:
            couplings = nonadiabatic_couplings(basis)
        if mass is None:
            raise ValueError("mass is required to include the second-derivative term")
        corr = -(0.5 / mass) * (couplings.second.real @ p)
        corr = np.concatenate([corr[:1], corr, corr[-1:]])
        u = u + corr
    return u


def surfaces_table(basis: AdiabaticBasis, couplings: CouplingTensor | None = None):
    """Header and rows for CSV export: R, E_0.., F_m_n (m < n); F is nan at the edges."""
    if couplings is None:
        couplings = nonadiabatic_couplings(basis)
    n = basis.n_sys
    pairs = [(m, k) for m in range(n) for k in range(m + 1, n)]
    header = ["R"] + [f"E_{k}" for k in range(n)] + [f"F_{m}_{k}" for m, k in pairs]
    f_full = np.full((len(basis.r), n, n), np.nan)
    f_full[1:-1] = couplings.first.real
    rows = []
    for i, r in enumerate(basis.r):
        rows.append([r, *basis.energies[i], *(f_full[i, m, k] for m, k in pairs)])
    return header, rows
