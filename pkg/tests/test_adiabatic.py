import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emergent_time.adiabatic import (
    NormalizationError,
    adiabatic_states,
    averaged_potential,
    nonadiabatic_couplings,
    surfaces_table,
)
from emergent_time.model import CompositeModel, CouplingSpec, EnvSpec, Grid, SystemSpec

DELTA, LAM = 1.0, 0.4


def linear_model(n=401, delta=DELTA, lam=LAM):
    return CompositeModel(
        Grid(-3.0, 3.0, n),
        EnvSpec(1.0),
        SystemSpec.diagonal([-delta / 2, delta / 2]),
        CouplingSpec("linear", lam),
    )


def test_uncoupled_surfaces_are_flat():
    m = CompositeModel(Grid(-1, 1, 30), EnvSpec(1.0), SystemSpec.diagonal([0.0, 0.7, 2.0]))
    b = adiabatic_states(m)
    assert np.allclose(b.energies, [0.0, 0.7, 2.0], atol=0)
    c = nonadiabatic_couplings(b)
    assert np.all(c.first == 0) and np.all(c.second == 0)


def test_two_level_surfaces_closed_form():
    m = linear_model()
    b = adiabatic_states(m)
    r = m.grid.points
    e = 0.5 * np.sqrt(DELTA**2 + 4 * LAM**2 * r**2)
    assert np.max(np.abs(b.energies[:, 0] + e)) < 1e-12
    assert np.max(np.abs(b.energies[:, 1] - e)) < 1e-12


def test_phase_fixing_and_orthonormality():
    b = adiabatic_states(linear_model())
    assert b.gram_deviation() < 1e-10
    assert np.all(b.overlaps().real > 0)
    # seed convention: first non-negligible component positive at r_min
    for k in range(2):
        col = b.vectors[0, :, k]
        assert col[np.flatnonzero(np.abs(col) > 1e-8)[0]] > 0


@settings(max_examples=25, deadline=None)
@given(n_sys=st.integers(2, 5), seed=st.integers(0, 2**31 - 1))
def test_random_model_eigen_residual(n_sys, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n_sys, n_sys)) + 1j * rng.normal(size=(n_sys, n_sys))
    hs = rng.normal(size=(n_sys, n_sys))
    m = CompositeModel(Grid(-1, 1, 40), EnvSpec(1.0), SystemSpec(hs + hs.T),
                       CouplingSpec("linear", 1.0, shape=a + a.conj().T))
    b = adiabatic_states(m)
    h = m.local_hamiltonians()
    res = h @ b.vectors - b.vectors * b.energies[:, None, :]
    assert np.max(np.abs(res)) < 1e-10
    assert np.all(np.diff(b.energies, axis=1) >= 0)
    assert b.gram_deviation() < 1e-10


def test_coupling_matches_mixing_angle():
    errs = []
    for n in (201, 401, 801):
        m = linear_model(n)
        c = nonadiabatic_couplings(adiabatic_states(m))
        # theta = atan2(2 lam R, delta) / 2, d theta / dR = lam delta / (delta^2 + 4 lam^2 R^2)
        dtheta = LAM * DELTA / (DELTA**2 + 4 * LAM**2 * c.r**2)
        errs.append(np.max(np.abs(np.abs(c.first[:, 0, 1]) - dtheta)))
    assert errs[-1] < 1e-5
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_antisymmetry_and_sum_rule_rate():
    res = []
    for n in (201, 401, 801, 1601):
        c = nonadiabatic_couplings(adiabatic_states(linear_model(n)))
        assert c.antisymmetry_defect() < 1e-8
        res.append(np.max(np.abs(c.sum_rule_residual())))
    ratios = np.array(res[:-1]) / np.array(res[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5))


def test_crossing_is_flagged():
    m = CompositeModel(Grid(-1, 1, 21), EnvSpec(1.0), SystemSpec.diagonal([0.0, 0.0]),
                       CouplingSpec("linear", 1.0, shape=np.diag([1.0, -1.0])))
    b = adiabatic_states(m)
    assert b.crossings and b.surface_has_crossing(0)
    assert b.unreliable_points().sum() == 7  # crossing at R = 0, three points each side
    c = nonadiabatic_couplings(b)
    assert c.unreliable.sum() == 7


def test_averaged_potential():
    b = adiabatic_states(linear_model())
    assert np.array_equal(averaged_potential(b, [1.0, 0.0]), b.energies[:, 0])
    half = np.sqrt(0.5)
    assert np.max(np.abs(averaged_potential(b, [half, half]))) < 1e-14
    gap = averaged_potential(b, [0.0, 1.0]) - averaged_potential(b, [1.0, 0.0])
    assert np.allclose(gap, b.energies[:, 1] - b.energies[:, 0], rtol=0, atol=1e-14)
    with pytest.raises(NormalizationError):
        averaged_potential(b, [1.0, 0.1])


def test_second_derivative_term_optional():
    m = linear_model()
    b = adiabatic_states(m)
    base = averaged_potential(b, [1.0, 0.0])
    full = averaged_potential(b, [1.0, 0.0], include_second_derivative=True, mass=1.0)
    c = nonadiabatic_couplings(b)
    assert np.allclose(full[1:-1] - base[1:-1], -0.5 * c.second[:, 0])
    with pytest.raises(ValueError):
        averaged_potential(b, [1.0, 0.0], include_second_derivative=True)


def test_surfaces_table_layout():
    header, rows = surfaces_table(adiabatic_states(linear_model(21)))
    assert header == ["R", "E_0", "E_1", "F_0_1"]
    assert len(rows) == 21 and np.isnan(rows[0][3]) and np.isfinite(rows[1][3])
