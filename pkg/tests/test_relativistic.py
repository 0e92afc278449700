import numpy as np
import pytest

from emergent_time.model import Grid
from emergent_time.relativistic import (
    ALPHA,
    BETA,
    DiracSpec,
    GaussianCosineCoupling,
    GridError,
    _check_algebra,
    gauge_transform_dirac,
    matched_mode_model,
    mode_populations,
    plane_wave,
    propagate_tdde,
    rest_energy_velocity_mismatch,
    superpose,
    velocity_expectation,
)
from emergent_time.semiclassical import straight_line
from emergent_time.tdse import NormalizationError


def _spec(c=5.0, n=256):
    return DiracSpec(c, 1.0, Grid(0.0, 2 * np.pi, n))


def _traj(t_end=4.0):
    return straight_line(1.0, 1.0, -t_end / 2, np.linspace(0, t_end, 5))


def test_matrix_algebra():
    assert np.array_equal(ALPHA @ ALPHA, np.eye(2))
    assert np.array_equal(BETA @ BETA, np.eye(2))
    assert np.array_equal(ALPHA @ BETA + BETA @ ALPHA, np.zeros((2, 2)))
    with pytest.raises(ValueError):
        _check_algebra(ALPHA, np.eye(2))


def test_compton_resolution():
    with pytest.raises(GridError):
        DiracSpec(100.0, 1.0, Grid(0.0, 2 * np.pi, 64))


def test_plane_wave_velocity():
    spec = _spec()
    for mode in (0, 1, 3, -2):
        p = 2 * np.pi * mode / spec.length
        v = velocity_expectation(spec, plane_wave(spec, mode))
        assert v == pytest.approx(spec.c**2 * p / float(spec.energy(p)), abs=1e-10)
    both = superpose(plane_wave(spec, 2), plane_wave(spec, -2), 1.0, 1.0)
    assert abs(velocity_expectation(spec, both)) < 1e-12
    with pytest.raises(NormalizationError):
        pw = plane_wave(spec, 1)
        velocity_expectation(spec, type(pw)(u=2 * pw.u, w=pw.w, dx=spec.dx))


def test_free_plane_wave_phase():
    spec = _spec()
    psi0 = plane_wave(spec, 2)
    series = propagate_tdde(spec, _traj(), None, psi0, tol=1e-10)
    e = float(spec.energy(2.0))
    phase = np.exp(-1j * e * 4.0)
    assert np.max(np.abs(series.final.u - phase * psi0.u)) < 1e-8
    assert np.max(np.abs(series.final.w - phase * psi0.w)) < 1e-8
    assert np.ptp(series.upper) < 1e-12


def test_free_dispersion_of_superposition():
    spec = _spec()
    a, b = plane_wave(spec, 1), plane_wave(spec, 3)
    psi0 = superpose(a, b, 0.6, 0.8)
    series = propagate_tdde(spec, _traj(), None, psi0, tol=1e-10)
    pops0 = mode_populations(spec, psi0, [1, 3])
    pops1 = mode_populations(spec, series.final, [1, 3])
    assert np.max(np.abs(pops1 - pops0)) < 1e-10
    uk0 = np.fft.fft(psi0.u)[[1, 3]]
    uk1 = np.fft.fft(series.final.u)[[1, 3]]
    expected = uk0 * np.exp(-1j * spec.energy(np.array([1.0, 3.0])) * 4.0)
    assert np.max(np.abs(uk1 - expected)) / np.max(np.abs(uk0)) < 1e-8


def test_coupled_run_keeps_norm_and_scatters():
    spec = _spec()
    series = propagate_tdde(spec, _traj(8.0), GaussianCosineCoupling(0.3, 1.0, 1.0), plane_wave(spec, 0),
                            tol=1e-9, snapshot_times=[2.0, 4.0])
    assert series.norm_defect.max() < 1e-10
    assert mode_populations(spec, series.final, [1])[0] > 1e-4
    assert np.array_equal(series.snapshot_times, [2.0, 4.0])


def test_dirac_gauge_round_trip():
    spec = _spec()
    series = propagate_tdde(spec, _traj(), GaussianCosineCoupling(0.3, 1.0, 1.0), plane_wave(spec, 0),
                            tol=1e-9, snapshot_times=[1.0, 3.0])
    u_s = lambda t: 0.2 + 0.1 * np.sin(t)  # noqa: E731
    there = gauge_transform_dirac(series, u_s)
    back = gauge_transform_dirac(there, u_s, inverse=True)
    assert np.max(np.abs(back.final.u - series.final.u)) < 1e-12
    assert np.max(np.abs(back.snapshots - series.snapshots)) < 1e-12
    assert np.array_equal(there.upper, series.upper)
    phi = 0.2 * 4.0 + 0.1 * (1 - np.cos(4.0))
    assert there.gauge_phase[-1] == pytest.approx(phi, abs=1e-12)


def test_rest_energy_mismatch():
    for c in (10.0, 100.0):
        assert rest_energy_velocity_mismatch(1.0, 1.0, c) == pytest.approx(1 / (2 * c**2), rel=1e-2)
    assert rest_energy_velocity_mismatch(0.5, 1.0, 10.0) > 0


def test_matched_mode_model():
    spec = _spec()
    model, modes = matched_mode_model(spec, GaussianCosineCoupling(0.2, 1.0, 1.0), 1.0, (-7, 7), 3)
    assert list(modes) == [-3, -2, -1, 0, 1, 2, 3]
    assert np.allclose(np.diag(model.sys.h_sys), modes**2 / 2.0)
    h = model.local_hamiltonians(0.0)[0]
    assert h[3, 4] == pytest.approx(0.1)
    assert h[3, 5] == 0
    with pytest.raises(ValueError):
        matched_mode_model(spec, GaussianCosineCoupling(0.2, 1.0, 1.5), 1.0, (-7, 7))
