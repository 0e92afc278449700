"""One PASS/FAIL line per acceptance criterion; each test also asserts it."""

import time
from pathlib import Path

import numpy as np

from emergent_time.adiabatic import adiabatic_states, nonadiabatic_couplings
from emergent_time.analysis import (
    decoupling_limit_study,
    gaussian_packet,
    nonincreasing,
    uncertainty_check,
)
from emergent_time.cli import run_experiment
from emergent_time.config import load_config
from emergent_time.exact_solver import solve_bound
from emergent_time.experiments import beam_model, dirac_c_ladder, mott_ladder, wkb_mass_ladder
from emergent_time.model import (
    CompositeModel,
    CouplingSpec,
    EnvSpec,
    Grid,
    SystemSpec,
    assemble_composite,
    environment_hamiltonian,
)
from emergent_time.relativistic import DiracSpec, plane_wave, velocity_expectation
from emergent_time.semiclassical import straight_line
from emergent_time.tdse import EffectiveHamiltonian, gauge_transform, propagate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
SX = np.array([[0.0, 1.0], [1.0, 0.0]])


def test_c01_dense_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst = 0.0
    for trial in range(12):
        n_sys = int(rng.integers(2, 5))
        n_points = 200 // n_sys
        h_sys = rng.normal(size=(n_sys, n_sys))
        model = CompositeModel(
            Grid(-6.0, 6.0, n_points),
            EnvSpec(rng.uniform(0.5, 3.0), "harmonic", rng.uniform(0.5, 2.0)),
            SystemSpec(h_sys + h_sys.T),
            CouplingSpec("linear", rng.uniform(-1, 1)),
        )
        dense = np.linalg.eigvalsh(assemble_composite(model).toarray())[:6]
        for method in ("dense", "banded", "iterative"):
            e = solve_bound(model, 6, method=method).energies
            worst = max(worst, float(np.max(np.abs(e - dense))))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-10 and elapsed < 10
    verdict(1, ok, f"max |E - dense| {worst:.2e} over 12 models, {elapsed:.1f} s")
    assert ok


def test_c02_separable_limit(verdict):
    model = CompositeModel(Grid(-6.0, 6.0, 100), EnvSpec(1.0, "harmonic"),
                           SystemSpec.diagonal([-0.35, 0.35]))
    sol = solve_bound(model, 10, method="dense")
    e_env = np.linalg.eigvalsh(environment_hamiltonian(model).toarray())
    sums = np.sort(np.add.outer(e_env, model.sys.spectrum()).ravel())[:10]
    spectrum_err = float(np.max(np.abs(sol.energies - sums)))
    schmidt = sol.schmidt_coefficients(0)
    tail = float(schmidt[1] / schmidt[0])
    ok = spectrum_err < 1e-8 and tail < 1e-8
    verdict(2, ok, f"sum-spectrum error {spectrum_err:.2e}, second Schmidt coefficient {tail:.2e}")
    assert ok


def test_c03_mott_ladder(verdict):
    start = time.perf_counter()
    ratios = (100.0, 400.0, 1600.0, 6400.0)
    reports = mott_ladder(beam_model(), ratios)
    rel = [r.transition_relative for r in reports]
    elapsed = time.perf_counter() - start
    ok = max(rel) < 0.02 and nonincreasing(rel) and elapsed < 120
    verdict(3, ok, "relative differences " + ", ".join(f"{x:.2e}" for x in rel)
            + f" at ratios {ratios}, {elapsed:.1f} s")
    assert ok


def test_c04_wkb_mass_ladder(verdict):
    start = time.perf_counter()
    rows, _ = wkb_mass_ladder((1.0, 4.0, 16.0, 64.0))
    ratios = [r.ratio for r in rows[1:]]
    elapsed = time.perf_counter() - start
    ok = len(ratios) == 3 and min(ratios) >= 1.8 and elapsed < 60
    verdict(4, ok, "error ratios per x4 mass " + ", ".join(f"{x:.3f}" for x in ratios)
            + f", {elapsed:.1f} s")
    assert ok


def test_c05_uncertainty(verdict):
    big = CompositeModel(Grid(-8.0, 8.0, 16001), EnvSpec(1.0), SystemSpec.diagonal([0.0, 1.0]))
    sat = uncertainty_check(gaussian_packet(big.grid, 0.0, 1.0, 400.0), big).saturation - 1

    small = CompositeModel(Grid(-8.0, 8.0, 801), EnvSpec(1.0), SystemSpec.diagonal([0.0, 1.0]))
    rng = np.random.default_rng(7)
    worst = np.inf
    for _ in range(1000):
        psi = np.zeros(801, dtype=complex)
        for _ in range(rng.integers(1, 4)):
            psi += rng.normal() * gaussian_packet(small.grid, rng.uniform(-2.4, 2.4),
                                                  rng.uniform(0.3, 1.3), rng.uniform(-5, 5))
        psi /= np.linalg.norm(psi)
        worst = min(worst, uncertainty_check(psi, small).slack)

    beam = beam_model(n_points=601)
    rows = decoupling_limit_study(beam, np.sqrt(2 * 2000 * 100.0), [0.4, 0.2, 0.1, 0.05, 0.0])
    de = [r.delta_e_sys for r in rows[:-1]]
    decreasing = bool(np.all(np.diff(de) < 0))

    ok = worst > -1e-9 and abs(sat) < 1e-6 and decreasing
    verdict(5, ok, f"min slack {worst:.2e} over 1000 packets, Gaussian saturation {sat:.2e}, "
            "dE_S " + ", ".join(f"{x:.3f}" for x in de))
    assert ok


def test_c06_stationary_phase(verdict):
    h = np.array([[0.2, 0.3], [0.3, 1.4]])
    w, v = np.linalg.eigh(h)
    period = 2 * np.pi / abs(w[1])
    t = np.linspace(0, 100 * period, 201)
    res = propagate(lambda s: h, v[:, 1], 0.0, t[-1], tol=1e-12, t_eval=t)
    overlap = res.amplitudes @ np.conj(v[:, 1])
    phase_err = float(np.max(np.abs(overlap - np.exp(-1j * w[1] * t))))
    pops = np.abs(res.amplitudes @ np.conj(v)) ** 2
    pop_err = float(np.max(np.abs(pops - pops[0])))
    ok = phase_err < 1e-10 and pop_err < 1e-10
    verdict(6, ok, f"phase error {phase_err:.2e}, population drift {pop_err:.2e} over 100 periods")
    assert ok


def _driven_run(u_s=None, with_offset=False):
    model = CompositeModel(Grid(-5, 5, 101), EnvSpec(1.0), SystemSpec.diagonal([0.0, 1.0]),
                           CouplingSpec("gaussian", 0.4, 0.8))
    ham = EffectiveHamiltonian(model, straight_line(1.0, 1.0, -5.0, np.linspace(0, 10, 11)), u_s)
    return ham, propagate(ham, [1.0, 0.0], 0.0, 10.0, tol=1e-12, t_eval=np.linspace(0, 10, 51),
                          with_offset=with_offset)


def test_c07_gauge_invariance(verdict):
    def u_s(r):
        return 0.3 + 0.5 * np.exp(-np.asarray(r) ** 2 / 3)

    ham, res = _driven_run(u_s, with_offset=True)
    u_t = lambda s: float(ham.offset(s))  # noqa: E731
    moved = gauge_transform(res, u_t)
    back = gauge_transform(moved, u_t, inverse=True)
    rng = np.random.default_rng(1)
    a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    op = a + a.conj().T
    pop_err = float(np.max(np.abs(moved.populations - res.populations)))
    obs_err = float(np.max(np.abs(moved.expectation(op) - res.expectation(op))))
    trip = float(np.max(np.abs(back.amplitudes - res.amplitudes)))
    ok = pop_err < 1e-12 and obs_err < 1e-12 and trip < 1e-12
    verdict(7, ok, f"population change {pop_err:.1e}, observable change {obs_err:.1e}, "
            f"round trip {trip:.1e}")
    assert ok


def test_c08_propagator(verdict):
    _, res = _driven_run()
    gap, lam = 1.0, 0.25
    h = np.diag([0.0, gap]) + lam * SX
    omega = np.sqrt(lam**2 + gap**2 / 4)
    t = np.linspace(0, 50, 101)
    rabi = propagate(lambda s: h, [1.0, 0.0], 0.0, 50.0, tol=1e-12, t_eval=t)
    rabi_err = float(np.max(np.abs(rabi.populations[:, 1] - lam**2 / omega**2 * np.sin(omega * t) ** 2)))
    norm = float(max(res.norm_defect.max(), rabi.norm_defect.max()))
    ok = norm < 1e-10 and rabi_err < 1e-8
    verdict(8, ok, f"norm defect {norm:.1e}, Rabi error {rabi_err:.1e}")
    assert ok


def test_c09_dirac(verdict):
    start = time.perf_counter()
    spec = DiracSpec(10.0, 1.0, Grid(0.0, 2 * np.pi, 1024))
    v_err = 0.0
    for mode in (-3, 0, 1, 2, 5):
        p = 2 * np.pi * mode / spec.length
        v = velocity_expectation(spec, plane_wave(spec, mode))
        v_err = max(v_err, abs(v - spec.c**2 * p / float(spec.energy(p))))
    rungs, slope = dirac_c_ladder((5.0, 10.0, 20.0))
    norm = max(r.norm_defect for r in rungs)
    elapsed = time.perf_counter() - start
    ok = v_err < 1e-10 and norm < 1e-10 and abs(slope + 2) < 0.4 and elapsed < 120
    verdict(9, ok, f"velocity error {v_err:.1e}, norm defect {norm:.1e}, slope {slope:.3f} "
            "(deviations " + ", ".join(f"{r.deviation:.2e}" for r in rungs) + f"), {elapsed:.1f} s")
    assert ok


def test_c10_adiabatic_identities(verdict):
    res, anti = [], 0.0
    for n in (201, 401, 801, 1601):
        model = CompositeModel(Grid(-3.0, 3.0, n), EnvSpec(1.0), SystemSpec.diagonal([-0.5, 0.5]),
                               CouplingSpec("linear", 0.4))
        c = nonadiabatic_couplings(adiabatic_states(model))
        anti = max(anti, c.antisymmetry_defect())
        res.append(float(np.max(np.abs(c.sum_rule_residual()))))
    ratios = np.array(res[:-1]) / np.array(res[1:])
    ok = bool(np.all(np.abs(ratios - 4) < 0.5)) and anti < 1e-8
    verdict(10, ok, "sum-rule residual ratios per halving " + ", ".join(f"{r:.3f}" for r in ratios)
            + f", antisymmetry {anti:.1e}")
    assert ok


def test_c11_determinism(verdict, tmp_path):
    configs = sorted(CONFIGS.glob("*.ini"))
    mismatched = []
    for path in configs:
        cfg = load_config(str(path))
        a = run_experiment(cfg, tmp_path / path.stem / "a")["files"]
        b = run_experiment(cfg, tmp_path / path.stem / "b")["files"]
        csvs = {k: v for k, v in a.items() if k.endswith(".csv")}
        if not csvs or csvs != {k: v for k, v in b.items() if k.endswith(".csv")}:
            mismatched.append(path.stem)
    ok = not mismatched
    verdict(11, ok, f"{len(configs) - len(mismatched)}/{len(configs)} configs byte-identical"
            + (f" (differ: {', '.join(mismatched)})" if mismatched else ""))
    assert ok
