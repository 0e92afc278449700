import numpy as np
import pytest

from emergent_time.adiabatic import adiabatic_states
from emergent_time.analysis import (
    SEPARABLE,
    LadderError,
    MappingError,
    compare_exact_vs_emergent,
    conditional_environment_state,
    convergence_ladder,
    decoupling_limit_study,
    gaussian_packet,
    gaussian_product_closed_form,
    nonincreasing,
    uncertainty_check,
)
from emergent_time.exact_solver import solve_bound, solve_close_coupling
from emergent_time.experiments import beam_model, mott_rung, oscillator_grid_ladder
from emergent_time.model import CompositeModel, CouplingSpec, EnvSpec, Grid, SystemSpec
from emergent_time.tdse import impact_parameter_run


def _free(n=16001, half=8.0, mass=1.0):
    return CompositeModel(Grid(-half, half, n), EnvSpec(mass), SystemSpec.diagonal([0.0, 1.0]))


def test_gaussian_saturates_bound():
    model = _free()
    rep = uncertainty_check(gaussian_packet(model.grid, 0.0, 1.0, 400.0), model)
    assert abs(rep.saturation - 1) < 1e-6
    assert rep.delta_r == pytest.approx(1.0, rel=1e-9)


def test_gaussian_matches_continuum_when_resolved():
    # p0 h = 0.04 here; at p0 = 400 the lattice dispersion shows at the percent level
    model = _free()
    rep = uncertainty_check(gaussian_packet(model.grid, 0.0, 1.0, 40.0), model, stencil=5)
    product, bound = gaussian_product_closed_form(1.0, 40.0, 1.0)
    assert rep.delta_h * rep.delta_r == pytest.approx(product, rel=1e-5)
    assert rep.bound == pytest.approx(bound, rel=1e-5)


def test_broad_slow_packet_sits_above_bound():
    model = _free()
    rep = uncertainty_check(gaussian_packet(model.grid, 0.0, 1.0, 0.2), model)
    product, bound = gaussian_product_closed_form(1.0, 0.2, 1.0)
    assert rep.delta_h * rep.delta_r == pytest.approx(product, rel=1e-4)
    assert rep.saturation > 1.5
    assert rep.momentum_over_mass == pytest.approx(rep.velocity, rel=1e-12)


def test_bound_holds_for_random_states():
    model = _free(n=201, half=4.0)
    rng = np.random.default_rng(3)
    worst = np.inf
    for _ in range(1000):
        psi = rng.normal(size=201) + 1j * rng.normal(size=201)
        psi /= np.linalg.norm(psi)
        worst = min(worst, uncertainty_check(psi, model).slack)
    assert worst > -1e-9


def test_standing_state_has_no_time():
    model = _free(n=401)
    rep = uncertainty_check(np.abs(gaussian_packet(model.grid, 0.0, 1.0, 0.0)), model)
    assert rep.standing and np.isnan(rep.delta_t)
    with pytest.raises(ValueError):
        uncertainty_check(np.ones(401), model)


def _coupled_bound(strength):
    return CompositeModel(Grid(-8, 8, 201), EnvSpec(1.0, "harmonic"), SystemSpec.diagonal([0.0, 1.0]),
                          CouplingSpec("linear", strength))


def test_partial_trace_vs_projection():
    for strength, same in ((0.0, True), (0.4, False)):
        model = _coupled_bound(strength)
        psi = solve_bound(model, 1).vectors[:, 0]
        tr, w_tr = conditional_environment_state(psi, 201, 2, "partial_trace")
        pr, w_pr = conditional_environment_state(psi, 201, 2, "projection", adiabatic_states(model), 0)
        a = uncertainty_check(tr, model).delta_h
        b = uncertainty_check(pr, model).delta_h
        assert w_tr == 1.0
        if same:
            assert a == pytest.approx(b, abs=1e-6)  # both are eigenstates of H_E
            assert w_pr == pytest.approx(1.0, abs=1e-12)
        else:
            assert abs(a - b) > 1e-4
            assert w_pr < 1.0


def test_decoupling_ladder():
    model = beam_model(n_points=601)
    p_z = np.sqrt(2 * 2000 * 100.0)
    rows = decoupling_limit_study(model, p_z, [0.4, 0.2, 0.1, 0.0])
    live = [r.delta_e_sys for r in rows[:-1]]
    assert np.all(np.diff(live) < 0)
    assert rows[-1].note == SEPARABLE and rows[-1].delta_t == np.inf
    assert all(r.product == pytest.approx(0.5) for r in rows[:-1])
    with pytest.raises(LadderError):
        decoupling_limit_study(model, p_z, [0.1, 0.2, 0.4])
    with pytest.raises(LadderError):
        decoupling_limit_study(model, p_z, [0.2, -0.1])


def test_uncoupled_comparison_agrees_exactly():
    rep = mott_rung(beam_model(strength=0.0, n_points=601), 100.0)
    assert rep.max_abs < 1e-12 and rep.valid


def test_slow_beam_flags_asymmetry():
    rep = mott_rung(beam_model(strength=0.1, n_points=601), 20.0)
    assert not rep.valid and "asymmetry" in rep.warning


def test_mapping_errors():
    model = beam_model(strength=0.1, n_points=601)
    exact = solve_close_coupling(model, adiabatic_states(model), 100.0, 0)
    emergent = impact_parameter_run(model, np.sqrt(2 * 2000 * 100.0))
    with pytest.raises(MappingError):
        compare_exact_vs_emergent(exact, emergent, {0: 0, 1: 5})
    with pytest.raises(MappingError):
        compare_exact_vs_emergent(exact, emergent, {0: 1, 1: 0}, initial=0)
    with pytest.raises(MappingError):
        compare_exact_vs_emergent(exact, np.array([1.0, 0.0, 0.0]))


def test_ladders():
    with pytest.raises(LadderError):
        convergence_ladder([1, 2], lambda v: 1.0 / v)
    _, rows = oscillator_grid_ladder()
    assert nonincreasing([r.error for r in rows])
    for r in rows[1:]:
        assert r.ratio == pytest.approx(4.0, rel=0.05)
