"""Command-line driver: one subcommand per pipeline, CSV + summary + manifest per run."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .adiabatic import adiabatic_states, averaged_potential, nonadiabatic_couplings, surfaces_table
from .analysis import (
    SEPARABLE,
    comparison_rows,
    decoupling_limit_study,
    decoupling_rows,
    gaussian_packet,
    ladder_rows,
    nonincreasing,
    uncertainty_check,
    uncertainty_rows,
)
from .config import EXPERIMENTS, ConfigError, RunConfig, load_config
from .exact_solver import (
    SolverError,
    box_sensitivity,
    smatrix_rows,
    solve_bound,
    solve_close_coupling,
)
from .experiments import dirac_c_ladder, mott_ladder, oscillator_grid_ladder, wkb_mass_ladder
from .model import CompositeModel, CouplingSpec, EnvSpec, Grid, ModelError, validate_model
from .relativistic import DiracSpec, plane_wave, velocity_expectation
from .semiclassical import (
    SemiclassicalError,
    classical_trajectory,
    trajectory_rows,
    wkb_rows,
    wkb_wavefunction,
)
from .tdse import (
    EffectiveHamiltonian,
    StepSizeError,
    TimeRangeError,
    WindowError,
    impact_parameter_run,
    level_spread,
    propagate,
    propagation_rows,
)

NUMERICAL_ERRORS = (SolverError, SemiclassicalError, StepSizeError, TimeRangeError, WindowError,
                    ModelError, np.linalg.LinAlgError, ArithmeticError)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


class Run:
    """Collects tables and PASS/FAIL checks for one pipeline."""

    def __init__(self):
        self.tables: list[tuple[str, list, list]] = []
        self.checks: list[tuple[str, bool, str]] = []
        self.stages: dict[str, float] = {}
        self.current: str | None = None

    def table(self, name, header, rows):
        self.tables.append((name, header, rows))

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    def stage(self, name):
        run = self

        class _Timer:
            def __enter__(self):
                self.t = time.perf_counter()
                run.current = name

            def __exit__(self, exc_type, *_):
                run.stages[name] = time.perf_counter() - self.t
                if exc_type is None:
                    run.current = None

        return _Timer()


# --- pipelines -------------------------------------------------------------------


def _weights(cfg: RunConfig, n_sys: int) -> np.ndarray:
    w = np.zeros(n_sys)
    given = np.asarray(cfg["semiclassical"]["weights"], dtype=float)
    w[: len(given)] = given
    return w / np.linalg.norm(w)


def _u_s(cfg: RunConfig, model: CompositeModel):
    if not cfg["semiclassical"]["averaged"]:
        return None
    return averaged_potential(adiabatic_states(model), _weights(cfg, model.n_sys))


def run_validate(cfg, run):
    report = validate_model(cfg.model(), scattering=cfg["coupling"]["kind"] == "gaussian")
    run.table("validation.csv", ["problem"], [[p] for p in report])
    run.check("model valid", not report, "; ".join(report))


def run_adiabatic(cfg, run):
    model = cfg.model()
    with run.stage("basis"):
        basis = adiabatic_states(model)
        coup = nonadiabatic_couplings(basis)
    run.table("surfaces.csv", *surfaces_table(basis, coup))
    run.check("orthonormal columns", basis.gram_deviation() < 1e-10, f"{basis.gram_deviation():.3g}")
    if basis.is_real:
        run.check("F antisymmetric", coup.antisymmetry_defect() < 1e-8, f"{coup.antisymmetry_defect():.3g}")
    run.check("no flagged crossings", not basis.crossings, f"{len(basis.crossings)} flagged")


def run_bound(cfg, run):
    model = cfg.model()
    b = cfg["bound"]
    with run.stage("solve"):
        sol = solve_bound(model, b["k_lowest"], b["method"], b["stencil"])
    with run.stage("box"):
        shift = box_sensitivity(model, b["k_lowest"], b["box_factor"], b["method"])
    rows = [[k, e, r, s] for k, (e, r, s) in enumerate(zip(sol.energies, sol.residuals, shift))]
    run.table("spectrum.csv", ["index", "energy", "residual", "box_shift"], rows)
    run.check("residuals below 1e-8", np.max(sol.residuals) < 1e-8, f"{np.max(sol.residuals):.3g}")


def run_scatter(cfg, run):
    model = cfg.model()
    s = cfg["scatter"]
    if s["energy"] is None:
        raise ConfigError("scatter.energy is required")
    with run.stage("close coupling"):
        sol = solve_close_coupling(model, adiabatic_states(model), s["energy"], s["incoming"])
    run.table("smatrix.csv", *smatrix_rows(sol))
    run.check("S unitary to 1e-6", sol.unitarity_defect() < 1e-6, f"{sol.unitarity_defect():.3g}")


def run_wkb(cfg, run):
    model = cfg.model()
    sc = cfg["semiclassical"]
    if sc["energy"] is None:
        raise ConfigError("semiclassical.energy is required")
    window = None
    if np.isfinite(sc["window_min"]) and np.isfinite(sc["window_max"]):
        window = (sc["window_min"], sc["window_max"])
    with run.stage("wkb"):
        st = wkb_wavefunction(model.env, model.grid, sc["energy"], _u_s(cfg, model), window)
    run.table("wkb.csv", *wkb_rows(st))
    flux = st.flux()[st.valid]
    spread = float(np.ptp(flux) / np.mean(flux))
    run.check("flux constant to 1e-10", spread < 1e-10, f"{spread:.3g}")
    run.check("quadrature converged", st.quadrature_change < 1e-10, f"{st.quadrature_change:.3g}")


def _trajectory(cfg, model):
    sc = cfg["semiclassical"]
    if sc["energy"] is None:
        raise ConfigError("semiclassical.energy is required")
    t = np.linspace(0.0, sc["t_end"], sc["n_samples"])
    return classical_trajectory(
        model.env, sc["energy"], sc["r_start"], sc["direction"], t,
        u_s=_u_s(cfg, model), grid=model.grid,
    )


def run_trajectory(cfg, run):
    model = cfg.model()
    with run.stage("integrate"):
        traj = _trajectory(cfg, model)
    run.table("trajectory.csv", *trajectory_rows(traj))
    worst = float(np.max(np.abs(traj.energy_residual)))
    run.check("energy conserved to 1e-8 relative", worst < 1e-8 * max(abs(traj.energy), 1e-300),
              f"{worst:.3g}")
    run.check("no turning point in window", not traj.turning)


def run_propagate(cfg, run):
    model = cfg.model()
    traj = _trajectory(cfg, model)
    ham = EffectiveHamiltonian(model, traj)
    _, vecs = np.linalg.eigh(model.local_hamiltonians(traj.r[0])[0])
    psi0 = vecs[:, cfg["propagate"]["initial"]]
    t_eval = np.linspace(traj.t[0], traj.t[-1], cfg["propagate"]["n_samples"])[1:]
    with run.stage("propagate"):
        res = propagate(ham, psi0, traj.t[0], traj.t[-1], tol=cfg.tol, t_eval=t_eval)
    run.table("propagation.csv", *propagation_rows(res))
    run.check("norm defect below 1e-10", res.norm_defect.max() < 1e-10, f"{res.norm_defect.max():.3g}")


def run_impact(cfg, run):
    model = cfg.model()
    b = cfg["beam"]
    p_z = np.sqrt(2 * model.env.mass * b["ratio"] * level_spread(model))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with run.stage("impact"):
            res = impact_parameter_run(model, p_z, b["initial"], tol=cfg.tol)
    run.table("impact.csv", ["level", "probability"], [[k, p] for k, p in enumerate(res.probabilities)])
    run.table("propagation.csv", *propagation_rows(res.result))
    run.check("norm defect below 1e-10", res.result.norm_defect.max() < 1e-10)
    run.check("kinetic/spacing ratio at least 10", res.kinetic_over_spacing >= 10,
              f"{res.kinetic_over_spacing:.6g}")


def run_mott(cfg, run):
    model = cfg.model()
    ratios = cfg["mott"]["ratios"]
    with run.stage("ladder"):
        reports = mott_ladder(model, ratios, cfg.tol)
    run.table("mott.csv", *comparison_rows(reports))
    rel = [r.transition_relative for r in reports]
    run.table("mott_summary.csv", ["ratio", "relative_difference"], list(zip(ratios, rel)))
    limit = cfg["mott"]["max_relative"]
    run.check(f"relative difference below {limit:g} at ratio >= 100",
              all(r < limit for r, x in zip(rel, ratios) if x >= 100))
    run.check("differences nonincreasing along the ladder", nonincreasing(rel))


def run_dirac(cfg, run):
    d = cfg["dirac"]
    spec = DiracSpec(d["speeds"][0], d["mass"], Grid(0.0, d["box"], d["n_points"]))
    rows = []
    worst = 0.0
    for k in (1, 2, 3):
        v = velocity_expectation(spec, plane_wave(spec, k))
        p = 2 * np.pi * k / spec.length
        target = spec.c**2 * p / spec.energy(p)
        worst = max(worst, abs(v - target))
        rows.append([k, p, v, target])
    run.table("dirac_velocity.csv", ["mode", "p", "velocity", "c2p_over_E"], rows)
    run.check("velocity equals c^2 p / E to 1e-10", worst < 1e-10, f"{worst:.3g}")
    with run.stage("c ladder"):
        rungs, slope = dirac_c_ladder(
            d["speeds"], d["mass"], d["strength"], d["width"], d["q"], d["half_window"], d["box"],
            d["n_points"], d["env_mass"], d["env_momentum"], d["n_modes"], d["tol"],
        )
    run.table("dirac_ladder.csv", ["c", "dirac", "reference", "deviation", "norm_defect", "steps"],
              [[r.c, r.dirac_population, r.reference_population, r.deviation, r.norm_defect, r.steps]
               for r in rungs])
    run.check("norm defect below 1e-10", max(r.norm_defect for r in rungs) < 1e-10)
    run.check("deviation slope within 20% of -2", abs(slope + 2) < 0.4, f"{slope:.4f}")


def run_uncertainty(cfg, run):
    model = cfg.model()
    u = cfg["uncertainty"]
    reports = [uncertainty_check(gaussian_packet(model.grid, u["center"], u["width"], u["momentum"]), model)]
    sat = reports[0].saturation - 1
    rng = np.random.default_rng(cfg.seed)
    g = Grid(model.grid.r_min, model.grid.r_max, u["random_grid_points"])
    small = CompositeModel(g, model.env, model.sys, model.coupling)
    span = g.r_max - g.r_min
    with run.stage("random packets"):
        for _ in range(u["packets"]):
            psi = np.zeros(g.n_points, dtype=complex)
            for _ in range(rng.integers(1, 4)):
                psi += rng.normal() * gaussian_packet(
                    g, rng.uniform(-0.15, 0.15) * span, rng.uniform(0.02, 0.08) * span,
                    rng.uniform(-5.0, 5.0),
                )
            psi /= np.linalg.norm(psi)
            reports.append(uncertainty_check(psi, small))
    run.table("uncertainty.csv", *uncertainty_rows(reports))
    worst = min(r.slack for r in reports)
    run.check("Gaussian packet saturates to 1e-6", abs(sat) < 1e-6, f"{sat:.3g}")
    run.check("Robertson bound holds within 1e-9", worst > -1e-9, f"min slack {worst:.3g}")


def run_decoupling(cfg, run):
    model = cfg.model()
    d = cfg["decoupling"]
    p_z = np.sqrt(2 * model.env.mass * d["ratio"] * level_spread(model))
    bound_model = None
    if d["bound_points"] > 0:
        bound_model = CompositeModel(
            Grid(-8.0, 8.0, d["bound_points"]),
            EnvSpec(1.0, "harmonic"),
            model.sys,
            CouplingSpec("linear", model.coupling.strength),
        )
    with run.stage("ladder"):
        rows = decoupling_limit_study(model, p_z, d["strengths"], bound_model, tol=cfg.tol)
    run.table("decoupling.csv", *decoupling_rows(rows))
    live = [r.delta_e_sys for r in rows if r.note != SEPARABLE]
    run.check("delta E_S strictly decreasing", bool(np.all(np.diff(live) < 0)))
    run.check("zero coupling reported separable", rows[-1].note == SEPARABLE or rows[-1].strength > 0)


def run_ladder(cfg, run):
    lad = cfg["ladder"]
    values = lad["values"]
    kind = lad["kind"]
    if values is None:
        raise ConfigError("ladder.values is required")
    with run.stage(kind):
        if kind == "oscillator":
            m = cfg.model()
            h, rows = oscillator_grid_ladder(tuple(int(v) for v in values), m.grid.r_max, m.env.omega,
                                             m.env.mass)
            run.table("ladder.csv", *ladder_rows(rows, "n_points"))
            ok = all(3.5 < r.ratio < 4.5 for r in rows[1:] if r.error > 1e-12)
            run.check("error ratios near 4", ok)
        elif kind == "wkb_mass":
            rows, _ = wkb_mass_ladder(tuple(values), classical_energy=lad["energy"],
                                      window_fraction=lad["window_fraction"])
            run.table("ladder.csv", *ladder_rows(rows, "mass"))
            run.check("error ratios above 1.8", all(r.ratio >= 1.8 for r in rows[1:]))
        elif kind == "mott":
            reports = mott_ladder(cfg.model(), tuple(values), cfg.tol)
            rel = [r.transition_relative for r in reports]
            run.table("ladder.csv", ["ratio", "relative_difference"], list(zip(values, rel)))
            run.check("differences nonincreasing", nonincreasing(rel))
        else:
            raise ConfigError(f"unknown ladder kind {kind!r}")


PIPELINES = {
    "validate": run_validate,
    "adiabatic": run_adiabatic,
    "solve-bound": run_bound,
    "solve-scatter": run_scatter,
    "wkb": run_wkb,
    "trajectory": run_trajectory,
    "propagate": run_propagate,
    "impact": run_impact,
    "dirac": run_dirac,
    "uncertainty": run_uncertainty,
    "mott": run_mott,
    "decoupling": run_decoupling,
    "ladder": run_ladder,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_experiment(cfg: RunConfig, out: Path | None = None) -> dict:
    """Run the configured pipeline and write CSVs, summary.txt and manifest.json."""
    out = Path(out if out is not None else cfg["run"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    run = Run()
    try:
        PIPELINES[cfg.experiment](cfg, run)
    except Exception as exc:
        exc.stage = run.current or "setup"
        raise
    files = {}
    for name, header, rows in run.tables:
        write_csv(out / name, header, rows)
        files[name] = _sha256(out / name)
    lines = [f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
             for name, ok, detail in run.checks]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    files["summary.txt"] = _sha256(out / "summary.txt")
    manifest = {
        "experiment": cfg.experiment,
        "config_sha256": cfg.digest,
        "version": __version__,
        "seed": cfg.seed,
        "files": files,
        "stage_seconds": run.stages,
        "checks": {name: ok for name, ok, _ in run.checks},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emergent-time", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--out", help="output directory (overrides run.out)")
        p.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
        p.add_argument("--tol", type=float, help="propagation tolerance (overrides run.tol)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config).with_overrides(
            experiment=args.command, seed=args.seed, tol=args.tol, out=args.out
        )
    except (OSError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        manifest = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        stage = getattr(exc, "stage", "setup")
        print(f"numerical failure in {args.command} (stage {stage}): {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2
    for name, ok in manifest["checks"].items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"wrote {len(manifest['files'])} files to {cfg['run']['out']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
