from __future__ import annotations

import numpy as np
import pytest
import sympy

from diracjet import corpus, dba
from diracjet.expr import field, momentum, multiplier
from diracjet.numerics import (
    CompileError,
    EvolutionError,
    FieldState,
    Grid,
    NumericError,
    build_system,
    check_eom_equivalence,
    compile,
    evolve,
    polar_cutoff,
    random_fields,
    residual,
    snapshot_csv,
)

phi, phi_x, phi_xx = (field("phi", k).symbol for k in range(3))


def periodic_sech(grid: Grid, center: float, t: float = 0.0, speed: float = 0.0, power: int = 1):
    return sum(1 / np.cosh(grid.x - center - speed * t - m * grid.length) ** power for m in range(-3, 4))


# --- grid and compiled expressions -------------------------------------------------------

def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(100)
    with pytest.raises(ValueError):
        Grid(8)
    g = Grid(64, 10.0)
    assert g.x[1] == pytest.approx(10.0 / 64)


def test_spectral_derivative_is_exact_for_band_limited_data():
    g = Grid(64, 7.0)
    s = np.sin(2 * np.pi * g.x / g.length)
    out = compile(phi_x, g)({"phi": s})
    expected = 2 * np.pi / g.length * np.cos(2 * np.pi * g.x / g.length)
    assert np.max(np.abs(out - expected)) < 1e-12


def test_quotient_of_jets():
    g = Grid(64, 5.0)
    w = 2 * np.pi / g.length
    f = 2 + np.cos(w * g.x)
    out = compile(phi_xx / phi, g)({"phi": f})
    expected = -w ** 2 * np.cos(w * g.x) / f
    assert np.max(np.abs(out - expected) / np.abs(expected).max()) < 1e-10


def test_zero_expression():
    g = Grid(32)
    assert np.array_equal(compile(sympy.Integer(0), g)({"phi": np.ones(32)}), np.zeros(32))


def test_ln_of_non_positive_sample_reports_index():
    g = Grid(32)
    f = np.ones(32)
    f[7] = -0.5
    with pytest.raises(NumericError, match="index 7"):
        compile(sympy.log(phi), g)({"phi": f})


@pytest.mark.parametrize("atom", [momentum("phi"), multiplier("lam1")])
def test_compile_rejects_non_field_atoms(atom):
    with pytest.raises(CompileError):
        compile(phi * atom.symbol, Grid(32))


def test_missing_samples():
    with pytest.raises(NumericError, match="no samples"):
        compile(field("theta", 1).symbol, Grid(32))({"phi": np.ones(32)})


def test_dealiasing_removes_aliased_product_modes():
    g = Grid(32, 2 * np.pi)
    f = np.cos(10 * g.x)
    plain = compile(phi ** 2, g)({"phi": f})
    filtered = compile(phi ** 2, g, dealias=True)({"phi": f})
    assert np.allclose(plain, 0.5 + 0.5 * np.cos(20 * g.x))
    assert np.allclose(filtered, 0.5)


def test_log_seeded_jets_match_closed_form():
    g = Grid(64, 2 * np.pi)
    x = sympy.Symbol("x")
    f = sympy.Rational(3, 2) + sympy.sin(x) * sympy.Rational(3, 10) + sympy.cos(2 * x) / 10
    exact = sympy.lambdify(x, sympy.diff(f, x, 4) / f + sympy.diff(f, x) * sympy.diff(f, x, 3))(g.x)
    e = field("phi", 4).symbol / phi + phi_x * field("phi", 3).symbol
    samples = sympy.lambdify(x, f)(g.x)
    direct = compile(e, g)({"phi": samples})
    via_log = compile(e, g)({"ln(phi)": np.log(samples)})
    assert np.max(np.abs(direct - exact)) < 1e-9
    assert np.max(np.abs(via_log - exact)) < 1e-9


def test_random_fields_are_positive_and_seeded():
    g = Grid(64)
    a = random_fields(g, ["phi"], np.random.default_rng(3))["phi"]
    b = random_fields(g, ["phi"], np.random.default_rng(3))["phi"]
    assert np.array_equal(a, b)
    assert a.min() > 0.5


# --- symbolic-numeric verification -----------------------------------------------------

@pytest.mark.parametrize("name", ["cubic-nls", "log-nls", "kdv", "fourth-order-nls", "fourth-order-nls-direct"])
def test_eom_equivalence(systems, name):
    spec, report = systems(name)
    result = check_eom_equivalence(spec, report, Grid(256), seed=42, tol=1e-8)
    assert result.passed, result.per_check


def test_corrupted_multiplier_fails_equivalence(systems):
    spec, report = systems("cubic-nls")
    lam2 = multiplier("lam2")
    bad = dba.with_multipliers(report, {lam2: report.multiplier_solution[lam2] + 1})
    result = check_eom_equivalence(spec, bad, Grid(64), seed=42, tol=1e-8)
    assert not result.passed
    assert result.max_rel_error > 0.1


def test_equivalence_refuses_foreign_report(systems):
    spec, _ = systems("cubic-nls")
    _, other = systems("log-nls")
    with pytest.raises(ValueError):
        check_eom_equivalence(spec, other, Grid(64))


def test_cubic_soliton_residual(systems):
    _, report = systems("cubic-nls")
    # u = sech(x) exp(i t): the amplitude is stationary and theta = t at every time
    g = Grid(512, 40.0)
    fields = {"phi": periodic_sech(g, 20.0), "phi_t": np.zeros(g.n),
              "theta_x": np.zeros(g.n), "theta_t": np.ones(g.n)}
    assert residual(report, fields, g) < 1e-9


def test_kdv_soliton_residual(systems):
    _, report = systems("kdv")
    g = Grid(512, 40.0)
    t = 0.4
    s = periodic_sech(g, 10.0, t, 4.0, power=2)
    tanh = sum(np.tanh(g.x - 10.0 - 4.0 * t - m * g.length) / np.cosh(g.x - 10.0 - 4.0 * t - m * g.length) ** 2
               for m in range(-3, 4))
    fields = {"phi_x": 2 * s, "psi": -4 * tanh, "phi_xt": 16 * tanh}
    assert residual(report, fields, g) < 1e-8


def test_residual_of_non_solution_is_large(systems):
    _, report = systems("cubic-nls")
    g = Grid(128, 2 * np.pi)
    data = random_fields(g, ["phi", "theta"], np.random.default_rng(0))
    data.update(phi_t=np.zeros(g.n), theta_t=np.zeros(g.n))
    assert residual(report, data, g) > 0.1


def test_soliton_residual_converges_spectrally(systems):
    _, report = systems("cubic-nls")
    errors = []
    for n in (128, 256, 512, 1024):
        g = Grid(n, 40.0)
        fields = {"phi": periodic_sech(g, 20.0), "phi_t": np.zeros(n),
                  "theta_x": np.zeros(n), "theta_t": np.ones(n)}
        errors.append(residual(report, fields, g))
    for coarse, fine in zip(errors, errors[1:]):
        assert fine < max(coarse / 10, 1e-12)


# --- time evolution ----------------------------------------------------------------------

def test_variables_chosen_per_system(systems):
    g = Grid(64, 40.0)
    keys = {name: [v.key for v in build_system(systems(name)[1], g).variables]
            for name in ("cubic-nls", "log-nls", "kdv")}
    assert keys == {"cubic-nls": ["ln(phi)", "theta_x"], "log-nls": ["ln(phi)", "theta_x"], "kdv": ["phi_x"]}


def test_auxiliary_fourth_order_system_not_evolvable(systems):
    with pytest.raises(EvolutionError, match="xi"):
        build_system(systems("fourth-order-nls")[1], Grid(64))


def test_mass_conserved_for_schroedinger_systems(systems):
    for name in ("cubic-nls", "log-nls"):
        g = Grid(256, 40.0, polar_cutoff(0.2))
        system = build_system(systems(name)[1], g)
        traj = evolve(system, corpus.initial_state(name, g), 1e-4, 0.2, monitor_every=50)
        assert traj.relative_drift("mass") < 1e-8 * 0.2
        assert traj.relative_drift("hamiltonian") < 1e-8


def test_fourth_order_short_time(systems):
    g = Grid(64, 40.0)
    system = build_system(systems("fourth-order-nls-direct")[1], g)
    traj = evolve(system, corpus.initial_state("fourth-order-nls-direct", g), 1e-4, 0.1, monitor_every=100)
    assert traj.relative_drift("mass") < 1e-10
    assert traj.relative_drift("hamiltonian") < 1e-10


def test_zero_data_stays_zero(systems):
    g = Grid(64, 40.0)
    system = build_system(systems("kdv")[1], g)
    traj = evolve(system, {"phi_x": np.zeros(64)}, 1e-3, 0.05)
    assert not np.any(traj.final.values["phi_x"])
    assert not np.any(traj.monitors["mass"]) and not np.any(traj.monitors["hamiltonian"])


def test_zero_amplitude_is_a_coordinate_singularity(systems):
    g = Grid(64, 40.0)
    system = build_system(systems("cubic-nls")[1], g)
    with pytest.raises(NumericError, match="positive"):
        evolve(system, {"phi": np.zeros(64), "theta_x": np.zeros(64)}, 1e-3, 0.01)


def test_instability_reports_step(systems):
    g = Grid(256, 40.0, polar_cutoff(1.0))
    system = build_system(systems("cubic-nls")[1], g)
    with pytest.raises(EvolutionError) as info:
        evolve(system, corpus.initial_state("cubic-nls", g), 0.1, 1.0)
    assert info.value.step is not None and info.value.step <= 10


def test_time_step_convergence_is_fourth_order(systems):
    g = Grid(128, 40.0)
    system = build_system(systems("kdv")[1], g)
    init = corpus.initial_state("kdv", g)
    ref = evolve(system, init, 1.25e-4, 0.2).final.values["phi_x"]
    coarse = np.max(np.abs(evolve(system, init, 2e-3, 0.2).final.values["phi_x"] - ref))
    fine = np.max(np.abs(evolve(system, init, 1e-3, 0.2).final.values["phi_x"] - ref))
    assert 12 < coarse / fine < 20


def test_csv_output(systems):
    g = Grid(64, 40.0)
    system = build_system(systems("kdv")[1], g)
    traj = evolve(system, corpus.initial_state("kdv", g), 1e-3, 0.01, snapshot_times=[0.005])
    lines = traj.to_csv().splitlines()
    assert lines[0] == "t,mass,hamiltonian"
    assert len(lines) == 1 + 11
    assert len(traj.snapshots) == 1 and traj.snapshots[0].time == pytest.approx(0.005)
    snap = snapshot_csv(g, traj.final).splitlines()
    assert snap[0] == "x,phi_x" and len(snap) == 65


def test_field_state_check():
    g = Grid(32)
    FieldState({"phi": np.ones(32)}).check(g)
    with pytest.raises(ValueError):
        FieldState({"phi": np.ones(31)}).check(g)
    with pytest.raises(ValueError):
        FieldState({"phi": np.full(32, np.nan)}).check(g)


def test_plain_two_thirds_rule_is_not_enough_for_the_soliton_tails(systems):
    # In log-amplitude form the tails grow at rate ~2|k|; without the extra
    # cutoff the run overflows before t = 1 instead of drifting silently.
    _, report = systems("cubic-nls")
    g = Grid(512, 40.0)
    with pytest.raises(EvolutionError) as info:
        evolve(build_system(report, g), corpus.initial_state("cubic-nls", g), 1e-4, 1.0, monitor_every=100)
    assert 0 < info.value.step < 10_000
