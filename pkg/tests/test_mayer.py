from dataclasses import replace

import numpy as np
import pytest

from dynamics import AnalyticSelection, BallField, integrate, zero_field
from lyapunov import HalfM2Squared
from mayer import (MayerProblem, audit_solution, calibrate_tolerance, comparison_check, comparison_problem,
                   dpp_budget_sweep, dpp_check, single_particle_optimum, solve_mayer, value_lipschitz_probe)
from measures import ParameterError, dirac, make_measure, moment2


def m2_squared(nu):
    return moment2(nu).value ** 2


@pytest.fixture(scope="module")
def closed_form_problem():
    return MayerProblem(field=BallField(1.0), terminal_cost=m2_squared, initial=dirac([1.0, 0.0]), t0=0.0,
                        T=0.5, budget=2000, seed=0, sweeps=3)


@pytest.fixture(scope="module")
def closed_form_solution(closed_form_problem):
    return solve_mayer(closed_form_problem)


@pytest.fixture(scope="module")
def calibrated_tol(closed_form_problem):
    return calibrate_tolerance(closed_form_problem)


def test_constant_cost_for_any_budget(symmetric_pair):
    for budget in (1, 7, 50):
        problem = MayerProblem(field=BallField(1.0), terminal_cost=lambda nu: 3.25, initial=symmetric_pair,
                               t0=0.0, T=0.2, budget=budget, control_grid=2, steps_per_interval=5, sweeps=1)
        assert solve_mayer(problem).value == 3.25


def test_closed_form_value(closed_form_solution):
    assert closed_form_solution.value == pytest.approx(np.exp(-2.0), rel=0.05)


def test_estimate_is_above_discrete_optimum(closed_form_problem, closed_form_solution):
    exact = single_particle_optimum(1.0, closed_form_problem.dt, 100)
    assert closed_form_solution.value >= exact - 1e-12


def test_terminal_consistency(symmetric_pair):
    problem = MayerProblem(field=BallField(1.0), terminal_cost=m2_squared, initial=symmetric_pair, t0=0.5, T=0.5)
    solution = solve_mayer(problem)
    assert solution.value == m2_squared(symmetric_pair)
    assert solution.trajectory.n_steps == 0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_budget_monotone(seed):
    base = MayerProblem(field=BallField(1.0), terminal_cost=m2_squared,
                        initial=make_measure([[1.0, 0.0], [0.0, -2.0]]), t0=0.0, T=0.3, control_grid=3,
                        steps_per_interval=10, budget=150, seed=seed, sweeps=1)
    values = [solve_mayer(replace(base, budget=b)).value for b in (150, 300, 600)]
    assert values[1] <= values[0]
    assert values[2] <= values[1]


@pytest.mark.parametrize("kwargs", [{"budget": 0}, {"T": -1.0}, {"t0": 0.6}, {"control_grid": 0},
                                    {"sweeps": -1}])
def test_invalid_problem(kwargs):
    params = dict(field=BallField(1.0), terminal_cost=m2_squared, initial=dirac([1.0, 0.0]), t0=0.0, T=0.5)
    params.update(kwargs)
    with pytest.raises(ParameterError):
        MayerProblem(**params)


def test_solution_audit(closed_form_problem, closed_form_solution):
    audit = audit_solution(closed_form_problem, closed_form_solution)
    assert audit["value_mismatch"] == 0.0
    assert audit["admissible"]
    assert closed_form_solution.to_dict()["budget"] == 2000
    assert np.asarray(closed_form_solution.to_dict()["controls"]).shape == (5, 1, 2)


def test_solution_is_deterministic(closed_form_problem, closed_form_solution):
    again = solve_mayer(closed_form_problem)
    assert again.value == closed_form_solution.value
    np.testing.assert_array_equal(again.best_controls, closed_form_solution.best_controls)


def test_zero_field_values_are_constant(symmetric_pair):
    problem = MayerProblem(field=zero_field(2), terminal_cost=m2_squared, initial=symmetric_pair, t0=0.0, T=0.4,
                           control_grid=2, steps_per_interval=4, budget=10, sweeps=1)
    traj = solve_mayer(problem).trajectory
    report = dpp_check(problem, traj)
    assert np.all(report.values == m2_squared(symmetric_pair))
    assert report.oscillation == 0.0


def test_calibrated_tolerance_is_small(calibrated_tol):
    assert 3e-9 <= calibrated_tol <= 3 * 0.1 * np.exp(-2.0)


def test_dpp_nondecreasing_along_contraction(closed_form_problem, calibrated_tol):
    traj = integrate(BallField(1.0), closed_form_problem.initial, AnalyticSelection.contraction(1.0),
                     closed_form_problem.dt, closed_form_problem.T)
    report = dpp_check(closed_form_problem, traj, calibrated_tol)
    assert len(report.values) == closed_form_problem.control_grid + 1
    assert report.monotone
    assert report.values[-1] == m2_squared(traj.final)


def test_dpp_constant_along_solution(closed_form_problem, closed_form_solution, calibrated_tol):
    report = dpp_check(closed_form_problem, closed_form_solution.trajectory, calibrated_tol,
                       warm_start=closed_form_solution.best_controls)
    assert report.constant
    assert report.values[0] == closed_form_solution.value


def test_comparison_with_lyapunov_bound(calibrated_tol):
    spec = HalfM2Squared(rate_alpha=1.0)
    problem = comparison_problem(spec, BallField(1.0), dirac([1.0, 0.0]), 0.5, budget=300, sweeps=1)
    gen = np.random.default_rng(7)
    clouds = [dirac(gen.uniform(-2.0, 2.0, size=2)) for _ in range(5)]
    report = comparison_check(spec, problem, clouds, [0.0, 0.1, 0.3, 0.5], calibrated_tol)
    assert len(report.samples) == 20
    assert report.passed


def test_value_probe_skips_identical_pairs(symmetric_pair):
    problem = MayerProblem(field=BallField(1.0), terminal_cost=m2_squared, initial=symmetric_pair, t0=0.0, T=0.2,
                           control_grid=2, steps_per_interval=5, budget=20, sweeps=0)
    probe = value_lipschitz_probe(problem, [(symmetric_pair, symmetric_pair)])
    assert probe.pairs == 1
    assert probe.max_ratio == 0.0


@pytest.mark.slow
def test_dpp_violation_shrinks_with_budget(closed_form_problem):
    traj = integrate(BallField(1.0), closed_form_problem.initial, AnalyticSelection.contraction(1.0),
                     closed_form_problem.dt, closed_form_problem.T)
    medians = dpp_budget_sweep(replace(closed_form_problem, sweeps=1), traj, budgets=[200, 2000], seeds=range(10))
    assert medians[2000] <= medians[200]
