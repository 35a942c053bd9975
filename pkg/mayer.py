#!/usr/bin/env python3
"""
Mayer problem on particle clouds
Upper-bound estimator of U_g(t, mu) = inf g(mu_T) over admissible particle flows:
batched random shooting over piecewise-constant proposals, coordinate-descent
refinement, and the dynamic-programming and comparison checks built on it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from dynamics import (BallField, FieldSpec, SelectionPolicy, TrajectoryRecord, check_admissible, integrate,
                      project_onto_balls)
from lyapunov import LyapunovSpec
from measures import DiscreteMeasure, ParameterError, dirac, moment2, particle_measure
from transport import w2

logger = logging.getLogger(__name__)

# ---------------- CONFIG ----------------
DEFAULT_CONTROL_GRID = 5
DEFAULT_STEPS_PER_INTERVAL = 20
DEFAULT_SWEEPS = 3
TRIAL_SCALES = 5          # perturbation scales b, b/2, ..., b/16
TRIAL_DIRECTIONS = 4      # random directions per scale
TOL_DPP_FACTOR = 3.0
TOL_DPP_FLOOR = 1e-9
TIME_MATCH_TOL = 1e-9
# ----------------------------------------

TerminalCost = Callable[[DiscreteMeasure], float]


@dataclass(frozen=True)
class MayerProblem:
    field: FieldSpec
    terminal_cost: TerminalCost
    initial: DiscreteMeasure
    t0: float
    T: float
    control_grid: int = DEFAULT_CONTROL_GRID
    budget: int = 2000
    seed: int = 0
    steps_per_interval: int = DEFAULT_STEPS_PER_INTERVAL
    sweeps: int = DEFAULT_SWEEPS
    box_scale: float = 1.0
    warm_start: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.t0 < 0 or self.T < self.t0:
            raise ParameterError(f"need 0 <= t0 <= T, got t0={self.t0}, T={self.T}")
        if self.budget < 1:
            raise ParameterError(f"budget must be at least 1, got {self.budget}")
        if self.control_grid < 1 or self.steps_per_interval < 1:
            raise ParameterError("control_grid and steps_per_interval must be positive")
        if self.sweeps < 0:
            raise ParameterError(f"sweeps must be nonnegative, got {self.sweeps}")

    @property
    def horizon(self) -> float:
        return self.T - self.t0

    @property
    def dt(self) -> float:
        return self.horizon / (self.control_grid * self.steps_per_interval)

    def box_half_width(self) -> float:
        """Proposal box scaled by the growth bound of F at the initial cloud."""
        nu = self.initial
        reach = 1.0 + float(np.max(np.linalg.norm(nu.points, axis=1)))
        return self.box_scale * self.field.growth_constant() * (1.0 + moment2(nu).value) * reach

    def describe(self) -> dict:
        return {"field": self.field.describe(), "t0": self.t0, "T": self.T, "control_grid": self.control_grid,
                "budget": self.budget, "seed": self.seed, "steps_per_interval": self.steps_per_interval,
                "sweeps": self.sweeps}


@dataclass
class MayerSolution:
    value: float
    best_controls: np.ndarray   # (control_grid, n, d) pre-projection proposals
    trajectory: TrajectoryRecord
    seed: int
    budget: int
    refined: int = 0

    def to_dict(self) -> dict:
        return {"value": self.value, "seed": self.seed, "budget": self.budget,
                "controls": self.best_controls.tolist()}


class ControlSequence(SelectionPolicy):
    """Replays piecewise-constant proposals, one block per steps_per_interval Euler steps."""

    def __init__(self, controls: np.ndarray, steps_per_interval: int):
        super().__init__()
        self.name = "mayer-controls"
        self.controls = np.asarray(controls, dtype=float)
        self.steps_per_interval = steps_per_interval
        self._step = 0

    def reset(self):
        super().reset()
        self._step = 0

    def propose(self, t, mu, F, centers, radii):
        block = min(self._step // self.steps_per_interval, len(self.controls) - 1)
        self._step += 1
        return self.controls[block]


# ---------------------------------------------------------------------------
# Batched rollouts
# ---------------------------------------------------------------------------

def _rollout(F: FieldSpec, start: np.ndarray, weights: np.ndarray, controls: np.ndarray,
             steps_per_interval: int, dt: float, keep_boundaries: bool = False):
    """Euler rollouts for a batch (S, n, d) of starts under controls (S, G, n, d)."""
    X = np.array(start, dtype=float)
    boundaries = [X.copy()] if keep_boundaries else None
    for g in range(controls.shape[1]):
        for _ in range(steps_per_interval):
            centers, radii = F.images_batch(X, weights)
            X = X + dt * project_onto_balls(controls[:, g], centers, radii)
        if keep_boundaries:
            boundaries.append(X.copy())
    return X, boundaries


def _costs(g: TerminalCost, terminal: np.ndarray, weights: np.ndarray) -> np.ndarray:
    costs = np.array([g(particle_measure(pts, weights)) for pts in terminal], dtype=float)
    return np.where(np.isfinite(costs), costs, np.inf)


def _sample_controls(problem: MayerProblem, index_range: range, b: float) -> np.ndarray:
    """Shooting samples with one spawned seed per sample index, so prefixes do not depend on budget."""
    n, d = problem.initial.points.shape
    children = np.random.SeedSequence(problem.seed).spawn(index_range.stop)
    return np.stack([np.random.default_rng(children[i]).uniform(-b, b, size=(problem.control_grid, n, d))
                     for i in index_range])


def _prefix_lengths(budget: int) -> List[int]:
    lengths, m = [], budget
    while True:
        lengths.append(m)
        if m == 1:
            return lengths[::-1]
        m = (m + 1) // 2


def _refine(problem: MayerProblem, controls: np.ndarray, value: float, b: float, rng: np.random.Generator):
    """Coordinate descent over (interval, particle) blocks; keeps strict improvements only."""
    F, w = problem.field, problem.initial.weights
    G, n, d = controls.shape
    trials = TRIAL_SCALES * TRIAL_DIRECTIONS
    scales = b * 0.5 ** np.repeat(np.arange(TRIAL_SCALES), TRIAL_DIRECTIONS)
    controls = controls.copy()
    start = problem.initial.points[None]
    for _ in range(problem.sweeps):
        _, boundaries = _rollout(F, start, w, controls[None], problem.steps_per_interval, problem.dt,
                                 keep_boundaries=True)
        for g in range(G):
            for i in range(n):
                directions = rng.normal(size=(trials, d))
                directions /= np.maximum(np.linalg.norm(directions, axis=1, keepdims=True), 1e-300)
                batch = np.repeat(controls[None, g:], trials, axis=0)
                batch[:, 0, i] += scales[:, None] * directions
                terminal, _ = _rollout(F, np.repeat(boundaries[g], trials, axis=0), w, batch,
                                       problem.steps_per_interval, problem.dt)
                costs = _costs(problem.terminal_cost, terminal, w)
                best = int(np.argmin(costs))
                if costs[best] < value:
                    value = float(costs[best])
                    controls[g:] = batch[best]
                    _, tail = _rollout(F, boundaries[g], w, controls[None, g:], problem.steps_per_interval,
                                       problem.dt, keep_boundaries=True)
                    boundaries[g:] = tail
    return controls, value


def _replay(problem: MayerProblem, controls: np.ndarray) -> TrajectoryRecord:
    policy = ControlSequence(controls, problem.steps_per_interval)
    return integrate(problem.field, problem.initial, policy, problem.dt, problem.horizon, t0=problem.t0)


def solve_mayer(problem: MayerProblem) -> MayerSolution:
    """Best terminal cost found; an upper bound on U_g(t0, initial)."""
    nu = problem.initial
    if problem.horizon == 0.0:
        traj = TrajectoryRecord.stationary(nu, problem.t0)
        return MayerSolution(value=float(problem.terminal_cost(nu)),
                             best_controls=np.zeros((0,) + nu.points.shape), trajectory=traj,
                             seed=problem.seed, budget=problem.budget)

    b = problem.box_half_width()
    w = nu.weights
    samples = _sample_controls(problem, range(problem.budget), b)
    starts = np.repeat(nu.points[None], problem.budget, axis=0)
    terminal, _ = _rollout(problem.field, starts, w, samples, problem.steps_per_interval, problem.dt)
    costs = _costs(problem.terminal_cost, terminal, w)

    # refine the best shot of every prefix budget, budget/2, budget/4, ...
    candidates: Dict[int, tuple] = {}
    for length in _prefix_lengths(problem.budget):
        best = int(np.argmin(costs[:length]))
        if best in candidates:
            continue
        rng = np.random.default_rng([problem.seed, best])
        candidates[best] = _refine(problem, samples[best], float(costs[best]), b, rng)

    finalists = [controls for controls, _ in candidates.values()]
    if problem.warm_start is not None:
        finalists.append(np.asarray(problem.warm_start, dtype=float))

    solution = None
    for controls in finalists:
        traj = _replay(problem, controls)
        value = float(problem.terminal_cost(traj.final))
        if solution is None or value < solution.value:
            solution = MayerSolution(value=value, best_controls=controls, trajectory=traj, seed=problem.seed,
                                     budget=problem.budget, refined=len(candidates))
    logger.debug("mayer t0=%.4g: value %.6g after refining %d prefix bests", problem.t0, solution.value,
                 len(candidates))
    return solution


def audit_solution(problem: MayerProblem, solution: MayerSolution, tol: float = 1e-9) -> dict:
    """Value equals g at the replayed terminal measure and the trajectory is admissible."""
    mismatch = abs(solution.value - float(problem.terminal_cost(solution.trajectory.final)))
    admissible = check_admissible(problem.field, solution.trajectory, tol) if solution.trajectory.n_steps else None
    return {"value_mismatch": mismatch,
            "admissible": True if admissible is None else admissible.passed,
            "max_residual": 0.0 if admissible is None else admissible.max_residual}


# ---------------------------------------------------------------------------
# Dynamic programming checks
# ---------------------------------------------------------------------------

@dataclass
class DPPReport:
    times: np.ndarray
    values: np.ndarray
    max_decrease: float   # min over consecutive nodes of U_{k+1} - U_k
    oscillation: float
    tol_dpp: float

    @property
    def monotone(self) -> bool:
        return self.max_decrease >= -self.tol_dpp

    @property
    def constant(self) -> bool:
        return self.oscillation <= self.tol_dpp

    @property
    def violation(self) -> float:
        return max(0.0, -self.max_decrease)


def _node_indices(problem: MayerProblem, traj: TrajectoryRecord) -> List[int]:
    h = problem.horizon / problem.control_grid
    indices = []
    for j in range(problem.control_grid + 1):
        t = problem.t0 + j * h
        k = int(np.argmin(np.abs(traj.times - t)))
        if abs(traj.times[k] - t) > TIME_MATCH_TOL * max(1.0, abs(t)) + 0.5 * (traj.times[1] - traj.times[0]):
            raise ParameterError(f"trajectory has no node near t={t}")
        indices.append(k)
    return indices


def dpp_check(problem: MayerProblem, traj: TrajectoryRecord, tol_dpp: float = 0.0,
              warm_start: Optional[np.ndarray] = None) -> DPPReport:
    """U_hat(t_k, mu_{t_k}) at the control-interval boundaries of the problem horizon.

    With warm_start (the controls that produced traj) each node also tries the
    remaining tail of those controls.
    """
    values, times = [], []
    G = problem.control_grid
    for j, k in enumerate(_node_indices(problem, traj)):
        t_k = problem.t0 + j * problem.horizon / G
        remaining = G - j
        tail = None if warm_start is None or remaining == 0 else np.asarray(warm_start)[j:]
        sub = replace(problem, initial=traj.measure(k), t0=min(t_k, problem.T), control_grid=max(remaining, 1),
                      warm_start=tail)
        if remaining == 0:
            sub = replace(sub, t0=problem.T)
        values.append(solve_mayer(sub).value)
        times.append(t_k if remaining else problem.T)
    values = np.array(values)
    diffs = np.diff(values)
    return DPPReport(times=np.array(times), values=values,
                     max_decrease=float(diffs.min()) if diffs.size else 0.0,
                     oscillation=float(values.max() - values.min()), tol_dpp=tol_dpp)


def single_particle_optimum(alpha: float, dt: float, n_steps: int) -> float:
    """Exact discrete minimum of |x_N|^2 from |x_0| = 1 under the ball field, |x_{k+1}| >= (1 - 2 alpha dt)|x_k|."""
    return float(max(1.0 - 2.0 * alpha * dt, 0.0) ** (2 * n_steps))


def calibrate_tolerance(problem: MayerProblem, alpha: float = 1.0) -> float:
    """tol_dpp = 3 * solver gap on a single particle at e_1 under the ball field, same grid and budget."""
    if problem.horizon == 0.0:
        return TOL_DPP_FLOOR
    d = problem.initial.dim
    start = np.zeros(d)
    start[0] = 1.0
    reference = replace(problem, field=BallField(alpha), terminal_cost=lambda nu: moment2(nu).value ** 2,
                        initial=dirac(start), warm_start=None)
    exact = single_particle_optimum(alpha, problem.dt, problem.control_grid * problem.steps_per_interval)
    gap = abs(solve_mayer(reference).value - exact)
    tol = TOL_DPP_FACTOR * max(gap, TOL_DPP_FLOOR)
    logger.info("calibrated tol_dpp=%.3e (closed-form gap %.3e)", tol, gap)
    return tol


def dpp_budget_sweep(problem: MayerProblem, traj: TrajectoryRecord, budgets: Sequence[int],
                     seeds: Sequence[int]) -> Dict[int, float]:
    """Median DPP violation per budget over seeds."""
    medians = {}
    for budget in budgets:
        violations = [dpp_check(replace(problem, budget=budget, seed=seed), traj).violation for seed in seeds]
        medians[int(budget)] = float(np.median(violations))
    return medians


# ---------------------------------------------------------------------------
# Comparison with the Lyapunov bound
# ---------------------------------------------------------------------------

def comparison_problem(spec: LyapunovSpec, F: FieldSpec, initial: DiscreteMeasure, T: float,
                       **kwargs) -> MayerProblem:
    """Mayer problem with terminal cost g = e^{alpha T} V."""
    factor = float(np.exp(spec.rate_alpha * T))
    return MayerProblem(field=F, terminal_cost=lambda nu: factor * spec.value(nu), initial=initial, t0=0.0,
                        T=T, **kwargs)


@dataclass(frozen=True)
class ComparisonSample:
    t: float
    estimate: float
    bound: float

    @property
    def excess(self) -> float:
        return self.estimate - self.bound


@dataclass
class ComparisonReport:
    samples: List[ComparisonSample]
    tol_dpp: float

    @property
    def max_excess(self) -> float:
        return max(s.excess for s in self.samples)

    @property
    def passed(self) -> bool:
        return self.max_excess <= self.tol_dpp


def comparison_check(spec: LyapunovSpec, problem: MayerProblem, clouds: Sequence[DiscreteMeasure],
                     times: Sequence[float], tol_dpp: float = 0.0) -> ComparisonReport:
    """U_hat(t, nu) <= e^{alpha t} V(nu) + tol_dpp at every sampled (t, nu)."""
    samples = []
    for nu in clouds:
        for t in times:
            grid = problem.control_grid
            if problem.T > problem.t0:
                grid = max(int(round(problem.control_grid * (problem.T - t) / problem.horizon)), 1)
            estimate = solve_mayer(replace(problem, initial=nu, t0=float(t), control_grid=grid,
                                           warm_start=None)).value
            samples.append(ComparisonSample(t=float(t), estimate=estimate,
                                            bound=float(np.exp(spec.rate_alpha * t) * spec.value(nu))))
    return ComparisonReport(samples=samples, tol_dpp=tol_dpp)


@dataclass(frozen=True)
class ValueLipschitzProbe:
    pairs: int
    max_ratio: float


def value_lipschitz_probe(problem: MayerProblem, pairs: Sequence[tuple]) -> ValueLipschitzProbe:
    """Largest |U_hat(nu1) - U_hat(nu2)| / W2(nu1, nu2) over the given cloud pairs."""
    ratio = 0.0
    for nu1, nu2 in pairs:
        dist = w2(nu1, nu2)
        if dist == 0.0:
            continue
        u1 = solve_mayer(replace(problem, initial=nu1, warm_start=None)).value
        u2 = solve_mayer(replace(problem, initial=nu2, warm_start=None)).value
        ratio = max(ratio, abs(u1 - u2) / dist)
    return ValueLipschitzProbe(pairs=len(pairs), max_ratio=float(ratio))
