#!/usr/bin/env python3
"""
Lyapunov certification on particle clouds
Lyapunov functions and their subdifferential candidates, Hamilton-Jacobi
inequality residuals, exponential decay runs, epigraph viability by gluing,
reachability runs and the sampling audits behind them.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np
from scipy.spatial.distance import pdist

from dynamics import STEP_ROUNDING_TOL, FieldSpec, SelectionPolicy, TrajectoryRecord, glue, integrate
from hamiltonian import GreedySelection, hamiltonian
from measures import (DiscreteMeasure, ParameterError, make_measure, moment2, moment2eps,
                      particle_measure)
from transport import Displacement, optimal_assignment, optimal_displacement, w2

logger = logging.getLogger(__name__)

# ---------------- CONFIG ----------------
HJI_TOL = 1e-9
SUBDIFF_TOL = 1e-10
LIPSCHITZ_TOL = 1e-9
STRONG_REACH_FRACTION = 1e-2
MOMENT_EPS = 1.0
PERTURBATION_SCALE = 0.2
SEPARATION_FRACTION = 0.4   # perturbations stay below this share of the closest pair of support points
# ----------------------------------------


@dataclass(frozen=True)
class SubdiffCandidate:
    displacement: Optional[Displacement]
    valid: bool
    reason: str = ""


class LyapunovSpec(ABC):
    """Candidate Lyapunov function V with exponential rate phi(y) = rate_alpha * y."""

    name = "lyapunov"

    def __init__(self, rate_alpha: float):
        if not rate_alpha > 0:
            raise ParameterError(f"rate_alpha must be positive, got {rate_alpha}")
        self.rate_alpha = float(rate_alpha)

    @abstractmethod
    def value(self, nu: DiscreteMeasure) -> float:
        ...

    @abstractmethod
    def subdiff_candidate(self, nu: DiscreteMeasure) -> SubdiffCandidate:
        ...

    @abstractmethod
    def local_lipschitz(self, R: float) -> float:
        """Lipschitz constant of V w.r.t. W2 on {m2 <= R}."""

    def describe(self) -> dict:
        return {"variant": self.name, "rate_alpha": self.rate_alpha}


class HalfM2Squared(LyapunovSpec):
    """V = 1/2 m2^2 = 1/2 W2^2(., delta_0); subdifferential candidate p = id."""

    name = "half_m2_squared"

    def value(self, nu):
        return 0.5 * moment2(nu).value ** 2

    def subdiff_candidate(self, nu):
        return SubdiffCandidate(Displacement(nu, np.array(nu.points)), True)

    def local_lipschitz(self, R):
        return float(R)


class HalfW2SquaredTo(LyapunovSpec):
    """V = 1/2 W2^2(., target); candidate id - T when the optimal plan is a map."""

    name = "half_w2_squared"

    def __init__(self, target: DiscreteMeasure, rate_alpha: float):
        super().__init__(rate_alpha)
        self.target = target

    def value(self, nu):
        return 0.5 * w2(nu, self.target) ** 2

    def subdiff_candidate(self, nu):
        if nu.size == self.target.size and nu.is_uniform() and self.target.is_uniform():
            sigma = optimal_assignment(nu, self.target)
            return SubdiffCandidate(Displacement(nu, nu.points - self.target.points[sigma]), True)
        p = optimal_displacement(nu, self.target, 1.0)
        if not p.is_map:
            return SubdiffCandidate(None, False, "optimal plan splits mass, no transport map")
        # optimal_displacement gives T - id
        return SubdiffCandidate(Displacement(nu, -p.vectors), True)

    def local_lipschitz(self, R):
        return float(R + moment2(self.target).value)

    def describe(self):
        return {**super().describe(), "target_size": self.target.size}


class CustomLyapunov(LyapunovSpec):
    name = "custom"

    def __init__(self, evaluator: Callable[[DiscreteMeasure], float], rate_alpha: float,
                 candidate_fn: Optional[Callable[[DiscreteMeasure], SubdiffCandidate]] = None,
                 lipschitz_fn: Optional[Callable[[float], float]] = None):
        super().__init__(rate_alpha)
        self.evaluator = evaluator
        self.candidate_fn = candidate_fn
        self.lipschitz_fn = lipschitz_fn

    def value(self, nu):
        return float(self.evaluator(nu))

    def subdiff_candidate(self, nu):
        if self.candidate_fn is None:
            return SubdiffCandidate(None, False, "no candidate function supplied")
        return self.candidate_fn(nu)

    def local_lipschitz(self, R):
        return float(self.lipschitz_fn(R)) if self.lipschitz_fn else 0.0


def eval_V(spec: LyapunovSpec, nu: DiscreteMeasure) -> float:
    return spec.value(nu)


def subdiff_candidate(spec: LyapunovSpec, nu: DiscreteMeasure) -> SubdiffCandidate:
    return spec.subdiff_candidate(nu)


@dataclass(frozen=True)
class HJISample:
    residual: Optional[float]
    V: float
    H: Optional[float]

    @property
    def skipped(self) -> bool:
        return self.residual is None


def hji_residual(spec: LyapunovSpec, F: FieldSpec, nu: DiscreteMeasure) -> HJISample:
    """alpha V(nu) + H_F(nu, p) for the delta = 0 candidate p; skipped when no candidate exists."""
    V = spec.value(nu)
    candidate = spec.subdiff_candidate(nu)
    if not candidate.valid:
        return HJISample(residual=None, V=V, H=None)
    H = hamiltonian(F, nu, candidate.displacement).value
    return HJISample(residual=spec.rate_alpha * V + H, V=V, H=H)


def greedy_policy(spec: LyapunovSpec) -> GreedySelection:
    def p_source(mu):
        candidate = spec.subdiff_candidate(mu)
        return candidate.displacement, candidate.valid
    return GreedySelection(p_source, label=f"greedy:{spec.name}")


# ---------------------------------------------------------------------------
# Decay, viability and reachability runs
# ---------------------------------------------------------------------------

@dataclass
class DecayReport:
    times: np.ndarray
    V_values: np.ndarray
    S_values: np.ndarray
    max_uptick: float
    tol_step: float
    passed: bool
    rate_fit: Optional[float]
    rate_alpha: float
    trajectory: TrajectoryRecord


def fit_exponential_rate(times: np.ndarray, values: np.ndarray) -> Optional[float]:
    """Decay rate r of values ~ c e^{-r t} by least squares on log(values)."""
    mask = values > 0
    if np.count_nonzero(mask) < 2:
        return None
    slope, _ = np.polyfit(times[mask], np.log(values[mask]), 1)
    return float(-slope)


def _V_series(spec: LyapunovSpec, traj: TrajectoryRecord) -> np.ndarray:
    return np.array([spec.value(particle_measure(pts, traj.weights)) for pts in traj.positions])


def decay_report(spec: LyapunovSpec, traj: TrajectoryRecord, tol_factor: float = 1.0) -> DecayReport:
    """S(t) = e^{alpha t} V(mu_t) along traj, checked for monotonicity within the Euler budget."""
    alpha = spec.rate_alpha
    V = _V_series(spec, traj)
    S = np.exp(alpha * traj.times) * V
    upticks = np.diff(S)
    max_uptick = float(upticks.max()) if upticks.size else 0.0
    dt = float(traj.times[1] - traj.times[0]) if traj.n_steps else 0.0
    L_V = spec.local_lipschitz(float(traj.m2_series().max()))
    speed_max = float(np.linalg.norm(traj.velocities, axis=-1).max()) if traj.n_steps else 0.0
    tol_step = tol_factor * (L_V * float(V.max()) * alpha + L_V * speed_max) * dt
    return DecayReport(times=traj.times, V_values=V, S_values=S, max_uptick=max_uptick, tol_step=tol_step,
                       passed=max_uptick <= tol_step, rate_fit=fit_exponential_rate(traj.times, V),
                       rate_alpha=alpha, trajectory=traj)


def decay_run(spec: LyapunovSpec, F: FieldSpec, mu0: DiscreteMeasure, T: float, dt: float,
              selection: Optional[SelectionPolicy] = None, tol_factor: float = 1.0,
              t0: float = 0.0) -> DecayReport:
    policy = selection if selection is not None else greedy_policy(spec)
    traj = integrate(F, mu0, policy, dt, T, t0=t0)
    for event in traj.diagnostics.get("events", []):
        logger.info("%s: %s", policy.name, event)
    return decay_report(spec, traj, tol_factor)


@dataclass(frozen=True)
class EpigraphReport:
    y0: float
    max_violation: float
    passed: bool


def epigraph_check(spec: LyapunovSpec, traj: TrajectoryRecord, y0: Optional[float] = None,
                   tol: float = 0.0) -> EpigraphReport:
    """(mu_t, e^{-alpha (t - t0)} y0) stays in the epigraph of V for y0 >= V(mu_0)."""
    V = _V_series(spec, traj)
    start = float(V[0])
    y0 = start if y0 is None else float(y0)
    if y0 < start:
        raise ParameterError(f"y0={y0} is below V(mu_0)={start}, not in the epigraph")
    y = y0 * np.exp(-spec.rate_alpha * (traj.times - traj.times[0]))
    violation = float(np.max(V - y))
    return EpigraphReport(y0=y0, max_violation=violation, passed=violation <= tol)


@dataclass(frozen=True)
class PieceCheck:
    index: int
    t_start: float
    t_end: float
    max_violation: float
    tolerance: float
    passed: bool


@dataclass
class ViabilityReport:
    pieces: List[PieceCheck]
    glued: TrajectoryRecord
    end_to_end_uptick: float
    end_to_end_tol: float
    epigraph: EpigraphReport
    passed: bool


def viability_glue(spec: LyapunovSpec, F: FieldSpec, mu0: DiscreteMeasure, T: float, n: int, dt: float,
                   selection: Optional[SelectionPolicy] = None, tol_factor: float = 1.0) -> ViabilityReport:
    """Restart a decay run on each [kT/n, (k+1)T/n] and check e^{alpha(t-t_k)} V(mu_t) <= V(mu_{t_k})."""
    if n < 1:
        raise ParameterError(f"need at least one subdivision, got {n}")
    alpha = spec.rate_alpha
    piece_length = T / n
    steps = piece_length / dt
    if abs(steps - round(steps)) > STEP_ROUNDING_TOL * max(1.0, steps):
        raise ParameterError(f"T={T} does not split into {n} pieces of whole dt={dt} steps")
    pieces, records, tol_steps = [], [], []
    mu, t_start = mu0, 0.0
    for k in range(n):
        report = decay_run(spec, F, mu, piece_length, dt, selection, tol_factor, t0=t_start)
        elapsed = report.times - report.times[0]
        violation = float(np.max(np.exp(alpha * elapsed) * report.V_values - report.V_values[0]))
        tolerance = report.tol_step * report.trajectory.n_steps
        pieces.append(PieceCheck(k, float(report.times[0]), float(report.times[-1]), violation, tolerance,
                                 violation <= tolerance))
        records.append(report.trajectory)
        tol_steps.append(report.tol_step)
        mu, t_start = report.trajectory.final, float(report.times[-1])
    glued = glue(records)
    S = np.exp(alpha * glued.times) * _V_series(spec, glued)
    uptick = float(np.diff(S).max()) if glued.n_steps else 0.0
    end_tol = max(tol_steps)
    epigraph = epigraph_check(spec, glued, tol=end_tol * max(glued.n_steps, 1))
    passed = all(p.passed for p in pieces) and uptick <= end_tol and epigraph.passed
    return ViabilityReport(pieces=pieces, glued=glued, end_to_end_uptick=uptick, end_to_end_tol=end_tol,
                           epigraph=epigraph, passed=passed)


@dataclass
class ReachabilityReport:
    decay: DecayReport
    w2_times: np.ndarray
    w2_series: np.ndarray
    initial_w2: float
    terminal_w2: float
    rate_fit: Optional[float]
    sup_m2: float
    sup_m2eps: float
    mode: str


def reachability_run(spec: LyapunovSpec, F: FieldSpec, mu0: DiscreteMeasure, target: DiscreteMeasure,
                     T: float, dt: float, selection: Optional[SelectionPolicy] = None,
                     sample_every: int = 1, tol_factor: float = 1.0) -> ReachabilityReport:
    """Decay run plus W2(mu_t, target), moment boundedness and the observed reachability mode."""
    decay = decay_run(spec, F, mu0, T, dt, selection, tol_factor)
    traj = decay.trajectory
    nodes = list(range(0, len(traj.times), max(sample_every, 1)))
    if nodes[-1] != len(traj.times) - 1:
        nodes.append(len(traj.times) - 1)
    series = np.array([w2(traj.measure(k), target) for k in nodes])
    sup_m2eps = max(moment2eps(traj.measure(k), MOMENT_EPS).value for k in nodes)
    initial, terminal = float(series[0]), float(series[-1])
    if terminal <= STRONG_REACH_FRACTION * initial or terminal == 0.0:
        mode = "strong"
    elif np.isfinite(sup_m2eps) and terminal <= initial:
        mode = "bounded"
    else:
        mode = "none"
    return ReachabilityReport(decay=decay, w2_times=traj.times[nodes], w2_series=series, initial_w2=initial,
                              terminal_w2=terminal, rate_fit=decay.rate_fit,
                              sup_m2=float(traj.m2_series().max()), sup_m2eps=float(sup_m2eps),
                              mode=mode)


# ---------------------------------------------------------------------------
# Sampling audits
# ---------------------------------------------------------------------------

def random_ball_cloud(rng: np.random.Generator, n: int, dim: int, radius: float,
                      uniform_weights: bool = False) -> DiscreteMeasure:
    points = rng.uniform(-radius, radius, size=(n, dim))
    norms = np.linalg.norm(points, axis=1, keepdims=True)
    points = np.where(norms > radius, points * radius / np.maximum(norms, 1e-300), points)
    weights = None if uniform_weights else rng.uniform(0.1, 1.0, size=n)
    return make_measure(points, weights)


def perturbed_cloud(rng: np.random.Generator, base: DiscreteMeasure,
                    scale: float = PERTURBATION_SCALE) -> DiscreteMeasure:
    """Support of base moved by box noise small enough that the optimal plan back to base is the identity map."""
    if base.size > 1:
        scale = min(scale, SEPARATION_FRACTION * float(pdist(base.points).min()) / np.sqrt(base.dim))
    return particle_measure(base.points + rng.uniform(-scale, scale, size=base.points.shape), base.weights)


@dataclass(frozen=True)
class HJISweep:
    residuals: np.ndarray
    skipped: int
    residual_max: Optional[float]
    passed: bool


def hji_sweep(spec: LyapunovSpec, F: FieldSpec, rng: np.random.Generator, samples: int = 100,
              n_max: int = 10, dim: int = 2, radius: float = 10.0, uniform_weights: bool = False,
              fixed_size: Optional[int] = None, tol: float = HJI_TOL,
              around: Optional[DiscreteMeasure] = None) -> HJISweep:
    """Residuals on random clouds, or on perturbations of the support of `around` when given."""
    residuals, skipped = [], 0
    for _ in range(samples):
        if around is not None:
            nu = perturbed_cloud(rng, around)
        else:
            n = fixed_size if fixed_size else int(rng.integers(1, n_max + 1))
            nu = random_ball_cloud(rng, n, dim, radius, uniform_weights)
        sample = hji_residual(spec, F, nu)
        if sample.skipped:
            skipped += 1
            continue
        residuals.append(sample.residual)
    if skipped:
        logger.info("%s: %d of %d HJI samples skipped (no subdifferential candidate)", spec.name, skipped, samples)
    values = np.array(residuals)
    worst = float(values.max()) if values.size else None
    return HJISweep(residuals=values, skipped=skipped, residual_max=worst,
                    passed=worst is not None and worst <= tol)


def random_coupling(nu: DiscreteMeasure, mu: DiscreteMeasure, rng: np.random.Generator,
                    mixtures: int = 3) -> np.ndarray:
    """Convex mixture of permutation couplings (equal-size uniform clouds) and the product coupling."""
    n = nu.size
    coeffs = rng.dirichlet(np.ones(mixtures + 1))
    coupling = coeffs[0] * np.outer(nu.weights, mu.weights)
    if n == mu.size and nu.is_uniform() and mu.is_uniform():
        for c in coeffs[1:]:
            coupling[np.arange(n), rng.permutation(n)] += c / n
    else:
        coupling += coeffs[1:].sum() * np.outer(nu.weights, mu.weights)
    return coupling


@dataclass(frozen=True)
class SubdiffAudit:
    samples: int
    min_gap: float
    passed: bool


def subdifferential_audit(spec: LyapunovSpec, rng: np.random.Generator, n_measures: int = 100,
                          n_targets: int = 20, n_points: int = 5, dim: int = 2, radius: float = 10.0,
                          tol: float = SUBDIFF_TOL, around: Optional[DiscreteMeasure] = None) -> SubdiffAudit:
    """V(mu) - V(nu) - sum sigma_ij <p(x_i), y_j - x_i> >= -tol over random couplings sigma.

    With `around`, base clouds nu are perturbations of its support carrying its weights.
    """
    min_gap, count = np.inf, 0
    if around is not None:
        n_points, dim = around.size, around.dim
    for _ in range(n_measures):
        if around is not None:
            nu = perturbed_cloud(rng, around)
        else:
            nu = random_ball_cloud(rng, n_points, dim, radius, uniform_weights=True)
        candidate = spec.subdiff_candidate(nu)
        if not candidate.valid:
            continue
        V_nu = spec.value(nu)
        for _ in range(n_targets):
            mu = random_ball_cloud(rng, n_points, dim, radius, uniform_weights=True)
            sigma = random_coupling(nu, mu, rng)
            offsets = mu.points[None, :, :] - nu.points[:, None, :]
            linear = np.einsum("ij,id,ijd->", sigma, candidate.displacement.vectors, offsets)
            min_gap = min(min_gap, spec.value(mu) - V_nu - linear)
            count += 1
    return SubdiffAudit(samples=count, min_gap=float(min_gap), passed=count > 0 and min_gap >= -tol)


@dataclass(frozen=True)
class LocalLipschitzAudit:
    R: float
    constant: float
    max_excess: float
    passed: bool


def local_lipschitz_audit(spec: LyapunovSpec, rng: np.random.Generator, R: float = 5.0, pairs: int = 100,
                          n_points: int = 4, dim: int = 2, tol: float = LIPSCHITZ_TOL) -> LocalLipschitzAudit:
    """|V(nu1) - V(nu2)| <= L_R W2(nu1, nu2) for clouds with m2 <= R."""
    constant = spec.local_lipschitz(R)

    def cloud():
        nu = random_ball_cloud(rng, n_points, dim, 2 * R)
        m2 = moment2(nu).value
        if m2 > R:
            nu = make_measure(nu.points * (R / m2), nu.weights)
        return nu

    excess = -np.inf
    for _ in range(pairs):
        nu1, nu2 = cloud(), cloud()
        excess = max(excess, abs(spec.value(nu1) - spec.value(nu2)) - constant * w2(nu1, nu2))
    return LocalLipschitzAudit(R=R, constant=constant, max_excess=float(excess), passed=excess <= tol)
