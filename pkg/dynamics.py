#!/usr/bin/env python3
"""
Set-valued nonlocal fields and admissible particle flows
Field evaluation, Euler integration with exact projection onto the images,
admissibility audits and the a-priori moment/speed bounds.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from measures import DiscreteMeasure, ParameterError, make_measure, moment2, particle_measure, with_points
from transport import w2

logger = logging.getLogger(__name__)

# ---------------- CONFIG ----------------
NEG_DEF_SAMPLES = 200
NEG_DEF_TOL = 1e-12
STEP_ROUNDING_TOL = 1e-9
APRIORI_WINDOW = 1.0     # bounds grow like exp(L h e^{L h}); long horizons are checked window by window
# ----------------------------------------


class FieldError(ValueError):
    """Raised for malformed field descriptors or dimension mismatches."""


class IntegrationError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass(frozen=True)
class BallSet:
    center: np.ndarray
    radius: float

    @property
    def is_singleton(self) -> bool:
        return self.radius == 0.0

    def distance(self, v) -> float:
        return max(float(np.linalg.norm(np.asarray(v) - self.center)) - self.radius, 0.0)

    def contains(self, v, tol: float = 0.0) -> bool:
        return self.distance(v) <= tol

    def project(self, v) -> np.ndarray:
        return project_onto_balls(np.asarray(v, dtype=float)[None, :], self.center[None, :],
                                  np.array([self.radius]))[0]


def project_onto_balls(proposals: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean projection of proposals onto closed balls B(c_i, r_i)."""
    offsets = proposals - centers
    norms = np.linalg.norm(offsets, axis=-1)
    outside = norms > radii
    safe = np.where(norms > 0, norms, 1.0)
    scale = np.where(outside, radii / safe, 1.0)
    return centers + offsets * scale[..., None]


def ball_distances(velocities: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    return np.maximum(np.linalg.norm(velocities - centers, axis=-1) - radii, 0.0)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

class FieldSpec(ABC):
    """Set-valued map F(x, nu) with ball (or singleton) images."""

    name = "field"
    lipschitz_L: float = 0.0
    k_F: float = 0.0
    dim: Optional[int] = None

    @abstractmethod
    def images(self, positions: np.ndarray, nu: DiscreteMeasure):
        """Centers (n, d) and radii (n,) of F(x_i, nu) for each row x_i of positions."""

    def images_batch(self, positions: np.ndarray, weights: np.ndarray):
        """Images for a batch of clouds (S, n, d) sharing weights; each cloud is its own crowd."""
        centers = np.empty_like(positions)
        radii = np.empty(positions.shape[:2])
        for s, pts in enumerate(positions):
            centers[s], radii[s] = self.images(pts, DiscreteMeasure(points=pts, weights=weights))
        return centers, radii

    def growth_constant(self) -> float:
        return max(self.lipschitz_L, self.k_F)

    def describe(self) -> dict:
        return {"variant": self.name, "lipschitz_L": self.lipschitz_L, "k_F": self.k_F}

    def _check_dim(self, positions: np.ndarray, nu: DiscreteMeasure):
        if positions.shape[-1] != nu.dim or (self.dim is not None and nu.dim != self.dim):
            raise FieldError(f"dimension mismatch: state {positions.shape[-1]}, measure {nu.dim}, field {self.dim}")


class BallField(FieldSpec):
    """F(x, nu) = closed ball B(0, alpha (|x| + m2(nu)))."""

    name = "ball"

    def __init__(self, alpha: float):
        if not alpha > 0:
            raise FieldError(f"alpha must be positive, got {alpha}")
        self.alpha = float(alpha)
        self.lipschitz_L = self.alpha
        self.k_F = 0.0

    def images(self, positions, nu):
        positions = np.atleast_2d(positions)
        self._check_dim(positions, nu)
        radii = self.alpha * (np.linalg.norm(positions, axis=1) + moment2(nu).value)
        return np.zeros_like(positions), radii

    def images_batch(self, positions, weights):
        norms = np.linalg.norm(positions, axis=-1)
        m2 = np.sqrt(norms ** 2 @ weights)
        return np.zeros_like(positions), self.alpha * (norms + m2[:, None])

    def describe(self):
        return {**super().describe(), "alpha": self.alpha}


class LinearField(FieldSpec):
    """Single-valued F(x, mu) = A x + B mean(mu), with <Bz, z> <= -k |z|^2."""

    name = "linear"

    def __init__(self, A, B, k: float, seed: int = 0):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1] or self.A.shape != self.B.shape:
            raise FieldError(f"A and B must be equal square matrices, got {self.A.shape} and {self.B.shape}")
        if not k > 0:
            raise FieldError(f"k must be positive, got {k}")
        self.k = float(k)
        self.dim = self.A.shape[0]
        self._check_negative_definite(seed)
        self.lipschitz_L = float(max(np.linalg.norm(self.A, 2), np.linalg.norm(self.B, 2)))
        self.k_F = 0.0

    def _check_negative_definite(self, seed: int):
        z = np.random.default_rng(seed).normal(size=(NEG_DEF_SAMPLES, self.dim))
        quad = np.einsum("ij,jk,ik->i", z, self.B, z)
        excess = quad + self.k * np.einsum("ij,ij->i", z, z)
        if np.max(excess) > NEG_DEF_TOL:
            raise FieldError(f"<Bz,z> <= -k|z|^2 violated on a sample (excess {np.max(excess):.3e})")

    def images(self, positions, nu):
        positions = np.atleast_2d(positions)
        self._check_dim(positions, nu)
        drift = self.B @ (nu.weights @ nu.points)
        return positions @ self.A.T + drift, np.zeros(positions.shape[0])

    def images_batch(self, positions, weights):
        means = np.einsum("j,sjd->sd", weights, positions)
        centers = positions @ self.A.T + (means @ self.B.T)[:, None, :]
        return centers, np.zeros(positions.shape[:2])

    def describe(self):
        return {**super().describe(), "A": self.A.tolist(), "B": self.B.tolist(), "k": self.k}


class GenericBall(FieldSpec):
    """Ball images from user callables center_fn(x, nu) and radius_fn(x, nu)."""

    name = "generic_ball"

    def __init__(self, center_fn: Callable, radius_fn: Callable, lipschitz_L: float, k_F: float = 0.0,
                 dim: Optional[int] = None, label: str = "generic_ball"):
        if lipschitz_L < 0 or k_F < 0:
            raise FieldError("lipschitz_L and k_F must be nonnegative")
        self.center_fn = center_fn
        self.radius_fn = radius_fn
        self.lipschitz_L = float(lipschitz_L)
        self.k_F = float(k_F)
        self.dim = dim
        self.label = label

    def images(self, positions, nu):
        positions = np.atleast_2d(positions)
        self._check_dim(positions, nu)
        centers = np.array([np.asarray(self.center_fn(x, nu), dtype=float) for x in positions])
        radii = np.array([float(self.radius_fn(x, nu)) for x in positions])
        if np.any(radii < 0):
            raise FieldError("negative radius from radius_fn")
        return centers.reshape(positions.shape), radii

    def describe(self):
        return {**super().describe(), "label": self.label}


def zero_field(dim: int) -> GenericBall:
    return GenericBall(lambda x, nu: np.zeros(dim), lambda x, nu: 0.0, lipschitz_L=0.0, k_F=0.0,
                       dim=dim, label="zero")


def field_eval(F: FieldSpec, x, nu: DiscreteMeasure) -> BallSet:
    centers, radii = F.images(np.asarray(x, dtype=float).reshape(1, -1), nu)
    return BallSet(center=centers[0], radius=float(radii[0]))


# ---------------------------------------------------------------------------
# Selection policies
# ---------------------------------------------------------------------------

class SelectionPolicy(ABC):
    """Proposes velocities; the integrator projects them onto the field images."""

    name = "policy"

    def __init__(self):
        self.events: List[str] = []

    def reset(self):
        self.events = []

    @abstractmethod
    def propose(self, t: float, mu: DiscreteMeasure, F: FieldSpec,
                centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
        ...


class AnalyticSelection(SelectionPolicy):
    """Closed-form velocity v(t, x, mu) evaluated on the whole support."""

    def __init__(self, name: str, velocity_fn: Callable[[float, np.ndarray, DiscreteMeasure], np.ndarray]):
        super().__init__()
        self.name = f"analytic:{name}"
        self.velocity_fn = velocity_fn

    @classmethod
    def contraction(cls, rate: float) -> "AnalyticSelection":
        return cls("contraction", lambda t, points, mu: -rate * points)

    def propose(self, t, mu, F, centers, radii):
        return np.asarray(self.velocity_fn(t, mu.points, mu), dtype=float)


class MaxContraction(SelectionPolicy):
    """Point of the image minimizing <x, v>."""

    name = "max-contraction"

    def propose(self, t, mu, F, centers, radii):
        norms = np.linalg.norm(mu.points, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        direction = np.where(norms[:, None] > 0, mu.points / safe[:, None], 0.0)
        return centers - radii[:, None] * direction


class RandomSelection(SelectionPolicy):
    """Seeded random points of the images; overshoot > 1 pushes proposals to the boundary."""

    def __init__(self, seed: int = 0, overshoot: float = 1.0):
        super().__init__()
        self.name = f"random:{seed}"
        self.seed = seed
        self.overshoot = overshoot
        self._rng = np.random.default_rng(seed)

    def reset(self):
        super().reset()
        self._rng = np.random.default_rng(self.seed)

    def propose(self, t, mu, F, centers, radii):
        n, d = centers.shape
        direction = self._rng.normal(size=(n, d))
        direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
        scale = self.overshoot * radii * self._rng.uniform(size=n) ** (1.0 / d)
        return centers + scale[:, None] * direction


class CustomSelection(SelectionPolicy):
    def __init__(self, name: str, fn: Callable[[float, DiscreteMeasure, FieldSpec], np.ndarray]):
        super().__init__()
        self.name = f"custom:{name}"
        self.fn = fn

    def propose(self, t, mu, F, centers, radii):
        return np.asarray(self.fn(t, mu, F), dtype=float)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryRecord:
    times: np.ndarray         # (N+1,)
    positions: np.ndarray     # (N+1, n, d)
    velocities: np.ndarray    # (N, n, d)
    weights: np.ndarray       # (n,)
    selection_name: str
    diagnostics: dict = field(default_factory=dict)

    @classmethod
    def stationary(cls, mu: DiscreteMeasure, t: float, selection_name: str = "none") -> "TrajectoryRecord":
        d = mu.dim
        return cls(times=np.array([float(t)]), positions=np.array(mu.points)[None, :, :],
                   velocities=np.empty((0, mu.size, d)), weights=np.array(mu.weights),
                   selection_name=selection_name,
                   diagnostics={"residual": np.empty(0), "projected": np.empty(0, dtype=int), "events": []})

    @property
    def n_steps(self) -> int:
        return self.velocities.shape[0]

    def measure(self, k: int) -> DiscreteMeasure:
        return particle_measure(self.positions[k], self.weights)

    @property
    def initial(self) -> DiscreteMeasure:
        return self.measure(0)

    @property
    def final(self) -> DiscreteMeasure:
        return self.measure(-1)

    def m2_series(self) -> np.ndarray:
        return np.sqrt(np.einsum("knd,knd,n->k", self.positions, self.positions, self.weights))


def _step_count(dt: float, T: float) -> int:
    if not dt > 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if T < dt * (1 - STEP_ROUNDING_TOL):
        raise ParameterError(f"horizon T={T} shorter than dt={dt}")
    return max(int(round(T / dt)), 1)


def integrate(F: FieldSpec, mu0: DiscreteMeasure, selection: SelectionPolicy, dt: float, T: float,
              t0: float = 0.0) -> TrajectoryRecord:
    """Explicit Euler particle flow x <- x + dt v, v in F(x, mu) by projection of the proposal."""
    n_steps = _step_count(dt, T)
    n, d = mu0.points.shape
    positions = np.empty((n_steps + 1, n, d))
    velocities = np.empty((n_steps, n, d))
    residual = np.empty(n_steps)
    projected = np.empty(n_steps, dtype=int)
    positions[0] = mu0.points
    times = t0 + dt * np.arange(n_steps + 1)
    selection.reset()
    mu = mu0
    for step in range(n_steps):
        centers, radii = F.images(positions[step], mu)
        proposal = selection.propose(times[step], mu, F, centers, radii)
        if proposal.shape != (n, d) or not np.all(np.isfinite(proposal)):
            raise IntegrationError(f"selection '{selection.name}' returned an invalid proposal", step)
        v = project_onto_balls(proposal, centers, radii)
        projected[step] = int(np.count_nonzero(ball_distances(proposal, centers, radii) > 0))
        residual[step] = float(np.max(ball_distances(v, centers, radii)))
        velocities[step] = v
        positions[step + 1] = positions[step] + dt * v
        if not np.all(np.isfinite(positions[step + 1])):
            raise IntegrationError("non-finite state, trajectory blew up", step)
        mu = with_points(mu0, positions[step + 1])
    if projected.any():
        logger.debug("%s: %d proposals projected onto images", selection.name, int(projected.sum()))
    return TrajectoryRecord(times=times, positions=positions, velocities=velocities,
                            weights=np.array(mu0.weights), selection_name=selection.name,
                            diagnostics={"residual": residual, "projected": projected,
                                         "events": list(selection.events)})


def glue(records: Sequence[TrajectoryRecord]) -> TrajectoryRecord:
    """Concatenate trajectories on consecutive intervals sharing their junction nodes."""
    first = records[0]
    times, positions = [first.times], [first.positions]
    velocities = [first.velocities]
    residual = [first.diagnostics.get("residual", np.empty(0))]
    projected = [first.diagnostics.get("projected", np.empty(0, dtype=int))]
    events = list(first.diagnostics.get("events", []))
    for prev, nxt in zip(records, records[1:]):
        if not np.array_equal(prev.positions[-1], nxt.positions[0]):
            raise IntegrationError("trajectories do not share a junction node", prev.n_steps)
        if abs(prev.times[-1] - nxt.times[0]) > STEP_ROUNDING_TOL * max(1.0, abs(prev.times[-1])):
            raise IntegrationError(f"junction times differ: {prev.times[-1]} vs {nxt.times[0]}", prev.n_steps)
        times.append(nxt.times[1:])
        positions.append(nxt.positions[1:])
        velocities.append(nxt.velocities)
        residual.append(nxt.diagnostics.get("residual", np.empty(0)))
        projected.append(nxt.diagnostics.get("projected", np.empty(0, dtype=int)))
        events.extend(nxt.diagnostics.get("events", []))
    return TrajectoryRecord(times=np.concatenate(times), positions=np.concatenate(positions),
                            velocities=np.concatenate(velocities), weights=first.weights,
                            selection_name=first.selection_name,
                            diagnostics={"residual": np.concatenate(residual),
                                         "projected": np.concatenate(projected), "events": events})


# ---------------------------------------------------------------------------
# Audits and bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AdmissibilityReport:
    residuals: np.ndarray
    max_residual: float
    passed: bool
    growth_constant: float
    max_speed: float
    growth_excess: float
    growth_ok: bool


def check_admissible(F: FieldSpec, traj: TrajectoryRecord, tol: float = 1e-9) -> AdmissibilityReport:
    """dist(v_i^n, F(x_i^n, mu^n)) per step, plus the growth bound C(1+m2)(1+|x|), C = max(L, K_F)."""
    C = F.growth_constant()
    residuals = np.zeros(traj.n_steps)
    max_speed = 0.0
    growth_excess = 0.0
    for step in range(traj.n_steps):
        mu = traj.measure(step)
        centers, radii = F.images(traj.positions[step], mu)
        v = traj.velocities[step]
        residuals[step] = float(np.max(ball_distances(v, centers, radii)))
        speeds = np.linalg.norm(v, axis=1)
        bound = C * (1 + moment2(mu).value) * (1 + np.linalg.norm(traj.positions[step], axis=1))
        max_speed = max(max_speed, float(np.max(speeds)))
        growth_excess = max(growth_excess, float(np.max(speeds - bound)))
    max_residual = float(residuals.max()) if residuals.size else 0.0
    return AdmissibilityReport(residuals=residuals, max_residual=max_residual, passed=max_residual <= tol,
                               growth_constant=C, max_speed=max_speed, growth_excess=growth_excess,
                               growth_ok=growth_excess <= tol)


@dataclass(frozen=True)
class AprioriBounds:
    C_ab: float
    D_ab: float
    M: float


def apriori_bounds(F: FieldSpec, mu_bar: DiscreteMeasure, a: float, b: float) -> AprioriBounds:
    """Moment bound M = e^{L h e^{L h}} C_ab and squared-speed bound D_ab on [a, b], h = b - a."""
    if not b > a or a < 0:
        raise ParameterError(f"need 0 <= a < b, got a={a}, b={b}")
    L, K = F.lipschitz_L, F.k_F
    h = b - a
    inner = np.exp(L * h)
    outer = np.exp(L * h * inner)
    C_ab = inner * (moment2(mu_bar).value + K * h)
    M = outer * C_ab
    D_ab = (K + L * (M + C_ab + L * h * M)) ** 2
    return AprioriBounds(C_ab=float(C_ab), D_ab=float(D_ab), M=float(M))


@dataclass(frozen=True)
class AprioriCheck:
    windows: int
    max_M: float
    max_D: float
    passed: bool


def apriori_check(F: FieldSpec, traj: TrajectoryRecord, window: float = APRIORI_WINDOW) -> AprioriCheck:
    """m2 and squared speeds of traj against the a-priori bounds restarted on consecutive windows.

    Each window starts from the recorded measure at its first node. A non-finite bound fails the check.
    """
    if not window > 0:
        raise ParameterError(f"window must be positive, got {window}")
    m2 = traj.m2_series()
    speeds = np.einsum("knd,knd,n->k", traj.velocities, traj.velocities, traj.weights)
    last = len(traj.times) - 1
    start, windows, max_M, max_D, within = 0, 0, 0.0, 0.0, True
    while start < last:
        edge = traj.times[start] + window * (1 - STEP_ROUNDING_TOL)
        stop = min(max(int(np.searchsorted(traj.times, edge)), start + 1), last)
        bounds = apriori_bounds(F, traj.measure(start), float(traj.times[start]), float(traj.times[stop]))
        within = within and m2[start:stop + 1].max() <= bounds.M and speeds[start:stop].max() <= bounds.D_ab
        max_M, max_D = max(max_M, bounds.M), max(max_D, bounds.D_ab)
        windows += 1
        start = stop
    finite = bool(np.isfinite(max_M) and np.isfinite(max_D))
    return AprioriCheck(windows=windows, max_M=max_M, max_D=max_D, passed=bool(within and finite))


@dataclass(frozen=True)
class LipschitzAudit:
    samples: int
    max_ratio: float
    max_excess: float
    passed: bool


def lipschitz_audit(F: FieldSpec, dim: int, rng: np.random.Generator, samples: int = 100,
                    n_points: int = 4, radius: float = 2.0, tol: float = 1e-9) -> LipschitzAudit:
    """Hausdorff distance of images against L (|x - x'| + W2(nu, nu')) on random pairs."""
    max_ratio, max_excess = 0.0, -np.inf
    for _ in range(samples):
        x, x2 = rng.uniform(-radius, radius, size=(2, dim))
        nu = make_measure(rng.uniform(-radius, radius, size=(n_points, dim)))
        nu2 = make_measure(rng.uniform(-radius, radius, size=(n_points, dim)))
        b1, b2 = field_eval(F, x, nu), field_eval(F, x2, nu2)
        hausdorff = float(np.linalg.norm(b1.center - b2.center)) + abs(b1.radius - b2.radius)
        scale = float(np.linalg.norm(x - x2)) + w2(nu, nu2)
        max_excess = max(max_excess, hausdorff - F.lipschitz_L * scale)
        if scale > 0:
            max_ratio = max(max_ratio, hausdorff / scale)
    return LipschitzAudit(samples=samples, max_ratio=max_ratio, max_excess=float(max_excess),
                          passed=max_excess <= tol)
