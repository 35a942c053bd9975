#!/usr/bin/env python3
"""
Exact discrete optimal transport
W2 distances, optimal plans, plan inversion and barycentric displacements.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import ot
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from measures import DiscreteMeasure, ParameterError

logger = logging.getLogger(__name__)

# ---------------- CONFIG ----------------
EMD_MAX_ITER = 1_000_000
ORACLE_MAX_SIZE = 8
MAP_ENTRY_TOL = 1e-14   # plan entries below this (relative to row mass) count as zero
# ----------------------------------------


class TransportError(ValueError):
    """Raised when two measures cannot be coupled (dimension mismatch, oracle size)."""


@dataclass(frozen=True)
class TransportPlan:
    source: DiscreteMeasure
    target: DiscreteMeasure
    matrix: np.ndarray
    cost: float
    optimal: bool = True


@dataclass(frozen=True)
class Displacement:
    """One vector per support point of `base`."""

    base: DiscreteMeasure
    vectors: np.ndarray
    is_map: bool = True
    skipped: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.vectors.shape != self.base.points.shape:
            raise TransportError(
                f"displacement shape {self.vectors.shape} does not match support {self.base.points.shape}")
        if not np.all(np.isfinite(self.vectors)):
            raise TransportError("non-finite displacement vector")

    def scaled(self, factor: float) -> "Displacement":
        return Displacement(self.base, factor * self.vectors, self.is_map, self.skipped)

    def l2_norm(self) -> float:
        return float(np.sqrt(self.base.weights @ np.einsum("ij,ij->i", self.vectors, self.vectors)))


def squared_costs(nu1: DiscreteMeasure, nu2: DiscreteMeasure) -> np.ndarray:
    _check_dims(nu1, nu2)
    return cdist(nu1.points, nu2.points, metric="sqeuclidean")


def _check_dims(nu1: DiscreteMeasure, nu2: DiscreteMeasure):
    if nu1.dim != nu2.dim:
        raise TransportError(f"dimension mismatch: {nu1.dim} vs {nu2.dim}")


def solve_ot(nu1: DiscreteMeasure, nu2: DiscreteMeasure) -> TransportPlan:
    """Optimal plan for the squared Euclidean cost (network simplex vertex)."""
    costs = squared_costs(nu1, nu2)
    if nu1.size == 1 or nu2.size == 1:
        # a Dirac marginal admits a single coupling
        matrix = np.outer(nu1.weights, nu2.weights)
    else:
        matrix = ot.emd(nu1.weights, nu2.weights, costs, numItermax=EMD_MAX_ITER)
        matrix = np.asarray(matrix, dtype=float)
    cost = float(np.sum(matrix * costs))
    return TransportPlan(source=nu1, target=nu2, matrix=matrix, cost=max(cost, 0.0), optimal=True)


def w2(nu1: DiscreteMeasure, nu2: DiscreteMeasure) -> float:
    return float(np.sqrt(solve_ot(nu1, nu2).cost))


def invert_plan(plan: TransportPlan) -> TransportPlan:
    return TransportPlan(source=plan.target, target=plan.source, matrix=plan.matrix.T.copy(),
                         cost=plan.cost, optimal=plan.optimal)


def barycentric_projection(plan: TransportPlan):
    """Per-row conditional mean of the plan. Returns (barycenters, skipped_rows)."""
    rows = plan.matrix.sum(axis=1)
    bary = plan.source.points.copy()
    skipped = []
    for i, mass in enumerate(rows):
        if mass <= 0.0 or plan.source.weights[i] <= 0.0:
            skipped.append(i)
            continue
        bary[i] = plan.matrix[i] @ plan.target.points / plan.source.weights[i]
    return bary, tuple(skipped)


def _rows_are_maps(plan: TransportPlan) -> bool:
    for i, row in enumerate(plan.matrix):
        mass = plan.source.weights[i]
        if mass <= 0.0:
            continue
        if np.count_nonzero(row > MAP_ENTRY_TOL * mass) > 1:
            return False
    return True


def displacement_pq(nu1: DiscreteMeasure, nu2: DiscreteMeasure):
    """Barycentric displacements p over nu1 and q over nu2 from one optimal plan."""
    plan = solve_ot(nu1, nu2)
    bary_p, skipped_p = barycentric_projection(plan)
    bary_q, skipped_q = barycentric_projection(invert_plan(plan))
    if skipped_p or skipped_q:
        logger.warning("zero-weight atoms skipped in displacement: p%s q%s", skipped_p, skipped_q)
    p = Displacement(nu1, nu1.points - bary_p, is_map=_rows_are_maps(plan), skipped=skipped_p)
    q = Displacement(nu2, nu2.points - bary_q, is_map=_rows_are_maps(invert_plan(plan)), skipped=skipped_q)
    return p, q


def optimal_displacement(nu: DiscreteMeasure, xi: DiscreteMeasure, lam: float) -> Displacement:
    """lam * (barycenter of the optimal plan row - x); is_map when no row splits."""
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    plan = solve_ot(nu, xi)
    bary, skipped = barycentric_projection(plan)
    return Displacement(nu, lam * (bary - nu.points), is_map=_rows_are_maps(plan), skipped=skipped)


def optimal_assignment(nu1: DiscreteMeasure, nu2: DiscreteMeasure) -> np.ndarray:
    """Optimal permutation sigma (x_i -> y_sigma(i)) for equal-size uniform clouds."""
    if nu1.size != nu2.size or not (nu1.is_uniform() and nu2.is_uniform()):
        raise TransportError("assignment requires equal-size uniform clouds")
    _, cols = linear_sum_assignment(squared_costs(nu1, nu2))
    return cols


def permutation_oracle(nu1: DiscreteMeasure, nu2: DiscreteMeasure) -> float:
    """Brute-force minimum cost over all permutation couplings (test oracle)."""
    n = nu1.size
    if n != nu2.size or n > ORACLE_MAX_SIZE or not (nu1.is_uniform() and nu2.is_uniform()):
        raise TransportError(f"oracle needs equal-size uniform clouds of at most {ORACLE_MAX_SIZE} atoms")
    costs = squared_costs(nu1, nu2)
    rows = np.arange(n)
    best = min(costs[rows, list(perm)].sum() for perm in itertools.permutations(range(n)))
    return float(best) / n


def plan_to_dict(plan: TransportPlan) -> dict:
    return {
        "source": plan.source.to_dict(),
        "target": plan.target.to_dict(),
        "matrix": plan.matrix.tolist(),
        "cost": plan.cost,
        "w2": float(np.sqrt(plan.cost)),
        "optimal": plan.optimal,
    }
