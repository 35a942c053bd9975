#!/usr/bin/env python3
"""
Discrete probability measures on R^d
Weighted point clouds, moment functionals and push-forward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

# ---------------- CONFIG ----------------
WEIGHT_SUM_TOL = 1e-12
# ----------------------------------------


class MeasureError(ValueError):
    """Raised when a point cloud cannot represent a probability measure."""


class ParameterError(ValueError):
    """Raised for out-of-range numeric parameters."""


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud. Arrays are read-only after construction."""

    points: np.ndarray   # (n, d)
    weights: np.ndarray  # (n,)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def to_dict(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True)
class MomentValue:
    value: float
    order: float

    def __float__(self) -> float:
        return self.value


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


def make_measure(points, weights: Optional[Sequence[float]] = None) -> DiscreteMeasure:
    """Build a measure, renormalizing weights with positive total mass.

    A flat sequence of scalars is read as n points in R^1. Weights default to uniform.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise MeasureError("empty support")
    if weights is None:
        w = np.full(pts.shape[0], 1.0 / pts.shape[0])
    else:
        w = np.asarray(weights, dtype=float).reshape(-1)
    if w.shape[0] != pts.shape[0]:
        raise MeasureError(f"points/weights length mismatch: {pts.shape[0]} vs {w.shape[0]}")
    if not np.all(np.isfinite(pts)):
        raise MeasureError("non-finite coordinate in support")
    if not np.all(np.isfinite(w)):
        raise MeasureError("non-finite weight")
    if np.any(w < 0):
        raise MeasureError("negative weight")
    total = w.sum()
    if total <= 0:
        raise MeasureError("zero total mass")
    if total != 1.0:
        w = w / total
    return DiscreteMeasure(points=_frozen(pts), weights=_frozen(w))


def dirac(point) -> DiscreteMeasure:
    return make_measure([np.asarray(point, dtype=float).reshape(-1)], [1.0])


def delta0(dim: int) -> DiscreteMeasure:
    return dirac(np.zeros(dim))


def mean(nu: DiscreteMeasure) -> np.ndarray:
    return nu.weights @ nu.points


def moment2(nu: DiscreteMeasure) -> MomentValue:
    sq = np.einsum("ij,ij->i", nu.points, nu.points)
    return MomentValue(value=float(np.sqrt(nu.weights @ sq)), order=2.0)


def moment2eps(nu: DiscreteMeasure, eps: float) -> MomentValue:
    """(sum w |x|^(2+eps))^(1/(2+eps)); the normalization is a choice, see DESIGN.md."""
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    order = 2.0 + eps
    norms = np.linalg.norm(nu.points, axis=1)
    return MomentValue(value=float((nu.weights @ norms ** order) ** (1.0 / order)), order=order)


def push_forward(nu: DiscreteMeasure, transform: Callable[[np.ndarray], np.ndarray]) -> DiscreteMeasure:
    """Image measure under a point-wise map. Coinciding images stay separate atoms."""
    images = np.array([np.asarray(transform(x), dtype=float).reshape(-1) for x in nu.points])
    if not np.all(np.isfinite(images)):
        raise MeasureError("push-forward produced a non-finite image")
    return DiscreteMeasure(points=_frozen(images), weights=nu.weights)


def with_points(nu: DiscreteMeasure, points: np.ndarray) -> DiscreteMeasure:
    """Same weights on new positions (particle flows keep weights fixed)."""
    return DiscreteMeasure(points=_frozen(points), weights=nu.weights)


def particle_measure(points: np.ndarray, weights: np.ndarray) -> DiscreteMeasure:
    """Wrap already-normalized weights without renormalizing them."""
    return DiscreteMeasure(points=_frozen(points), weights=_frozen(weights))
