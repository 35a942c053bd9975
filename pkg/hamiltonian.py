#!/usr/bin/env python3
"""
Hamiltonian of the set-valued field
H_F(nu, p) = sum_i w_i inf_{v in F(x_i, nu)} <p(x_i), v>, its argmin selection,
the greedy steering policy built on it, and the modulus residual used by the
comparison principle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from dynamics import FieldSpec, SelectionPolicy, field_eval
from measures import DiscreteMeasure, ParameterError
from transport import Displacement, displacement_pq, w2

logger = logging.getLogger(__name__)

SUPPORT_MATCH_TOL = 1e-12


class HamiltonianError(ValueError):
    """Raised when a displacement is not defined on the measure's support."""


@dataclass(frozen=True)
class HamiltonianValue:
    value: float
    per_point: np.ndarray


def _check_support(nu: DiscreteMeasure, p: Displacement):
    if p.base.points.shape != nu.points.shape or not np.allclose(
            p.base.points, nu.points, rtol=0.0, atol=SUPPORT_MATCH_TOL):
        raise HamiltonianError("displacement base does not match the measure support")


def ball_infima(vectors: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """inf over B(c, r) of <p, v> = <p, c> - r |p|, row-wise."""
    return np.einsum("...d,...d->...", vectors, centers) - radii * np.linalg.norm(vectors, axis=-1)


def hamiltonian(F: FieldSpec, nu: DiscreteMeasure, p: Displacement) -> HamiltonianValue:
    _check_support(nu, p)
    centers, radii = F.images(nu.points, nu)
    per_point = ball_infima(p.vectors, centers, radii)
    return HamiltonianValue(value=float(nu.weights @ per_point), per_point=per_point)


def argmin_directions(vectors: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """c - r p/|p| (or c when p = 0), row-wise."""
    norms = np.linalg.norm(vectors, axis=-1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = np.where(norms[..., None] > 0, vectors / safe[..., None], 0.0)
    return centers - radii[..., None] * unit


def argmin_selection(F: FieldSpec, x, nu: DiscreteMeasure, p_x) -> np.ndarray:
    ball = field_eval(F, x, nu)
    p_x = np.asarray(p_x, dtype=float).reshape(1, -1)
    return argmin_directions(p_x, ball.center[None, :], np.array([ball.radius]))[0]


class GreedySelection(SelectionPolicy):
    """Steers every particle to the argmin of <p(x), v> over its image.

    `p_source(mu)` returns (Displacement | None, valid). When the current candidate
    is invalid the previous valid one is reused and the fallback is logged.
    """

    def __init__(self, p_source: Callable[[DiscreteMeasure], tuple], label: str = "greedy"):
        super().__init__()
        self.name = label
        self.p_source = p_source
        self._last: Optional[np.ndarray] = None

    def reset(self):
        super().reset()
        self._last = None

    def propose(self, t, mu, F, centers, radii):
        p, valid = self.p_source(mu)
        if valid:
            self._last = p.vectors
            vectors = p.vectors
        elif self._last is not None:
            self.events.append(f"t={t:.6g}: invalid p-source, reusing previous candidate")
            vectors = self._last
        else:
            self.events.append(f"t={t:.6g}: invalid p-source, no previous candidate, using centers")
            return centers.copy()
        return argmin_directions(vectors, centers, radii)


@dataclass(frozen=True)
class HokResidual:
    residual: float
    bound: float
    w2: float
    h_source: float
    h_target: float

    @property
    def within_bound(self) -> bool:
        return self.residual <= self.bound


def hok_residual(F: FieldSpec, nu1: DiscreteMeasure, nu2: DiscreteMeasure, lam: float,
                 reverse_q: bool = True) -> HokResidual:
    """|H(nu1, lam p) - H(nu2, -+lam q)| against 2 L lam W2^2.

    With reverse_q the second Hamiltonian is taken along -q, the direction the
    supersolution test uses; reverse_q=False keeps the literal +q pairing.
    """
    if not lam > 0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    p, q = displacement_pq(nu1, nu2)
    q_sign = -1.0 if reverse_q else 1.0
    h1 = hamiltonian(F, nu1, p.scaled(lam)).value
    h2 = hamiltonian(F, nu2, q.scaled(q_sign * lam)).value
    dist = w2(nu1, nu2)
    return HokResidual(residual=abs(h1 - h2), bound=2.0 * F.lipschitz_L * lam * dist ** 2, w2=dist,
                       h_source=h1, h_target=h2)


def sphere_sampling_infimum(F: FieldSpec, x, nu: DiscreteMeasure, p_x, rng: np.random.Generator,
                            samples: int = 10_000) -> float:
    """Minimum of <p, v> over sampled boundary points of F(x, nu); an upper bound on the infimum."""
    ball = field_eval(F, x, nu)
    p_x = np.asarray(p_x, dtype=float)
    directions = rng.normal(size=(samples, p_x.shape[0]))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    boundary = ball.center + ball.radius * directions
    return float(np.min(boundary @ p_x))
