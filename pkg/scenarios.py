#!/usr/bin/env python3
"""
Canonical scenarios
example1: ball field B(0, alpha(|x| + m2)) with V = 1/2 m2^2 and target delta_0.
example2: rotation plus mean attraction, V = 1/2 W2^2(., nu_bar) for a quantized Gaussian nu_bar.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.linalg import expm

from dynamics import (AnalyticSelection, BallField, CustomSelection, FieldSpec, LinearField, MaxContraction,
                      RandomSelection, SelectionPolicy)
from lyapunov import HalfM2Squared, HalfW2SquaredTo, LyapunovSpec, greedy_policy
from measures import DiscreteMeasure, delta0, make_measure, mean, moment2, push_forward

logger = logging.getLogger(__name__)

# ---------------- CONFIG ----------------
EXAMPLE1_DEFAULTS = {"alpha": 1.0, "dim": 2, "n_points": 0, "radius": 1.0}
EXAMPLE2_DEFAULTS = {"k": 1.0, "N": 16, "n_points": 16, "radius": 2.0, "centered": False}
ROTATION = [[0.0, 1.0], [-1.0, 0.0]]
# ----------------------------------------


class ScenarioError(ValueError):
    """Unknown scenario, unknown analytic curve or bad scenario parameters."""


@dataclass
class Scenario:
    name: str
    field: FieldSpec
    lyapunov: LyapunovSpec
    initial: DiscreteMeasure
    target: DiscreteMeasure
    params: dict
    seed: int
    analytic_refs: Dict[str, Callable[[float], object]] = field(default_factory=dict)

    def describe(self) -> dict:
        return {"name": self.name, "params": self.params, "seed": self.seed, "field": self.field.describe(),
                "lyapunov": self.lyapunov.describe(), "initial_size": self.initial.size,
                "target_size": self.target.size}


def random_cloud(n: int, dim: int, radius: float, rng: np.random.Generator,
                 centered: bool = False) -> DiscreteMeasure:
    """Uniform-weight cloud with points uniform in the box [-radius, radius]^dim."""
    points = rng.uniform(-radius, radius, size=(n, dim))
    if centered:
        points = points - points.mean(axis=0)
    return make_measure(points)


def quantize_gaussian(N: int) -> DiscreteMeasure:
    """Symmetric Gauss-Hermite tensor grid for the planar density proportional to exp(-|x|^2)."""
    m = int(round(np.sqrt(N)))
    if m < 1 or m * m != N:
        raise ScenarioError(f"N must be a positive perfect square, got {N}")
    nodes, weights = hermgauss(m)
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    xs, ys = np.meshgrid(nodes, nodes, indexing="ij")
    grid = np.column_stack([xs.ravel(), ys.ravel()])
    mass = np.outer(weights, weights).ravel()
    return make_measure(grid, mass / mass.sum())


def _merged(defaults: dict, params: Optional[dict]) -> dict:
    params = dict(params or {})
    unknown = set(params) - set(defaults) - {"points", "weights", "A", "B"}
    if unknown:
        raise ScenarioError(f"unknown scenario parameters: {sorted(unknown)}")
    return {**defaults, **params}


def _build_example1(params: Optional[dict], seed: int) -> Scenario:
    p = _merged(EXAMPLE1_DEFAULTS, params)
    alpha, dim = float(p["alpha"]), int(p["dim"])
    if "points" in p:
        initial = make_measure(p["points"], p.get("weights"))
    elif p["n_points"]:
        initial = random_cloud(int(p["n_points"]), dim, float(p["radius"]), np.random.default_rng(seed))
    else:
        pair = np.zeros((2, dim))
        pair[0, 0], pair[1, 0] = 1.0, -1.0
        initial = make_measure(pair)
    spec = HalfM2Squared(rate_alpha=alpha)
    V0 = spec.value(initial)
    m0 = moment2(initial).value
    refs = {
        "trajectory": lambda t: push_forward(initial, lambda x: np.exp(-alpha * t) * x),
        "V": lambda t: float(np.exp(-2.0 * alpha * t) * V0),
        "W2_to_target": lambda t: float(np.exp(-alpha * t) * m0),
    }
    return Scenario(name="example1", field=BallField(alpha), lyapunov=spec, initial=initial,
                    target=delta0(initial.dim), params=p, seed=seed, analytic_refs=refs)


def _build_example2(params: Optional[dict], seed: int) -> Scenario:
    p = _merged(EXAMPLE2_DEFAULTS, params)
    k = float(p["k"])
    A = np.asarray(p.get("A", ROTATION), dtype=float)
    B = np.asarray(p.get("B", -k * np.eye(2)), dtype=float)
    F = LinearField(A, B, k, seed=seed)
    target = quantize_gaussian(int(p["N"]))
    if "points" in p:
        initial = make_measure(p["points"], p.get("weights"))
    else:
        initial = random_cloud(int(p["n_points"]), 2, float(p["radius"]), np.random.default_rng(seed),
                               centered=bool(p["centered"]))
    m0 = mean(initial)
    refs = {
        "mean_norm": lambda t: float(np.exp(-k * t) * np.linalg.norm(m0)),
        "mean": lambda t: expm((A + B) * t) @ m0,
    }
    return Scenario(name="example2", field=F, lyapunov=HalfW2SquaredTo(target, rate_alpha=2.0 * k),
                    initial=initial, target=target, params=p, seed=seed, analytic_refs=refs)


SCENARIOS: Dict[str, Callable[[Optional[dict], int], Scenario]] = {
    "example1": _build_example1,
    "example2": _build_example2,
}


def build_scenario(name: str, params: Optional[dict] = None, seed: int = 0) -> Scenario:
    if name not in SCENARIOS:
        raise ScenarioError(f"unknown scenario '{name}', expected one of {sorted(SCENARIOS)}")
    scenario = SCENARIOS[name](params, seed)
    logger.debug("built %s with %s", name, scenario.params)
    return scenario


def analytic_reference(scenario: Scenario, name: str, t: float):
    if name not in scenario.analytic_refs:
        raise ScenarioError(f"scenario '{scenario.name}' has no analytic curve '{name}'")
    return scenario.analytic_refs[name](t)


def selection_for(scenario: Scenario, kind: str, seed: int = 0) -> SelectionPolicy:
    """Velocity selection by name: analytic, greedy, max_contraction or random."""
    if kind == "analytic":
        if scenario.name == "example1":
            return AnalyticSelection.contraction(scenario.field.alpha)
        return CustomSelection("centers", lambda t, mu, F: F.images(mu.points, mu)[0])
    if kind == "greedy":
        return greedy_policy(scenario.lyapunov)
    if kind == "max_contraction":
        return MaxContraction()
    if kind == "random":
        return RandomSelection(seed=seed)
    raise ScenarioError(f"unknown selection '{kind}'")
