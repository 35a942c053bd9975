#!/usr/bin/env python3
"""
Data Processing Module
Reads and writes measures, trajectories, decay tables, DPP node values and
transport plans. Tables are long-format CSV written with pandas.
"""

import json
import logging
from pathlib import Path
from typing import Dict, Optional

import numpy as np
import pandas as pd

from dynamics import TrajectoryRecord
from measures import DiscreteMeasure, MeasureError, make_measure

logger = logging.getLogger(__name__)

# ---------------- CONFIG ----------------
FLOAT_FORMAT = "%.17g"
# ----------------------------------------


def coordinate_columns(prefix: str, dim: int):
    return [f"{prefix}{j + 1}" for j in range(dim)]


def load_measure(path: Path) -> DiscreteMeasure:
    """Measure from JSON {points, weights} or CSV with columns x1..xd and optional w."""
    path = Path(path)
    if not path.exists():
        raise MeasureError(f"measure file not found: {path}")
    if path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
        return make_measure(data["points"], data.get("weights"))
    df = pd.read_csv(path)
    x_cols = [c for c in df.columns if c.startswith("x") and c[1:].isdigit()]
    if not x_cols:
        raise MeasureError(f"no x1..xd columns in {path}")
    x_cols.sort(key=lambda c: int(c[1:]))
    weights = df["w"].to_numpy() if "w" in df.columns else None
    return make_measure(df[x_cols].to_numpy(), weights)


def save_measure(nu: DiscreteMeasure, path: Path):
    path = Path(path)
    if path.suffix == ".json":
        write_json(nu.to_dict(), path)
        return
    df = pd.DataFrame(nu.points, columns=coordinate_columns("x", nu.dim))
    df["w"] = nu.weights
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)


def trajectory_frame(traj: TrajectoryRecord) -> pd.DataFrame:
    """One row per (node, particle): t, particle, x1..xd, v1..vd, w. The last node has no velocity."""
    K, n, d = traj.positions.shape
    velocities = np.full((K, n, d), np.nan)
    velocities[:-1] = traj.velocities
    df = pd.DataFrame({
        "t": np.repeat(traj.times, n),
        "particle": np.tile(np.arange(n), K),
    })
    df[coordinate_columns("x", d)] = traj.positions.reshape(K * n, d)
    df[coordinate_columns("v", d)] = velocities.reshape(K * n, d)
    df["w"] = np.tile(traj.weights, K)
    return df


def summary_frame(traj: TrajectoryRecord) -> pd.DataFrame:
    residual = np.append(traj.diagnostics.get("residual", np.zeros(traj.n_steps)), np.nan)
    return pd.DataFrame({"t": traj.times, "m2": traj.m2_series(), "residual": residual})


def decay_frame(times: np.ndarray, V: np.ndarray, S: np.ndarray, w2_to_target: np.ndarray,
                extra: Optional[Dict[str, np.ndarray]] = None) -> pd.DataFrame:
    df = pd.DataFrame({"t": times, "V": V, "S": S, "W2_to_target": w2_to_target})
    for name, column in (extra or {}).items():
        df[name] = column
    return df


def dpp_frame(times: np.ndarray, values: np.ndarray, reference: Optional[np.ndarray] = None) -> pd.DataFrame:
    df = pd.DataFrame({"t": times, "value": values})
    if reference is not None:
        df["bound"] = reference
    return df


def write_csv(df: pd.DataFrame, path: Path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info("wrote %s (%d rows)", Path(path).name, len(df))


def write_json(payload: dict, path: Path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=False), encoding="utf-8")
    logger.info("wrote %s", Path(path).name)


def read_table(path: Path) -> pd.DataFrame:
    return pd.read_csv(path)
