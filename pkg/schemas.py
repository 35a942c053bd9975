#!/usr/bin/env python3
"""
Pydantic models for run configurations and every JSON document the CLI writes.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, ValidationError


class ConfigError(ValueError):
    """Unreadable or invalid run configuration."""


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


# ---------------- configuration ----------------

class MeasureModel(StrictModel):
    points: List[List[float]]
    weights: Optional[List[float]] = None


class Tolerances(StrictModel):
    hji: float = 1e-9
    admissible: float = 1e-9
    tol_factor: PositiveFloat = 1.0
    subdiff: float = 1e-10


class CertifyOptions(StrictModel):
    samples: PositiveInt = 100
    n_max: PositiveInt = 10
    radius: PositiveFloat = 10.0
    subdivisions: PositiveInt = 4
    audit_measures: PositiveInt = 20
    audit_targets: PositiveInt = 5


class MayerOptions(StrictModel):
    T: PositiveFloat = 0.5
    control_grid: PositiveInt = 5
    steps_per_interval: PositiveInt = 20
    sweeps: int = Field(default=3, ge=0)
    terminal_cost: Literal["m2_squared", "lyapunov"] = "m2_squared"
    initial: Optional[MeasureModel] = None
    comparison_clouds: int = Field(default=0, ge=0)
    calibrate: bool = True


class TransportOptions(StrictModel):
    source: MeasureModel
    target: MeasureModel


class RunConfig(StrictModel):
    subcommand: Literal["simulate", "certify", "mayer", "transport"]
    scenario: str = "example1"
    params: Dict[str, Any] = Field(default_factory=dict)
    selection: Literal["analytic", "greedy", "max_contraction", "random"] = "analytic"
    dt: PositiveFloat = 1e-3
    T: PositiveFloat = 5.0
    seed: int = 0
    budget: PositiveInt = 2000
    tolerances: Tolerances = Field(default_factory=Tolerances)
    certify: CertifyOptions = Field(default_factory=CertifyOptions)
    mayer: MayerOptions = Field(default_factory=MayerOptions)
    transport: Optional[TransportOptions] = None
    out: Optional[str] = None


# ---------------- reports ----------------

class CheckItem(StrictModel):
    check: str
    status: Literal["PASS", "WARNING", "FAIL"]
    details: str


class ReportBase(StrictModel):
    passed: bool = Field(alias="pass")
    checks: List[CheckItem] = Field(default_factory=list)
    log: List[str] = Field(default_factory=list)


class DecaySummary(StrictModel):
    rate_fit: Optional[float]
    max_uptick: float
    tol_step: float


class SimulateReport(ReportBase):
    scenario: str
    selection: str
    steps: int
    final_m2: float
    max_residual: float


class CertifyReport(ReportBase):
    spec: Dict[str, Any]
    field: Dict[str, Any]
    samples: int
    skipped: int
    residual_max: Optional[float]
    decay: DecaySummary


class DPPSummary(StrictModel):
    tol_dpp: float
    max_decrease: float
    oscillation: float


class MayerReport(ReportBase):
    value: float
    seed: int
    budget: int
    controls: List[List[List[float]]]
    dpp: DPPSummary
    comparison_max_excess: Optional[float] = None


class PlanReport(StrictModel):
    source: MeasureModel
    target: MeasureModel
    matrix: List[List[float]]
    cost: float
    w2: float
    optimal: bool


REPORT_MODELS = {
    "run_config": RunConfig,
    "simulate_report": SimulateReport,
    "certify_report": CertifyReport,
    "mayer_report": MayerReport,
    "plan": PlanReport,
}


def load_config(path: Path, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Read a JSON run configuration; non-None overrides replace top-level keys."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    raw.update({key: value for key, value in (overrides or {}).items() if value is not None})
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from exc


def export_schemas(out_dir: Path) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, model in REPORT_MODELS.items():
        path = out_dir / f"{name}.schema.json"
        path.write_text(json.dumps(model.model_json_schema(by_alias=True), indent=2), encoding="utf-8")
        written.append(path)
    return written
