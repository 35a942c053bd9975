#!/usr/bin/env python3
"""
Wasserstein Control Orchestrator
Command-line entry point. Each subcommand reads one JSON run configuration:

    python orchestrator.py simulate  --config study_01_second_moment/simulate.json
    python orchestrator.py certify   --config ... [--out DIR] [--seed N] [--dt X] [--T X] [--budget N]
    python orchestrator.py mayer     --config ...
    python orchestrator.py transport --config ...
    python orchestrator.py all        # every JSON config in every study_* folder
    python orchestrator.py schemas    # JSON schemas into docs/schemas/

Outputs go to <config folder>/output/<config name>/ unless --out is given.
Exit status: 0 all asserted checks pass, 2 a check failed (report still written), 1 usage/config error.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from certification import CheckTable, LogCapture, render_markdown
from data_processor import decay_frame, dpp_frame, summary_frame, trajectory_frame, write_csv, write_json
from dynamics import FieldError, apriori_check, check_admissible, integrate, lipschitz_audit
from lyapunov import (HalfM2Squared, decay_report, hji_sweep, local_lipschitz_audit, reachability_run,
                      subdifferential_audit, viability_glue)
from mayer import (MayerProblem, audit_solution, calibrate_tolerance, comparison_check, comparison_problem,
                   dpp_check, solve_mayer)
from measures import MeasureError, ParameterError, make_measure, moment2
from scenarios import ScenarioError, analytic_reference, build_scenario, random_cloud, selection_for
from schemas import (CertifyReport, ConfigError, MayerReport, PlanReport, RunConfig,
                     SimulateReport, export_schemas, load_config)
from transport import TransportError, plan_to_dict, solve_ot, w2

logger = logging.getLogger("orchestrator")

# ---------------- CONFIG ----------------
PARENT_DIR = Path(".").resolve()
STUDY_PREFIX = "study_"
OUTPUT_DIR = "output"
SCHEMA_DIR = Path("docs") / "schemas"
EXAMPLE1_REF_TOL = 1e-2
EXAMPLE2_MEAN_TOL = 1e-3
EXIT_OK, EXIT_USAGE, EXIT_FAILED = 0, 1, 2
# ----------------------------------------


def find_studies(parent: Path):
    return sorted(item for item in parent.iterdir() if item.is_dir() and item.name.startswith(STUDY_PREFIX))


def _finish(out_dir: Path, title: str, model, payload: dict, table: CheckTable, summary: dict,
            capture: LogCapture) -> bool:
    payload.update({"pass": table.passed, "checks": table.checks, "log": capture.lines})
    report = model.model_validate(payload)
    write_json(report.model_dump(by_alias=True), out_dir / "report.json")
    (out_dir / "report.md").write_text(render_markdown(title, table, summary, capture.lines), encoding="utf-8")
    return table.passed


def _w2_series(traj, target):
    return np.array([w2(traj.measure(k), target) for k in range(len(traj.times))])


# ---------------- subcommands ----------------

def run_simulate(config: RunConfig, out_dir: Path, capture: LogCapture) -> bool:
    scenario = build_scenario(config.scenario, config.params, config.seed)
    F, spec = scenario.field, scenario.lyapunov
    selection = selection_for(scenario, config.selection, config.seed)
    traj = integrate(F, scenario.initial, selection, config.dt, config.T)
    logger.info("%s: %d steps with %s", scenario.name, traj.n_steps, selection.name)
    table = CheckTable()

    admissible = check_admissible(F, traj, config.tolerances.admissible)
    table.add("Admissibility", admissible.passed, f"max residual {admissible.max_residual:.3e}")
    decay = decay_report(spec, traj, config.tolerances.tol_factor)
    table.add("Decay of e^(alpha t) V", decay.passed,
              f"max uptick {decay.max_uptick:.3e} vs budget {decay.tol_step:.3e}",
              diagnostic=scenario.name == "example2")

    extra = {}
    if scenario.name == "example1":
        reference = np.array([analytic_reference(scenario, "V", t) for t in traj.times])
        extra["V_reference"] = reference
        if config.selection == "analytic" and reference[0] > 0:
            ratio = float(np.max(np.abs(decay.V_values / reference - 1.0)))
            table.add("Analytic V reference", ratio <= EXAMPLE1_REF_TOL, f"max relative deviation {ratio:.3e}")
    else:
        observed = np.linalg.norm(np.einsum("n,knd->kd", traj.weights, traj.positions), axis=1)
        reference = np.array([analytic_reference(scenario, "mean_norm", t) for t in traj.times])
        extra.update({"mean_norm": observed, "mean_norm_reference": reference})
        if reference[0] > 0:
            rel = float(np.max(np.abs(observed - reference) / reference))
            table.add("Mean norm reference", rel <= EXAMPLE2_MEAN_TOL, f"max relative deviation {rel:.3e}")

    write_csv(trajectory_frame(traj), out_dir / "trajectory.csv")
    write_csv(summary_frame(traj), out_dir / "summary.csv")
    write_csv(decay_frame(traj.times, decay.V_values, decay.S_values, _w2_series(traj, scenario.target), extra),
              out_dir / "decay.csv")
    payload = {"scenario": scenario.name, "selection": selection.name, "steps": traj.n_steps,
               "final_m2": float(moment2(traj.final).value), "max_residual": admissible.max_residual}
    return _finish(out_dir, f"Simulation - {scenario.name}", SimulateReport, payload, table,
                   {"Scenario": scenario.name, "Selection": selection.name}, capture)


def run_certify(config: RunConfig, out_dir: Path, capture: LogCapture) -> bool:
    scenario = build_scenario(config.scenario, config.params, config.seed)
    F, spec, mu0 = scenario.field, scenario.lyapunov, scenario.initial
    opts, tol = config.certify, config.tolerances
    rng = np.random.default_rng(config.seed)
    diagnostic = scenario.name == "example2"
    table = CheckTable()

    if diagnostic:
        sweep = hji_sweep(spec, F, rng, samples=opts.samples, tol=tol.hji, around=scenario.target)
    else:
        sweep = hji_sweep(spec, F, rng, samples=opts.samples, n_max=opts.n_max, dim=mu0.dim,
                          radius=opts.radius, tol=tol.hji)
    table.add("HJI residual", sweep.passed,
              f"max {sweep.residual_max} over {len(sweep.residuals)} samples, {sweep.skipped} skipped",
              diagnostic=diagnostic)

    selection = selection_for(scenario, config.selection, config.seed)
    reach = reachability_run(spec, F, mu0, scenario.target, config.T, config.dt, selection,
                             tol_factor=tol.tol_factor)
    decay = reach.decay
    table.add("Decay of e^(alpha t) V", decay.passed,
              f"max uptick {decay.max_uptick:.3e} vs budget {decay.tol_step:.3e}, rate fit {decay.rate_fit}",
              diagnostic=diagnostic)
    table.add("Reachability", reach.mode == "strong",
              f"mode {reach.mode}, terminal W2 {reach.terminal_w2:.3e}, sup m2 {reach.sup_m2:.3e}, "
              f"sup m3 {reach.sup_m2eps:.3e}", diagnostic=True)

    viability = viability_glue(spec, F, mu0, config.T, opts.subdivisions, config.dt, selection, tol.tol_factor)
    failing = [p.index for p in viability.pieces if not p.passed]
    table.add(f"Viability gluing (n={opts.subdivisions})", viability.passed,
              f"failing pieces {failing}, end-to-end uptick {viability.end_to_end_uptick:.3e}",
              diagnostic=diagnostic)

    admissible = check_admissible(F, decay.trajectory, tol.admissible)
    table.add("Admissibility", admissible.passed, f"max residual {admissible.max_residual:.3e}")
    bounds = apriori_check(F, decay.trajectory)
    table.add("A-priori bounds", bounds.passed,
              f"{bounds.windows} windows, max M {bounds.max_M:.3e}, max D {bounds.max_D:.3e}")
    field_audit = lipschitz_audit(F, mu0.dim, rng)
    table.add("Field Lipschitz constant", field_audit.passed,
              f"max excess {field_audit.max_excess:.3e}, max ratio {field_audit.max_ratio:.3e}", diagnostic=diagnostic)

    n_points = scenario.target.size if diagnostic else 5
    audit = subdifferential_audit(spec, rng, n_measures=opts.audit_measures, n_targets=opts.audit_targets,
                                  n_points=n_points, dim=mu0.dim, tol=tol.subdiff,
                                  around=scenario.target if diagnostic else None)
    table.add("Subdifferential inequality", audit.passed, f"min gap {audit.min_gap:.3e} over {audit.samples}",
              diagnostic=not isinstance(spec, HalfM2Squared))
    lipschitz = local_lipschitz_audit(spec, rng, n_points=n_points, dim=mu0.dim)
    table.add("m2-local Lipschitz", lipschitz.passed, f"max excess {lipschitz.max_excess:.3e}")

    write_csv(decay_frame(decay.times, decay.V_values, decay.S_values, _w2_series(decay.trajectory, scenario.target)),
              out_dir / "decay.csv")
    payload = {"spec": spec.describe(), "field": F.describe(), "samples": opts.samples, "skipped": sweep.skipped,
               "residual_max": sweep.residual_max,
               "decay": {"rate_fit": decay.rate_fit, "max_uptick": decay.max_uptick, "tol_step": decay.tol_step}}
    return _finish(out_dir, f"Certification - {scenario.name}", CertifyReport, payload, table,
                   {"Scenario": scenario.name, "Rate alpha": spec.rate_alpha}, capture)


def run_mayer(config: RunConfig, out_dir: Path, capture: LogCapture) -> bool:
    scenario = build_scenario(config.scenario, config.params, config.seed)
    opts = config.mayer
    spec, F = scenario.lyapunov, scenario.field
    initial = scenario.initial
    if opts.initial is not None:
        initial = make_measure(opts.initial.points, opts.initial.weights)
    common = dict(control_grid=opts.control_grid, budget=config.budget, seed=config.seed,
                  steps_per_interval=opts.steps_per_interval, sweeps=opts.sweeps)
    if opts.terminal_cost == "lyapunov":
        problem = comparison_problem(spec, F, initial, opts.T, **common)
    else:
        problem = MayerProblem(field=F, terminal_cost=lambda nu: moment2(nu).value ** 2, initial=initial,
                               t0=0.0, T=opts.T, **common)
    table = CheckTable()

    solution = solve_mayer(problem)
    audit = audit_solution(problem, solution, config.tolerances.admissible)
    logger.info("mayer value %.6g (refined %d prefix bests)", solution.value, solution.refined)
    table.add("Value is g at the replayed terminal", audit["value_mismatch"] <= 1e-12,
              f"mismatch {audit['value_mismatch']:.3e}")
    table.add("Solution admissible", audit["admissible"], f"max residual {audit['max_residual']:.3e}")

    terminal = solve_mayer(MayerProblem(field=F, terminal_cost=problem.terminal_cost, initial=initial,
                                        t0=opts.T, T=opts.T, **common))
    table.add("Terminal consistency", terminal.value == problem.terminal_cost(initial),
              f"U(T, mu) = {terminal.value:.6g}")

    tol_dpp = calibrate_tolerance(problem, alpha=getattr(F, "alpha", 1.0)) if opts.calibrate else 0.0
    dpp = dpp_check(problem, solution.trajectory, tol_dpp, warm_start=solution.best_controls)
    table.add("DPP constancy along the solution", dpp.constant,
              f"oscillation {dpp.oscillation:.3e} vs tol_dpp {tol_dpp:.3e}")
    table.add("DPP monotonicity", dpp.monotone, f"max decrease {dpp.max_decrease:.3e}")

    excess = None
    if opts.comparison_clouds and opts.terminal_cost == "lyapunov":
        rng = np.random.default_rng(config.seed)
        clouds = [random_cloud(4, initial.dim, 1.0, rng) for _ in range(opts.comparison_clouds)]
        comparison = comparison_check(spec, problem, clouds, [0.0, opts.T / 2], tol_dpp)
        excess = comparison.max_excess
        table.add("Comparison with e^(alpha t) V", comparison.passed, f"max excess {excess:.3e}")

    write_csv(dpp_frame(dpp.times, dpp.values), out_dir / "mayer.csv")
    write_json(solution.to_dict(), out_dir / "solution.json")
    payload = {**solution.to_dict(), "comparison_max_excess": excess,
               "dpp": {"tol_dpp": tol_dpp, "max_decrease": dpp.max_decrease, "oscillation": dpp.oscillation}}
    return _finish(out_dir, f"Mayer problem - {scenario.name}", MayerReport, payload, table,
                   {"Value": solution.value, "Budget": config.budget}, capture)


def run_transport(config: RunConfig, out_dir: Path, capture: LogCapture) -> bool:
    if config.transport is None:
        raise ConfigError("transport subcommand needs a 'transport' block with source and target")
    source = make_measure(config.transport.source.points, config.transport.source.weights)
    target = make_measure(config.transport.target.points, config.transport.target.weights)
    plan = solve_ot(source, target)
    payload = plan_to_dict(plan)
    write_json(PlanReport.model_validate(payload).model_dump(), out_dir / "plan.json")
    marginals = (np.allclose(plan.matrix.sum(axis=1), source.weights, atol=1e-12)
                 and np.allclose(plan.matrix.sum(axis=0), target.weights, atol=1e-12))
    print(f"W2 = {payload['w2']:.12g}")
    logger.info("W2 %.12g between %d and %d atoms", payload["w2"], source.size, target.size)
    return marginals


RUNNERS = {"simulate": run_simulate, "certify": run_certify, "mayer": run_mayer, "transport": run_transport}


def run_scenario(config: RunConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    with LogCapture() as capture:
        logger.info("=== %s %s (seed %d) ===", config.subcommand, config.scenario, config.seed)
        try:
            passed = RUNNERS[config.subcommand](config, out_dir, capture)
        except (ScenarioError, ConfigError, FieldError, ParameterError, MeasureError, TransportError) as exc:
            print(f"[ERROR] {exc}", file=sys.stderr)
            return EXIT_USAGE
    print(f"[{'OK' if passed else 'FAIL'}] {config.subcommand} {config.scenario} -> {out_dir}")
    return EXIT_OK if passed else EXIT_FAILED


def _default_out(config_path: Path) -> Path:
    return config_path.parent / OUTPUT_DIR / config_path.stem


def run_all(parent: Path) -> int:
    studies = find_studies(parent)
    if not studies:
        print(f"No {STUDY_PREFIX}* folders found in {parent}.")
        return EXIT_USAGE
    rows, status = [], EXIT_OK
    for study in studies:
        for config_path in sorted(study.glob("*.json")):
            config = load_config(config_path)
            code = run_scenario(config, _default_out(config_path))
            rows.append({"study": study.name, "config": config_path.name, "exit": code})
            status = max(status, code)
    write_csv(pd.DataFrame(rows), parent / "summary.csv")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Lyapunov certification and Mayer problems on particle clouds")
    parser.add_argument("subcommand", choices=sorted(RUNNERS) + ["all", "schemas"])
    parser.add_argument("--config", type=Path)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--dt", type=float)
    parser.add_argument("--T", type=float)
    parser.add_argument("--budget", type=int)
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.subcommand == "schemas":
            for path in export_schemas(args.out or SCHEMA_DIR):
                print(f"[OK] {path}")
            return EXIT_OK
        if args.subcommand == "all":
            return run_all(PARENT_DIR)
        if args.config is None:
            print("[ERROR] --config is required", file=sys.stderr)
            return EXIT_USAGE
        overrides = {"subcommand": args.subcommand, "seed": args.seed, "dt": args.dt, "T": args.T,
                     "budget": args.budget}
        config = load_config(args.config, overrides)
        out_dir = args.out or (Path(config.out) if config.out else _default_out(args.config))
        return run_scenario(config, out_dir)
    except ConfigError as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
