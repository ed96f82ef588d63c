#!/usr/bin/env python3
"""
Command line front end - JSON experiment configs in, solved tables and CSV curves out

    python cli.py solve-limited --config ../configs/tradeoff_0db.json --out tables/limited_n8.json
    python cli.py simulate --config ../configs/harvest_greedy.json --out curves/harvest_greedy.csv
    python cli.py chain --config ../configs/harvest_greedy.json

Exit codes: 0 success, 2 configuration error, 3 numerical non-convergence, 4 step cap exceeded.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from baselines_bounds import (
    BoundInputs,
    ShiryaevPolicy,
    UniformSamplingPolicy,
    bound_report,
    greedy_asymptotic_add,
    interval_for_rights,
    lower_bound_add,
    upper_bound_add,
)
from errors import ChainError, ConfigError, ConvergenceError, DomainError, SimulationCapError
from limited_policy import LimitedPolicy, LimitedPolicyTable, cost_for_alpha, solve_limited
from model import kl_divergence
from montecarlo import CSV_COLUMNS, CurveSet, sweep_alpha, sweep_cost
from quadrature import ExpectationOperator
from settings import LOG_LEVELS, CurveSpec, ExperimentConfig, env_defaults, load_config
from stochastic_policy import (
    GreedyThresholdPolicy,
    OptimalStochasticPolicy,
    StochasticValueTable,
    energy_chain,
    finite_horizon_solve,
    infinite_horizon_solve,
    sampling_fraction,
)
from tables_io import load_table, save_table

_log = logging.getLogger("cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_STEP_CAP = 4

FLOAT_FORMAT = "%.12g"


def _solver_cost(config: ExperimentConfig) -> float:
    """solver.cost, else the cost paired with the smallest configured α"""
    if config.solver.cost is not None:
        return config.solver.cost
    if not config.run.alphas:
        raise ConfigError("solver.cost is not set and run.alphas is empty")
    pair = config.model.change_model().pair
    return cost_for_alpha(config.run.alphas[-1], kl_divergence(pair), config.model.rho)


def _output_path(out: Optional[str], config: ExperimentConfig, fallback: str) -> Path:
    return Path(out or config.run.out or fallback)


def cmd_solve_limited(config: ExperimentConfig, out: Optional[str] = None) -> Path:
    model = config.model.change_model()
    c = _solver_cost(config)
    table = solve_limited(config.solver.rights, model.rho, c, model.pair, config.solver.grid(),
                          config.solver.quadrature())
    audit = table.audit()
    for n_used, threshold in enumerate(table.thresholds()):
        print(f"n={n_used:3d}  threshold={threshold:.12g}")
    print("audit: " + ", ".join(f"{k}={v:.3e}" for k, v in audit.items()))
    return save_table(table, _output_path(out, config, f"limited_n{table.rights}.json"))


def cmd_solve_stochastic(config: ExperimentConfig, out: Optional[str] = None) -> Path:
    model = config.model.change_model()
    energy = config.energy.energy_model()
    solver = config.solver
    c = _solver_cost(config)
    grid = solver.grid()
    operator = ExpectationOperator(model.pair, grid.points, solver.quadrature())
    table = infinite_horizon_solve(model.rho, c, model.pair, energy, grid, tol=solver.vi_tol,
                                   max_iters=solver.max_iters, quadrature=solver.quadrature(), operator=operator)
    print(f"iterations={table.iterations}  achieved_tol={table.achieved_tol:.3e}")
    if solver.horizon is not None:
        finite = finite_horizon_solve(solver.horizon, model.rho, c, model.pair, energy, grid, operator=operator)
        gap = float(np.max(np.abs(finite[0] - table.v)))
        print(f"horizon={solver.horizon}  sup|V^T_0 - V|={gap:.3e}")
    return save_table(table, _output_path(out, config, f"stochastic_c{energy.capacity}.json"))


Factory = Callable[[float], object]


def _load_kind(path: Optional[str], kind: type, policy: str):
    if path is None:
        return None
    table = load_table(path)
    if not isinstance(table, kind):
        raise ConfigError(f"table {path} cannot drive the {policy} policy")
    return table


def _curve(spec: CurveSpec, config: ExperimentConfig, table_path: Optional[str], threads: int,
           step_cap: int, operator_cache: Dict[str, ExpectationOperator]) -> CurveSet:
    model = config.model.change_model()
    energy = config.energy.energy_model()
    run, solver = config.run, config.solver
    rho, pair = model.rho, model.pair
    kl = kl_divergence(pair)
    grid, quadrature = solver.grid(), solver.quadrature()
    path = spec.table or table_path
    common = dict(trials=run.trials, master_seed=run.master_seed, threads=threads, step_cap=step_cap)

    def operator() -> ExpectationOperator:
        if "op" not in operator_cache:
            operator_cache["op"] = ExpectationOperator(pair, grid.points, quadrature)
        return operator_cache["op"]

    bound: Optional[Callable[[float], float]] = None
    if spec.policy == "shiryaev":
        factory: Factory = lambda a: ShiryaevPolicy(rho, pair, a)
        bound = lambda a: lower_bound_add(a, kl, rho)
    elif spec.policy == "uniform":
        factory = lambda a: UniformSamplingPolicy(spec.interval, a)
        bound = lambda a: upper_bound_add(a, kl, rho, spec.interval)
    elif spec.policy == "greedy":
        factory = lambda a: GreedyThresholdPolicy(a, energy)
        ptilde = sampling_fraction(energy)
        bound = lambda a: greedy_asymptotic_add(a, ptilde, kl, rho)
    elif spec.policy == "limited":
        rights = spec.rights if spec.rights is not None else solver.rights
        table = _load_kind(path, LimitedPolicyTable, "limited")
        if table is not None:
            factory = lambda a: LimitedPolicy(table, a)
        elif run.costs:
            solve = lambda c: LimitedPolicy(solve_limited(rights, rho, c, pair, grid, quadrature, operator()))
            return sweep_cost(solve, run.costs, model, **common)
        else:
            factory = lambda a: LimitedPolicy(
                solve_limited(rights, rho, cost_for_alpha(a, kl, rho), pair, grid, quadrature, operator()), a)
        bound = lambda a: lower_bound_add(a, kl, rho)
    else:
        table = _load_kind(path, StochasticValueTable, "optimal")
        if table is not None:
            return sweep_cost(lambda c: OptimalStochasticPolicy(table), [table.c], model, energy, **common)
        if not run.costs:
            raise ConfigError("optimal policy needs a solved table (--table or curve.table) or run.costs")
        solve = lambda c: OptimalStochasticPolicy(infinite_horizon_solve(
            rho, c, pair, energy, grid, solver.vi_tol, solver.max_iters, quadrature, operator()))
        return sweep_cost(solve, run.costs, model, energy, **common)

    references = (lambda a: {"bound": bound(a)}) if run.bound_reference and bound else None
    return sweep_alpha(factory, run.alphas, model, energy if spec.policy == "greedy" else None,
                       references=references, **common)


def cmd_simulate(config: ExperimentConfig, out: Optional[str] = None, table_path: Optional[str] = None,
                 threads: int = 1, step_cap: Optional[int] = None) -> pd.DataFrame:
    step_cap = step_cap or env_defaults().step_cap
    cache: Dict[str, ExpectationOperator] = {}
    frames = [_curve(spec, config, table_path, threads, step_cap, cache).to_frame() for spec in config.run.curves]
    frame = pd.concat(frames, ignore_index=True)
    extra = [col for col in frame.columns if col not in CSV_COLUMNS]
    frame = frame[CSV_COLUMNS + extra]
    text = frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    target = out or config.run.out
    if target:
        path = Path(target)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        _log.info("curves written to %s", path)
    else:
        sys.stdout.write(text)
    return frame


def cmd_bounds(config: ExperimentConfig, out: Optional[str] = None) -> pd.DataFrame:
    model = config.model.change_model()
    energy = config.energy.energy_model()
    kl = kl_divergence(model.pair)
    ptilde = sampling_fraction(energy)
    rows: List[Dict[str, float]] = []
    for alpha in config.run.alphas:
        row = bound_report(BoundInputs(alpha, kl, model.rho, config.run.interval, ptilde))
        row["kl"] = kl
        row["ptilde"] = ptilde
        if config.solver.rights >= 1:
            row["interval_for_rights"] = interval_for_rights(alpha, model.rho, config.solver.rights)
        rows.append(row)
    frame = pd.DataFrame.from_records(rows)
    print(f"kl={kl:.12g}  |ln(1-rho)|={-np.log1p(-model.rho):.12g}  interval={config.run.interval}")
    print(frame.to_string(index=False, float_format=lambda v: FLOAT_FORMAT % v))
    if out:
        frame.to_csv(out, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return frame


def cmd_chain(config: ExperimentConfig, out: Optional[str] = None) -> Dict[str, object]:
    energy = config.energy.energy_model()
    chain = energy_chain(energy)
    report = {
        "transition": chain.transition.tolist(),
        "stationary": chain.stationary.tolist(),
        "stationary_power": chain.power_stationary.tolist(),
        "agreement": float(np.max(np.abs(chain.stationary - chain.power_stationary))),
        "sampling_fraction": chain.sampling_fraction,
        "mean_arrival": energy.mean_arrival,
        "degenerate": chain.degenerate,
    }
    with np.printoptions(precision=6, suppress=True):
        print("transition matrix:")
        print(chain.transition)
        print(f"stationary (solve): {chain.stationary}")
        print(f"stationary (power): {chain.power_stationary}")
    print(f"sampling fraction p~={chain.sampling_fraction:.12g}  E[nu]={energy.mean_arrival:.12g}")
    if out:
        Path(out).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON); defaults apply when omitted")
    common.add_argument("--out", help="output path for the table, CSV or report")
    common.add_argument("--seed", type=int, help="master seed, overrides run.master_seed")
    common.add_argument("--threads", type=int, help="worker processes for simulation")
    common.add_argument("--table", help="solved table for the limited or optimal policy")
    common.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("--log-level", choices=LOG_LEVELS, help="logging level (default QCD_LOG_LEVEL)")

    parser = argparse.ArgumentParser(description="Bayesian quickest change detection with limited sampling rights.")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, text in (("solve-limited", "solve the N-rights value table"),
                       ("solve-stochastic", "solve the stochastic-rights value table"),
                       ("simulate", "Monte Carlo ADD/PFA curves as CSV"),
                       ("bounds", "first-order delay bounds"),
                       ("chain", "greedy energy chain and its stationary law")):
        commands.add_parser(name, parents=[common], help=text)
    return parser


def _resolve(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError(f"--seed must fit in 64 bits, got {args.seed}")
        config.run.master_seed = args.seed
    if args.threads is not None and args.threads < 1:
        raise ConfigError(f"--threads must be positive, got {args.threads}")
    return config


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        defaults = env_defaults()
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=args.log_level or defaults.log_level,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        config = _resolve(args)
        if args.print_config:
            print(json.dumps(config.to_dict(), indent=2))
            return EXIT_OK
        threads = args.threads or defaults.threads
        if args.command == "solve-limited":
            path = cmd_solve_limited(config, args.out)
            print(f"table written to {path}")
        elif args.command == "solve-stochastic":
            path = cmd_solve_stochastic(config, args.out)
            print(f"table written to {path}")
        elif args.command == "simulate":
            cmd_simulate(config, args.out, args.table, threads, defaults.step_cap)
        elif args.command == "bounds":
            cmd_bounds(config, args.out)
        else:
            cmd_chain(config, args.out)
    except (ConfigError, DomainError) as exc:
        _log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except (ConvergenceError, ChainError) as exc:
        _log.error("numerical failure: %s", exc)
        return EXIT_CONVERGENCE
    except SimulationCapError as exc:
        _log.error("simulation failure: %s", exc)
        return EXIT_STEP_CAP
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
