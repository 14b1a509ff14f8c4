"""Command-line interface: offline solves, online episodes, capacity
sweeps, and strategy comparisons, each writing machine-readable reports
(and figures) into a run directory."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import __version__
from .baselines import baseline_phases, evaluate
from .conic import ToleranceConfig, build_socp_fixed_phase, schedule_from_primal, solve_conic
from .dataio import RunConfig, ingest_all, read_price
from .instances import toy_suite
from .model import (
    CapExceededError,
    ChargingSchedule,
    Fleet,
    NetworkSpec,
    SelectionConstraint,
)
from .mpc import MpcConfig, run_episode, write_event_log
from .pxa import BnBConfig, ContractViolation, SAConfig, bfsocp, pxa, simulated_annealing

_EXIT_CONTRACT = 3
_EXIT_CAP = 4


def _setup_logging():
    level = os.environ.get("ACNOPT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


def _load_config(path: str | None) -> RunConfig:
    return RunConfig.from_json(path) if path else RunConfig()


def _apply_overrides(config: RunConfig, seed, algorithm, c1, price) -> RunConfig:
    if seed is not None:
        config = replace(config, seed=seed)
    if algorithm is not None:
        config = replace(config, algorithm=algorithm)
    if c1 is not None:
        config = replace(config, network=replace(config.network, c1=c1))
    if price is not None:
        config = replace(config, price_path=price)
    return config


def _run_dir(out: str | None, command: str) -> Path:
    if out:
        path = Path(out)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path("runs") / f"{command}-{stamp}"
    path.mkdir(parents=True, exist_ok=True)
    return path


def _input_digest(sessions: str | None) -> str:
    if sessions is None:
        return "toy-suite"
    return hashlib.sha256(Path(sessions).read_bytes()).hexdigest()


def _echo_config(run_dir: Path, command: str, config: RunConfig, sessions, extra=None):
    payload = {
        "command": command,
        "package_version": __version__,
        "config": config.to_dict(),
        "sessions_path": sessions,
        "input_sha256": _input_digest(sessions),
    }
    if extra:
        payload.update(extra)
    with open(run_dir / "config.json", "w") as f:
        json.dump(payload, f, indent=2)


def _episodes(sessions: str | None, config: RunConfig) -> list[tuple[str, Fleet, NetworkSpec]]:
    """(name, fleet, spec) triples from a session file or the toy suite."""
    if sessions is not None:
        days = ingest_all(
            sessions,
            horizon_hours=config.network.t_hours,
            step_hours=config.network.delta_t_hours,
        )
        spec = config.network_spec()
        return [(f"day{day}", fleet, spec) for day, fleet in days.items()]
    return [(sc.name, sc.fleet, sc.spec) for sc in toy_suite()]


def _with_c1(spec: NetworkSpec, c1: float) -> NetworkSpec:
    return NetworkSpec(
        r_max=spec.r_max, c1=c1, c2=spec.c2, n_r=spec.n_r, step_hours=spec.step_hours
    )


def _constraint(config: RunConfig, fleet: Fleet, spec: NetworkSpec) -> SelectionConstraint:
    if config.m_choice == "identity":
        return SelectionConstraint.identity(fleet, spec)
    if config.m_choice == "full":
        return SelectionConstraint.full(fleet, spec, cap=config.column_cap)
    return SelectionConstraint.m_tilde(fleet, spec)


def _tolerances(config: RunConfig) -> ToleranceConfig:
    return ToleranceConfig(
        feas=config.tolerances.feas, gap=config.tolerances.gap
    )


def _bnb_config(config: RunConfig) -> BnBConfig:
    return BnBConfig(gap_tol=config.tolerances.bnb_gap, tol=_tolerances(config))


def _schedule_for(phases, fleet, spec, tol) -> ChargingSchedule:
    res = solve_conic(build_socp_fixed_phase(phases, fleet, spec), tol)
    if not res.optimal:
        raise ContractViolation(f"fixed-phase SOCP failed: {res.status}")
    return ChargingSchedule(schedule_from_primal(res.primal, fleet))


def _solve_with_algorithm(config: RunConfig, fleet: Fleet, spec: NetworkSpec):
    """(phases, schedule, info) for the configured offline algorithm."""
    tol = _tolerances(config)
    name = config.algorithm
    if name == "pxa":
        sol = pxa(fleet, spec, _constraint(config, fleet, spec), _bnb_config(config))
        return sol.phases, sol.schedule, {
            "relaxation_objective": sol.relaxation_objective,
            "final_objective": sol.final_objective,
            "node_count": sol.node_count,
        }
    if name == "bfsocp":
        res = bfsocp(fleet, spec, cap=config.enum_cap, tol=tol)
        return res.phases, res.schedule, {
            "objective": res.objective,
            "solve_count": res.solve_count,
        }
    if name == "sa":
        res = simulated_annealing(
            fleet, spec,
            SAConfig(iterations=config.sa_iterations, seed=config.seed, tol=tol),
        )
        schedule = _schedule_for(res.phases, fleet, spec, tol)
        return res.phases, schedule, {
            "objective": res.objective,
            "evaluated": res.evaluated,
        }
    if name.startswith("baseline:"):
        strategy = name.split(":", 1)[1]
        phases = baseline_phases(fleet, strategy, config.seed)
        schedule = _schedule_for(phases, fleet, spec, tol)
        return phases, schedule, {"strategy": strategy}
    raise click.ClickException(f"unknown algorithm {name!r}")


def _write_metrics(run_dir: Path, metrics_dict: dict, fmt: str):
    if fmt == "csv":
        path = run_dir / "metrics.csv"
        flat = {
            k: v
            for k, v in metrics_dict.items()
            if not isinstance(v, (list, dict))
        }
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(flat))
            writer.writeheader()
            writer.writerow(flat)
    else:
        with open(run_dir / "metrics.json", "w") as f:
            json.dump(metrics_dict, f, indent=2)


def _write_schedule_csv(path: Path, fleet: Fleet, power: np.ndarray):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id"] + [f"t{j}" for j in range(fleet.t)])
        for i, s in enumerate(fleet.sessions):
            writer.writerow([s.id] + [repr(float(v)) for v in power[i]])


def _write_rows_csv(path: Path, rows: list[dict]):
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _price_vector(config: RunConfig, fleet: Fleet):
    if config.price_path is None:
        return None
    return read_price(config.price_path, fleet.t)


def common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True), help="Run configuration JSON.")(fn)
    fn = click.option("--sessions", type=click.Path(exists=True), help="Session file (JSON lines or CSV).")(fn)
    fn = click.option("--out", type=click.Path(), help="Run directory (default runs/<command>-<stamp>).")(fn)
    fn = click.option("--seed", type=int, default=None, help="Seed override.")(fn)
    fn = click.option("--algorithm", default=None, help="pxa | bfsocp | sa | baseline:<name>.")(fn)
    fn = click.option("--c1", type=float, default=None, help="Secondary line limit override (kW).")(fn)
    fn = click.option("--price", type=click.Path(exists=True), default=None, help="Per-step price vector file.")(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json", help="Metrics report format.")(fn)
    fn = click.option("--plot/--no-plot", default=True, help="Render figures next to reports.")(fn)
    return fn


@click.group()
@click.version_option(__version__)
def main():
    """Three-phase EV charging: phase assignment and scheduling."""
    _setup_logging()


@main.command()
@common_options
@click.option("--toy", type=int, default=None, help="Toy scenario number (1-9) instead of --sessions.")
def solve(config_path, sessions, out, seed, algorithm, c1, price, fmt, plot, toy):
    """Offline solve of one charging episode."""
    config = _apply_overrides(_load_config(config_path), seed, algorithm, c1, price)
    run_dir = _run_dir(out, "solve")
    _echo_config(run_dir, "solve", config, sessions, {"toy": toy})
    name, fleet, spec = _pick_episode(sessions, toy, config)
    if c1 is not None:
        spec = _with_c1(spec, c1)
    try:
        phases, schedule, info = _solve_with_algorithm(config, fleet, spec)
    except CapExceededError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_EXIT_CAP)
    except ContractViolation as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(_EXIT_CONTRACT)

    metrics = evaluate(schedule, phases, fleet, spec, _price_vector(config, fleet))
    payload = {"episode": name, **info, **metrics.to_dict()}
    _write_metrics(run_dir, payload, fmt)
    _write_schedule_csv(run_dir / "schedule.csv", fleet, schedule.power)
    with open(run_dir / "phases.json", "w") as f:
        json.dump({s.id: p for s, p in zip(fleet.sessions, phases.assignment)}, f, indent=2)
    if plot:
        from . import plots

        plots.save_phase_power(
            phases.matrix() @ schedule.power, fleet.step_hours,
            run_dir / "solve_phases.png", f"{config.algorithm} on {name}",
        )
    click.echo(f"solved {name}: delivered {metrics.delivered_kwh:.3f} kWh "
               f"of {metrics.demanded_kwh:.3f} ({run_dir})")


def _pick_episode(sessions, toy, config):
    if sessions is not None and toy is not None:
        raise click.ClickException("--sessions and --toy are mutually exclusive")
    if sessions is not None:
        episodes = _episodes(sessions, config)
        return episodes[0]
    suite = toy_suite()
    idx = 1 if toy is None else toy
    if not 1 <= idx <= len(suite):
        raise click.ClickException(f"--toy must be in 1..{len(suite)}")
    sc = suite[idx - 1]
    return sc.name, sc.fleet, sc.spec


@main.command()
@common_options
@click.option("--toy", type=int, default=None, help="Toy scenario number (1-9) instead of --sessions.")
@click.option("--full-information", is_flag=True, help="Reveal all arrivals at step 0.")
def simulate(config_path, sessions, out, seed, algorithm, c1, price, fmt, plot, toy, full_information):
    """Online receding-horizon episode(s)."""
    config = _apply_overrides(_load_config(config_path), seed, algorithm, c1, price)
    run_dir = _run_dir(out, "simulate")
    _echo_config(run_dir, "simulate", config, sessions, {"toy": toy})
    mpc_cfg = MpcConfig(
        bnb=_bnb_config(config),
        full_information=full_information,
        seed=config.seed,
    )
    if sessions is not None:
        episodes = _episodes(sessions, config)
    else:
        name, fleet, spec = _pick_episode(None, toy, config)
        episodes = [(name, fleet, spec)]
    rows = []
    for name, fleet, spec in episodes:
        if c1 is not None:
            spec = _with_c1(spec, c1)
        result = run_episode(fleet, spec, mpc_cfg)
        write_event_log(result.events, run_dir / f"events-{name}.jsonl")
        metrics = evaluate(
            result.executed_schedule(), result.phases(), fleet, spec,
            _price_vector(config, fleet),
        )
        rows.append({"episode": name, "failed_steps": len(result.failed_steps),
                     **metrics.csv_row()})
        _write_schedule_csv(run_dir / f"delivered-{name}.csv", fleet, result.delivered)
        if plot:
            from . import plots

            plots.save_phase_power(
                result.phases().matrix() @ result.delivered, fleet.step_hours,
                run_dir / f"simulate-{name}.png", f"online episode {name}",
            )
        click.echo(f"simulated {name}: delivered {metrics.delivered_kwh:.3f} kWh "
                   f"of {metrics.demanded_kwh:.3f}, {len(result.failed_steps)} failed steps")
    _write_rows_csv(run_dir / "simulate.csv", rows)
    if fmt == "json":
        with open(run_dir / "simulate.json", "w") as f:
            json.dump(rows, f, indent=2)


_SWEEP_STRATEGIES = ("pxa", "round-robin", "uniform-random", "worst")


@main.command()
@common_options
@click.option("--toy", type=int, default=None, help="Toy scenario number (1-9) instead of --sessions.")
@click.option("--c1-grid", default=None, help="Comma-separated c1 values (kW).")
def sweep(config_path, sessions, out, seed, algorithm, c1, price, fmt, plot, toy, c1_grid):
    """Demand-satisfaction sweep over the secondary line limit."""
    config = _apply_overrides(_load_config(config_path), seed, algorithm, c1, price)
    run_dir = _run_dir(out, "sweep")
    name, fleet, spec = _pick_episode(sessions, toy, config)
    if c1_grid is not None:
        grid = tuple(float(v) for v in c1_grid.split(","))
    elif config.c1_grid:
        grid = config.c1_grid
    else:
        grid = tuple(spec.c1 * f for f in (0.5, 0.75, 1.0, 1.25, 1.5))
    _echo_config(run_dir, "sweep", config, sessions, {"toy": toy, "c1_grid": list(grid)})
    tol = _tolerances(config)
    rows = []
    try:
        for value in grid:
            spec_v = _with_c1(spec, value)
            for strategy in _SWEEP_STRATEGIES:
                if strategy == "pxa":
                    sol = pxa(fleet, spec_v, _constraint(config, fleet, spec_v),
                              _bnb_config(config))
                    phases, schedule = sol.phases, sol.schedule
                else:
                    phases = baseline_phases(fleet, strategy, config.seed)
                    schedule = _schedule_for(phases, fleet, spec_v, tol)
                metrics = evaluate(schedule, phases, fleet, spec_v)
                rows.append({"episode": name, "c1": value, "strategy": strategy,
                             **metrics.csv_row()})
    finally:
        _write_rows_csv(run_dir / "sweep.csv", rows)  # partial results on failure
    if fmt == "json":
        with open(run_dir / "sweep.json", "w") as f:
            json.dump(rows, f, indent=2)
    if plot:
        from . import plots

        plots.save_sweep(rows, run_dir / "sweep.png")
    click.echo(f"sweep over {len(grid)} capacities written to {run_dir}")


@main.command()
@common_options
@click.option("--uniform-seeds", type=int, default=30, help="Seed count for the uniform-random strategy.")
def compare(config_path, sessions, out, seed, algorithm, c1, price, fmt, plot, uniform_seeds):
    """All strategies on shared instances, one CSV row per episode and
    strategy (uniform-random once per seed)."""
    config = _apply_overrides(_load_config(config_path), seed, algorithm, c1, price)
    run_dir = _run_dir(out, "compare")
    _echo_config(run_dir, "compare", config, sessions, {"uniform_seeds": uniform_seeds})
    episodes = _episodes(sessions, config)
    tol = _tolerances(config)
    rows = []
    try:
        for name, fleet, spec in episodes:
            if c1 is not None:
                spec = _with_c1(spec, c1)
            price_vec = _price_vector(config, fleet)

            sol = pxa(fleet, spec, _constraint(config, fleet, spec), _bnb_config(config))
            metrics = evaluate(sol.schedule, sol.phases, fleet, spec, price_vec)
            rows.append({"episode": name, "strategy": "pxa", "seed": "",
                         **metrics.csv_row()})

            strategies = ["worst", "round-robin"]
            if all(s.declared_phase is not None for s in fleet.sessions):
                strategies.append("ev-declared")
            for strategy in strategies:
                phases = baseline_phases(fleet, strategy)
                schedule = _schedule_for(phases, fleet, spec, tol)
                metrics = evaluate(schedule, phases, fleet, spec, price_vec)
                rows.append({"episode": name, "strategy": strategy, "seed": "",
                             **metrics.csv_row()})
            for s in range(uniform_seeds):
                phases = baseline_phases(fleet, "uniform-random", s)
                schedule = _schedule_for(phases, fleet, spec, tol)
                metrics = evaluate(schedule, phases, fleet, spec, price_vec)
                rows.append({"episode": name, "strategy": "uniform-random",
                             "seed": s, **metrics.csv_row()})
    finally:
        _write_rows_csv(run_dir / "compare.csv", rows)
    if fmt == "json":
        with open(run_dir / "compare.json", "w") as f:
            json.dump(rows, f, indent=2)
    if plot:
        from . import plots

        plots.save_compare(rows, run_dir / "compare.png")
    click.echo(f"compared {len(episodes)} episodes -> {run_dir / 'compare.csv'}")


if __name__ == "__main__":
    main()
