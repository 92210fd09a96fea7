"""
Command-line entry point: `greedy-sched <command>`.

Exit codes: 0 success, 1 bad input, 2 internal invariant violation.
"""

from __future__ import annotations

import functools
import json
import logging
import sys

import click
import numpy as np

from arrivals import dump_trace, make_process, read_rates_csv
from conflict_graph import ConflictGraph, as_rates, load_graph, parse_priority
from em_assign import DEFAULT_MAX_ITER, DEFAULT_TOL, best_em_assign
from errors import CapacityError, GreedySchedError, InputError, InvariantViolation
from scheduling import SPParams
from sim_harness import (
    DEFAULT_BLOCK,
    SimConfig,
    convert_numpy_types,
    load_config,
    rate_sweep,
    replicate,
    round_to_block,
    summary_frame,
    trace_frame,
)
from stability import (
    caratheodory_sp_params,
    decompose_independent_sets,
    in_maximal_region,
    in_optimal_region,
    in_priority_region,
    sp_condition,
    test_feasibility,
)

logger = logging.getLogger(__name__)

# --- Configuration Constants ---
EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INVARIANT = 2


def reports_errors(func):
    """Turns library errors into a ❌ line on stderr and the matching exit code."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        ctx = click.get_current_context()
        try:
            return func(*args, **kwargs)
        except InvariantViolation as e:
            click.secho(f"❌ Invariant violated (this is a bug): {e}", err=True, fg="red")
            ctx.exit(EXIT_INVARIANT)
        except GreedySchedError as e:
            click.secho(f"❌ {e}", err=True, fg="red")
            ctx.exit(EXIT_INPUT)

    return wrapper


def _rate_vector(graph: ConflictGraph, rates_path: str | None, uniform: float | None) -> np.ndarray:
    if (rates_path is None) == (uniform is None):
        raise InputError("give exactly one of --rates <csv> or --uniform <rate>")
    if uniform is not None:
        return as_rates(np.full(graph.n, uniform), graph.n)
    return read_rates_csv(rates_path, graph.n)


def _emit_json(data) -> None:
    click.echo(json.dumps(convert_numpy_types(data), indent=2))


def _build_config(config_path: str | None, **flags) -> SimConfig:
    settings = load_config(config_path) if config_path else {}
    settings.update({key: value for key, value in flags.items() if value is not None})
    return SimConfig.from_dict(settings)


@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Log DEBUG messages to stderr.")
def cli(verbose):
    """Greedy maximal scheduling: region tests, priority assignment and simulation."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def simulation_options(func):
    options = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON or YAML config."),
        click.option("--graph", help="Edge-list file, ring:<n> or bipartite8."),
        click.option("--arrivals", help="Arrival specifier, e.g. bernoulli:0.48 or ring6-adv:epsilon=0.1."),
        click.option("--horizon", type=int, help="Slots per run."),
        click.option("--runs", type=int, help="Independent runs (seeds seed, seed+1, ...)."),
        click.option("--seed", type=int, help="Seed of the first run."),
        click.option("--sample-every", type=int, help="Sampling interval in slots."),
        click.option("--block", type=int, help="SP-K block length in slots."),
        click.option("--split-mode", type=click.Choice(["random", "round_robin"]), help="SP-K packet routing."),
        click.option("--summary", "summary_path", type=click.Path(dir_okay=False), help="Write the per-run summary CSV."),
        click.option("--progress/--no-progress", default=True, help="Show a progress bar."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@cli.command()
@simulation_options
@click.option("--scheduler", help="lqf, lqf:random, sp:<file>, sp:auto, spk:<file>, spk:em, spk:caratheodory, maxweight.")
@click.option("--rate", type=float, help="Uniform offered rate overriding the arrival specifier.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write the sampled trace CSV.")
@reports_errors
def simulate(config_path, graph, arrivals, horizon, runs, seed, sample_every, block, split_mode,
             summary_path, progress, scheduler, rate, out_path):
    """Run one scheduler under one arrival process."""
    config = _build_config(
        config_path,
        graph=graph,
        scheduler=scheduler,
        arrivals=arrivals,
        horizon=horizon,
        runs=runs,
        seed=seed,
        sample_every=sample_every,
        block=block,
        split_mode=split_mode,
        rate=rate,
    )
    replication = replicate(config, progress=progress)
    if out_path:
        trace_frame(replication).to_csv(out_path, index=False)
        logger.debug("Wrote trace to %s", out_path)
    if summary_path:
        summary_frame([replication]).to_csv(summary_path, index=False)
    click.echo(
        f"✅ {config.scheduler} on {config.graph}: mean final max queue {replication.mean_final_max_queue:.1f}, "
        f"mean slope {replication.mean_slope:.4g}, verdict {replication.verdict()}"
    )


@cli.command()
@simulation_options
@click.option("--scheduler", "schedulers", multiple=True, help="Repeat to compare several schedulers.")
@click.option("--rates", "rates", required=True, help="Comma-separated uniform rates, e.g. 0.30,0.35,0.40.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="Write the sweep table CSV.")
@reports_errors
def sweep(config_path, graph, arrivals, horizon, runs, seed, sample_every, block, split_mode,
          summary_path, progress, schedulers, rates, out_path):
    """Replicate every scheduler at every uniform rate."""
    try:
        rate_list = [float(r) for r in rates.split(",") if r.strip()]
    except ValueError as e:
        raise InputError(f"--rates must be comma-separated numbers, got {rates!r}") from e
    config = _build_config(
        config_path,
        graph=graph,
        scheduler=schedulers[0] if schedulers else None,
        arrivals=arrivals,
        horizon=horizon,
        runs=runs,
        seed=seed,
        sample_every=sample_every,
        block=block,
        split_mode=split_mode,
    )
    table, replications = rate_sweep(config, rate_list, schedulers or None, progress=progress)
    if out_path:
        table.to_csv(out_path, index=False)
    else:
        click.echo(table.to_csv(index=False), nl=False)
    if summary_path:
        summary_frame(replications).to_csv(summary_path, index=False)


@cli.command()
@click.option("--graph", "graph_spec", required=True, help="Edge-list file, ring:<n> or bipartite8.")
@click.option("--rates", "rates_path", type=click.Path(exists=True, dir_okay=False), help="CSV with columns link,rate.")
@click.option("--uniform", type=float, help="Same rate on every link.")
@click.option("--priority", "priority_path", type=click.Path(exists=True, dir_okay=False), help="Priority file.")
@click.option("--params", "params_path", type=click.Path(exists=True, dir_okay=False), help="SP-K parameter JSON.")
@reports_errors
def check(graph_spec, rates_path, uniform, priority_path, params_path):
    """Test a rate vector against the stability regions."""
    graph = load_graph(graph_spec)
    a = _rate_vector(graph, rates_path, uniform)
    verdicts = [in_maximal_region(graph, a)]
    if priority_path:
        with open(priority_path, "r") as f:
            verdicts.append(in_priority_region(graph, parse_priority(f.read(), graph.n), a))
    verdicts.append(test_feasibility(graph, a))
    try:
        verdicts.append(in_optimal_region(graph, a))
    except CapacityError as e:
        logger.warning("Skipping optimal region: %s", e)
    if params_path:
        verdicts.append(sp_condition(graph, SPParams.load(params_path)))
    for verdict in verdicts:
        click.echo(verdict.describe())
        if verdict.region == "sp" and verdict.boundary:
            click.secho(
                f"⚠️ SP condition holds only with equality (value {verdict.value:.12g}); the strict test fails",
                err=True,
                fg="yellow",
            )


@cli.command("assign-em")
@click.option("--graph", "graph_spec", required=True)
@click.option("--rates", "rates_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--uniform", type=float)
@click.option("--tol", type=float, default=DEFAULT_TOL, show_default=True)
@click.option("--max-iter", type=int, default=DEFAULT_MAX_ITER, show_default=True)
@click.option("--restarts", type=int, default=0, show_default=True, help="Extra random starts.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--params-out", type=click.Path(dir_okay=False), help="Also write the SP-2 parameters as JSON.")
@click.option("--block", type=int, default=DEFAULT_BLOCK, show_default=True)
@reports_errors
def assign_em(graph_spec, rates_path, uniform, tol, max_iter, restarts, seed, params_out, block):
    """Two-priority assignment by alternating minimization."""
    graph = load_graph(graph_spec)
    a = _rate_vector(graph, rates_path, uniform)
    state = best_em_assign(graph, a, restarts=restarts, seed=seed, tol=tol, max_iter=max_iter)
    if params_out:
        state.to_sp_params(block=block).dump(params_out)
    _emit_json({key: value for key, value in state.to_dict().items() if key in ("t", "x", "p1", "p2", "trace", "stable")})


@cli.command()
@click.option("--graph", "graph_spec", required=True)
@click.option("--rates", "rates_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--uniform", type=float)
@click.option("--params-out", type=click.Path(dir_okay=False), help="Write the SP-K parameters as JSON.")
@click.option("--block", type=int, help="Round θ onto a block of this many slots.")
@reports_errors
def decompose(graph_spec, rates_path, uniform, params_out, block):
    """Independent-set decomposition and the SP-K parameters built from it."""
    graph = load_graph(graph_spec)
    a = _rate_vector(graph, rates_path, uniform)
    decomposition = decompose_independent_sets(graph, a)
    params = caratheodory_sp_params(graph, a)
    if block is not None:
        params = round_to_block(graph, params, block)
    if params_out:
        params.dump(params_out)
    _emit_json({"decomposition": decomposition.to_dict(), "params": params.to_dict()})


@cli.command("dump-arrivals")
@click.option("--graph", "graph_spec", required=True)
@click.option("--arrivals", required=True, help="Arrival specifier.")
@click.option("--horizon", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@reports_errors
def dump_arrivals(graph_spec, arrivals, horizon, seed, out_path):
    """Record an arrival trace CSV (slot,link,count) for later replay with trace:<csv>."""
    graph = load_graph(graph_spec)
    frame = dump_trace(make_process(arrivals, graph, seed=seed), horizon, out_path)
    click.echo(f"✅ Wrote {len(frame)} arrival rows for {horizon} slots to {out_path}")


def main(argv=None) -> int:
    try:
        code = cli.main(args=argv, prog_name="greedy-sched", standalone_mode=False)
    except click.ClickException as e:
        e.show()
        return EXIT_INPUT
    except click.exceptions.Abort:
        click.echo("Aborted!", err=True)
        return EXIT_INPUT
    return code if isinstance(code, int) else EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
