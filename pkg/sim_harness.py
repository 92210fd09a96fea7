"""
Slotted queueing simulator, stability metrics and experiment replication.

Each slot t computes the schedule from Q(t-1), removes one packet from every
scheduled queue and then adds the arrivals ΔA(t). Queues only change through
those two steps, so Q(t) = A(t) - D(t) holds exactly and is re-checked at
every sample.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
import pandas as pd
import yaml
from scipy import stats
from tqdm import tqdm

from arrivals import CHUNK_SLOTS, ArrivalProcess, SplitSpec, make_process, split_process
from conflict_graph import ConflictGraph, PriorityVector, incidence_matrix, load_graph, parse_priority
from em_assign import best_em_assign
from errors import InputError, InvariantViolation
from scheduling import (
    LQFPolicy,
    MaxWeightPolicy,
    MultiPriorityPolicy,
    Policy,
    QueueState,
    SPParams,
    StaticPriorityPolicy,
    TIEBREAK_RULES,
)
from stability import caratheodory_sp_params, min_norm_priority, sp_condition

logger = logging.getLogger(__name__)

# --- Configuration Constants ---
DEFAULT_HORIZON = 100_000
DEFAULT_RUNS = 10
DEFAULT_SAMPLE_EVERY = 100
DEFAULT_BLOCK = 100
SPLIT_MODES = ("random", "round_robin")
# A derived split may miss the declared rate by solver round-off; anything
# larger than this is a real mismatch.
SPLIT_RESCALE_TOLERANCE = 1e-6
GRID_EPSILON = 1e-9

STABLE_SLOPE = 0.01
STABLE_QUEUE_FRACTION = 0.02
UNSTABLE_QUEUE_FRACTION = 0.05

TRACE_COLUMNS = ["run", "slot", "max_queue", "total_queue"]
SUMMARY_COLUMNS = ["scheduler", "rate", "run", "final_max_queue", "slope", "departure_rate_error"]
SWEEP_COLUMNS = ["scheduler", "rate", "mean_final_max_queue", "max_final_max_queue", "mean_slope", "verdict"]


def convert_numpy_types(data):
    """
    Recursively converts numpy values to native Python types
    to ensure JSON serialization compatibility.
    """
    if isinstance(data, dict):
        return {key: convert_numpy_types(value) for key, value in data.items()}
    if isinstance(data, (list, tuple)):
        return [convert_numpy_types(item) for item in data]
    if isinstance(data, np.ndarray):
        return convert_numpy_types(data.tolist())
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, np.floating):
        return float(data)
    if isinstance(data, np.bool_):
        return bool(data)
    return data


# --- Configuration ---


@dataclass(frozen=True)
class SimConfig:
    graph: str
    scheduler: str
    arrivals: str
    horizon: int = DEFAULT_HORIZON
    runs: int = DEFAULT_RUNS
    sample_every: int = DEFAULT_SAMPLE_EVERY
    seed: int = 0
    block: int = DEFAULT_BLOCK
    rate: float | None = None
    split_mode: str = "random"
    check_invariants: bool = True

    def __post_init__(self):
        for name in ("horizon", "runs", "sample_every", "block"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise InputError(f"{name} must be a positive integer, got {value!r}")
        if self.split_mode not in SPLIT_MODES:
            raise InputError(f"unknown split mode {self.split_mode!r}; use one of {SPLIT_MODES}")
        if self.rate is not None and self.rate < 0:
            raise InputError(f"offered rate must be non-negative, got {self.rate}")

    def replace(self, **overrides) -> SimConfig:
        """Copy with the given fields changed; None values leave a field as it is."""
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @classmethod
    def from_dict(cls, data: dict) -> SimConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown simulation settings {sorted(unknown)}")
        missing = {"graph", "scheduler", "arrivals"} - set(data)
        if missing:
            raise InputError(f"simulation config lacks {sorted(missing)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: str | Path) -> dict:
    """Reads a JSON or YAML (.yaml/.yml) config into a plain dict of SimConfig fields."""
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError as e:
        raise InputError(f"config file {path} not found") from e
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise InputError(f"config file {path} could not be parsed: {e}") from e
    if not isinstance(data, dict):
        raise InputError(f"config file {path} must hold a mapping of settings")
    return data


# --- Scheduler specifiers ---


def round_to_block(graph: ConflictGraph, params: SPParams, block: int) -> SPParams:
    """
    Puts θ on the grid of a block of `block` slots. Each class with traffic
    gets floor(required·block)+1 slots, required being its largest
    positive-rate (P a)_i; idle classes are dropped and the spare slots go
    out by largest remainder in proportion to θ.
    """
    kept, required = [], []
    for k, (p, rates) in enumerate(zip(params.priorities, params.rate_matrix)):
        positive = rates > 0
        if not positive.any():
            continue
        kept.append(k)
        required.append(float(incidence_matrix(graph, p).dot(rates)[positive].max()))
    if not kept:
        raise InputError("SP parameters carry no traffic; nothing to schedule")

    lengths = [int(np.floor(r * block + GRID_EPSILON)) + 1 for r in required]
    spare = block - sum(lengths)
    if spare < 0:
        raise InputError(f"block of {block} slots is too short; the classes need {sum(lengths)}")
    weights = np.array([params.theta[k] for k in kept])
    shares = spare * weights / weights.sum()
    extra = np.floor(shares).astype(int)
    leftover = spare - int(extra.sum())
    for idx in sorted(range(len(kept)), key=lambda i: (-(shares[i] - extra[i]), i))[:leftover]:
        extra[idx] += 1
    lengths = [length + int(e) for length, e in zip(lengths, extra)]

    rounded = SPParams(
        priorities=tuple(params.priorities[k] for k in kept),
        rates=tuple(params.rates[k] for k in kept),
        theta=tuple(length / block for length in lengths),
        block=block,
    )
    verdict = sp_condition(graph, rounded)
    if not verdict.member:
        raise InvariantViolation(f"rounded SP parameters fail the SP condition with value {verdict.value}")
    logger.debug("Rounded θ to sub-blocks %s of a %d-slot block", lengths, block)
    return rounded


def _fit_block(graph: ConflictGraph, params: SPParams, block: int) -> SPParams:
    fitted = params if params.block is not None else params.with_block(block)
    try:
        fitted.sub_block_lengths()
        return fitted
    except InputError:
        logger.debug("θ does not fit a %d-slot block; rounding", fitted.block)
        return round_to_block(graph, params, fitted.block)


@dataclass(frozen=True)
class SchedulerPlan:
    """A resolved scheduler specifier; `policy(seed)` builds a fresh policy for one run."""

    spec: str
    kind: str
    graph: ConflictGraph
    tiebreak: str = "index"
    priority: PriorityVector | None = None
    params: SPParams | None = None
    _shared: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def classes(self) -> int:
        return self.params.K if self.params is not None else 1

    def policy(self, seed=None) -> Policy:
        if self.kind == "lqf":
            return LQFPolicy(self.graph, self.tiebreak, seed=seed)
        if self.kind == "sp":
            return StaticPriorityPolicy(self.graph, self.priority)
        if self.kind == "spk":
            return MultiPriorityPolicy(self.graph, self.params)
        # The max-weight table is the same for every run.
        if "maxweight" not in self._shared:
            self._shared["maxweight"] = MaxWeightPolicy(self.graph)
        return self._shared["maxweight"]


def parse_scheduler(spec: str, graph: ConflictGraph, declared_rate, block: int = DEFAULT_BLOCK) -> SchedulerPlan:
    """
    lqf, lqf:random, sp:<priority file>, sp:auto, spk:<params JSON>, spk:em,
    spk:caratheodory, maxweight. The auto, em and caratheodory variants are
    built for the declared arrival rate.
    """
    name, _, arg = spec.strip().partition(":")
    arg = arg.strip()
    if name == "lqf":
        tiebreak = arg or "index"
        if tiebreak not in TIEBREAK_RULES:
            raise InputError(f"unknown LQF tie-break {tiebreak!r}; use one of {TIEBREAK_RULES}")
        return SchedulerPlan(spec, "lqf", graph, tiebreak=tiebreak)
    if name == "maxweight":
        return SchedulerPlan(spec, "maxweight", graph)
    if name == "sp":
        if arg == "auto":
            choice = min_norm_priority(graph, declared_rate)
            logger.debug("sp:auto picked %s with norm %.12g", choice.priority, choice.value)
            return SchedulerPlan(spec, "sp", graph, priority=choice.priority)
        if not arg:
            raise InputError("sp scheduler needs a priority file or 'auto'")
        try:
            text = Path(arg).read_text()
        except FileNotFoundError as e:
            raise InputError(f"priority file {arg} not found") from e
        return SchedulerPlan(spec, "sp", graph, priority=parse_priority(text, graph.n))
    if name == "spk":
        if arg == "em":
            state = best_em_assign(graph, declared_rate)
            if not state.stable:
                logger.warning("EM split reaches only t=%.6g; SP-2 is not certified at this rate", state.t)
            params = state.to_sp_params(block=None)
        elif arg == "caratheodory":
            params = caratheodory_sp_params(graph, declared_rate)
            params = round_to_block(graph, params, block)
        elif arg:
            params = SPParams.load(arg)
            if params.n != graph.n:
                raise InputError(f"SP-K parameters cover {params.n} links, graph has {graph.n}")
        else:
            raise InputError("spk scheduler needs a parameter file, 'em' or 'caratheodory'")
        return SchedulerPlan(spec, "spk", graph, params=_fit_block(graph, params, block))
    raise InputError(f"unknown scheduler {spec!r}")


# --- Results ---


@dataclass
class SimResult:
    run: int
    seed: int
    horizon: int
    slots: np.ndarray
    max_queue: np.ndarray
    total_queue: np.ndarray
    departures: np.ndarray
    queues: np.ndarray
    arrivals: np.ndarray
    declared_rate: np.ndarray
    checks: int = 0

    @property
    def final_max_queue(self) -> int:
        return int(self.queues.max(initial=0))

    @property
    def departure_rate(self) -> np.ndarray:
        return self.departures / self.horizon

    @property
    def departure_rate_error(self) -> float:
        return float(np.abs(self.departure_rate - self.declared_rate).max(initial=0.0))

    @property
    def slope(self) -> float:
        """Least-squares slope of the max queue over the last half of the samples."""
        half = len(self.slots) // 2
        x, y = self.slots[half:], self.max_queue[half:]
        if len(x) < 2:
            return 0.0
        return float(stats.linregress(x, y).slope)

    def verdict(self, offered: float | None = None, capacity: float | None = None) -> str:
        return classify(self.slope, self.final_max_queue, self.horizon, offered, capacity)

    def to_dict(self) -> dict:
        return convert_numpy_types(
            {
                "run": self.run,
                "seed": self.seed,
                "final_max_queue": self.final_max_queue,
                "slope": self.slope,
                "departure_rate": self.departure_rate,
                "departure_rate_error": self.departure_rate_error,
                "queues": self.queues,
            }
        )


def classify(slope: float, final_max_queue: float, horizon: int, offered=None, capacity=None) -> str:
    if slope <= STABLE_SLOPE and final_max_queue <= STABLE_QUEUE_FRACTION * horizon:
        return "stable"
    if final_max_queue >= UNSTABLE_QUEUE_FRACTION * horizon:
        return "unstable"
    if offered is not None and capacity is not None and offered > capacity and slope >= 0.5 * (offered - capacity):
        return "unstable"
    return "inconclusive"


# --- Simulation ---


@dataclass(frozen=True)
class Scenario:
    """A config with its graph, declared rate and scheduler resolved once for all runs."""

    config: SimConfig
    graph: ConflictGraph
    declared_rate: np.ndarray
    plan: SchedulerPlan

    def arrival_processes(self, seed_sequence: np.random.SeedSequence) -> list[ArrivalProcess]:
        arrival_seed, split_seed = seed_sequence.spawn(2)
        process = make_process(self.config.arrivals, self.graph, seed=arrival_seed, rate=self.config.rate)
        if self.plan.params is None:
            return [process]
        split = _split_for(self.plan.params, process.declared_rate)
        return split_process(process, split, seed=split_seed, mode=self.config.split_mode)


def _split_for(params: SPParams, declared_rate: np.ndarray) -> SplitSpec:
    matrix = params.rate_matrix
    totals = matrix.sum(axis=0)
    gap = np.abs(totals - declared_rate)
    if gap.max(initial=0.0) > SPLIT_RESCALE_TOLERANCE:
        link = int(np.argmax(gap)) + 1
        raise InputError(
            f"SP-K sub-rates at link {link} sum to {totals[link - 1]}, "
            f"the arrival process declares {declared_rate[link - 1]}"
        )
    scale = np.divide(declared_rate, totals, out=np.ones_like(totals), where=totals > 0)
    return SplitSpec.from_rates(matrix * scale)


def build_scenario(config: SimConfig) -> Scenario:
    graph = load_graph(config.graph)
    probe = make_process(config.arrivals, graph, seed=config.seed, rate=config.rate)
    declared = probe.declared_rate
    if declared.shape[0] != graph.n:
        raise InputError(f"arrival process covers {declared.shape[0]} links, graph has {graph.n}")
    plan = parse_scheduler(config.scheduler, graph, declared, block=config.block)
    return Scenario(config, graph, declared, plan)


def _check_slot(t: int, schedule: int, occupied: int, neighbor_masks) -> None:
    if schedule & ~occupied:
        raise InvariantViolation(f"slot {t}: schedule serves an empty queue")
    link = 0
    remaining = occupied
    while remaining:
        if remaining & 1:
            bit = 1 << link
            touching = neighbor_masks[link] & schedule
            if schedule & bit:
                if touching:
                    raise InvariantViolation(f"slot {t}: scheduled link {link + 1} conflicts with another scheduled link")
            elif not touching:
                raise InvariantViolation(f"slot {t}: occupied link {link + 1} could have been added to the schedule")
        remaining >>= 1
        link += 1


def simulate(config: SimConfig | Scenario, run: int = 0) -> SimResult:
    scenario = config if isinstance(config, Scenario) else build_scenario(config)
    config = scenario.config
    graph = scenario.graph
    n, horizon = graph.n, config.horizon
    seed = config.seed + run
    policy_seed, arrival_seed = np.random.SeedSequence(seed).spawn(2)

    policy = scenario.plan.policy(seed=policy_seed)
    processes = scenario.arrival_processes(arrival_seed)
    state = QueueState.zeros(n, policy.classes)
    neighbor_masks = graph.neighbor_masks
    departures = [0] * n
    arrived = [0] * n
    slots, max_queue, total_queue = [], [], []
    checks = 0

    for start in range(0, horizon, CHUNK_SLOTS):
        count = min(CHUNK_SLOTS, horizon - start)
        chunks = [p.take(count).tolist() for p in processes]
        for offset in range(count):
            t = start + offset + 1
            schedule, k = policy.step(t, state)
            if config.check_invariants:
                _check_slot(t, schedule, state.occupied_mask(k), neighbor_masks)
                checks += 1
            state.depart(schedule, k)

            link = 0
            while schedule:
                if schedule & 1:
                    departures[link] += 1
                schedule >>= 1
                link += 1

            incoming = [chunk[offset] for chunk in chunks]
            state.arrive(incoming)
            for row in incoming:
                for idx, value in enumerate(row):
                    if value:
                        arrived[idx] += value

            if t % config.sample_every == 0 or t == horizon:
                totals = state.totals()
                if config.check_invariants:
                    for idx in range(n):
                        if totals[idx] != arrived[idx] - departures[idx]:
                            raise InvariantViolation(
                                f"slot {t}: link {idx + 1} holds {totals[idx]} packets, "
                                f"arrivals minus departures is {arrived[idx] - departures[idx]}"
                            )
                    if min(min(row) for row in state.backlog) < 0:
                        raise InvariantViolation(f"slot {t}: a queue went negative")
                slots.append(t)
                max_queue.append(max(totals))
                total_queue.append(sum(totals))

    logger.debug("Run %d (seed %d) finished with max queue %d", run, seed, max_queue[-1])
    return SimResult(
        run=run,
        seed=seed,
        horizon=horizon,
        slots=np.array(slots),
        max_queue=np.array(max_queue),
        total_queue=np.array(total_queue),
        departures=np.array(departures),
        queues=np.array(state.totals()),
        arrivals=np.array(arrived),
        declared_rate=scenario.declared_rate,
        checks=checks,
    )


# --- Replication and sweeps ---


@dataclass
class Replication:
    scenario: Scenario
    results: list[SimResult]

    @property
    def config(self) -> SimConfig:
        return self.scenario.config

    @property
    def offered_rate(self) -> float:
        if self.config.rate is not None:
            return float(self.config.rate)
        return float(np.mean(self.scenario.declared_rate))

    @property
    def mean_final_max_queue(self) -> float:
        return float(np.mean([r.final_max_queue for r in self.results]))

    @property
    def max_final_max_queue(self) -> int:
        return int(max(r.final_max_queue for r in self.results))

    @property
    def mean_slope(self) -> float:
        return float(np.mean([r.slope for r in self.results]))

    @property
    def max_slope(self) -> float:
        return float(max(r.slope for r in self.results))

    def verdict(self, offered: float | None = None, capacity: float | None = None) -> str:
        return classify(self.mean_slope, self.mean_final_max_queue, self.config.horizon, offered, capacity)

    def to_dict(self) -> dict:
        return convert_numpy_types(
            {
                "config": self.config.to_dict(),
                "mean_final_max_queue": self.mean_final_max_queue,
                "max_final_max_queue": self.max_final_max_queue,
                "mean_slope": self.mean_slope,
                "max_slope": self.max_slope,
                "verdict": self.verdict(),
                "runs": [r.to_dict() for r in self.results],
            }
        )


def replicate(
    config: SimConfig | Scenario,
    progress: bool = False,
    callback: Callable[[int, SimResult], None] | None = None,
) -> Replication:
    """Runs seeds seed, seed+1, ...; aggregates depend only on the run index."""
    scenario = config if isinstance(config, Scenario) else build_scenario(config)
    results = []
    runs = tqdm(
        range(scenario.config.runs),
        desc=f"{scenario.config.scheduler}",
        disable=not progress,
        file=sys.stderr,
        leave=False,
    )
    for run in runs:
        result = simulate(scenario, run)
        results.append(result)
        if callback is not None:
            callback(run, result)
    return Replication(scenario, results)


def rate_sweep(
    config: SimConfig,
    rates: Iterable[float],
    schedulers: Iterable[str] | None = None,
    progress: bool = False,
) -> tuple[pd.DataFrame, list[Replication]]:
    """One replication per (scheduler, rate); returns the sweep table and the replications behind it."""
    rates = [float(r) for r in rates]
    schedulers = list(schedulers) if schedulers else [config.scheduler]
    rows, replications = [], []
    for scheduler in schedulers:
        for rate in rates:
            replication = replicate(config.replace(scheduler=scheduler, rate=rate), progress=progress)
            replications.append(replication)
            rows.append(
                {
                    "scheduler": scheduler,
                    "rate": rate,
                    "mean_final_max_queue": replication.mean_final_max_queue,
                    "max_final_max_queue": replication.max_final_max_queue,
                    "mean_slope": replication.mean_slope,
                    "verdict": replication.verdict(),
                }
            )
            logger.info("%s at rate %.4g: %s", scheduler, rate, replication.verdict())
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS), replications


def trace_frame(replication: Replication) -> pd.DataFrame:
    frames = [
        pd.DataFrame(
            {"run": r.run, "slot": r.slots, "max_queue": r.max_queue, "total_queue": r.total_queue},
            columns=TRACE_COLUMNS,
        )
        for r in replication.results
    ]
    if not frames:
        return pd.DataFrame(columns=TRACE_COLUMNS)
    return pd.concat(frames, ignore_index=True)


def summary_frame(replications: Iterable[Replication]) -> pd.DataFrame:
    rows = [
        {
            "scheduler": replication.config.scheduler,
            "rate": replication.offered_rate,
            "run": r.run,
            "final_max_queue": r.final_max_queue,
            "slope": r.slope,
            "departure_rate_error": r.departure_rate_error,
        }
        for replication in replications
        for r in replication.results
    ]
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
