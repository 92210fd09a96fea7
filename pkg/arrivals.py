"""
Seeded packet arrival processes for the slotted queueing model.

Every process emits integer arrival vectors, one per slot, bounded by its
a_max and with a declared long-run rate. Vectors are generated in chunks of
CHUNK_SLOTS slots, so a process gives the same trace whether it is read slot
by slot or in bulk.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from conflict_graph import ConflictGraph, as_rates
from errors import InputError, InvariantViolation

logger = logging.getLogger(__name__)

# --- Configuration Constants ---
CHUNK_SLOTS = 4096
SPLIT_TOLERANCE = 1e-9
TRACE_COLUMNS = ["slot", "link", "count"]

RING6_GROUPS = ((1, 4), (2, 5), (3, 6))
BIPARTITE_HALVES = ((1, 2, 7, 8), (3, 4, 5, 6))
BIPARTITE_PAIRS = ((1, 5), (2, 6), (3, 7), (4, 8))


def _check_probability(value: float, name: str, upper: float = 1.0) -> float:
    value = float(value)
    if not 0.0 <= value <= upper + 1e-12:
        raise InputError(f"{name} must lie in [0, {upper:g}], got {value}")
    return min(value, upper)


class ArrivalProcess(ABC):
    """Stateful, single-consumer source of per-slot arrival vectors ΔA(t), t = 1, 2, ..."""

    def __init__(self, declared_rate, a_max: int, seed: int | None = None):
        self.declared_rate = as_rates(declared_rate)
        self.n = int(self.declared_rate.shape[0])
        self.a_max = int(a_max)
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.slot = 0
        self._buffer = np.zeros((0, self.n), dtype=np.int64)
        self._cursor = 0
        self._next_chunk_start = 1

    @abstractmethod
    def _generate(self, first_slot: int, count: int) -> np.ndarray:
        """Returns arrivals for slots first_slot .. first_slot+count-1 as a (count, n) int array."""

    def _refill(self):
        chunk = np.asarray(self._generate(self._next_chunk_start, CHUNK_SLOTS), dtype=np.int64)
        if chunk.shape != (CHUNK_SLOTS, self.n):
            raise InvariantViolation(f"arrival chunk has shape {chunk.shape}, expected {(CHUNK_SLOTS, self.n)}")
        if chunk.size and (chunk.min() < 0 or chunk.max() > self.a_max):
            raise InvariantViolation(
                f"{type(self).__name__} emitted {chunk.max()} packets in one slot, a_max is {self.a_max}"
            )
        self._buffer = chunk
        self._cursor = 0
        self._next_chunk_start += CHUNK_SLOTS

    def take(self, count: int) -> np.ndarray:
        """Arrivals for the next `count` slots as a (count, n) array."""
        pieces = []
        remaining = int(count)
        while remaining > 0:
            if self._cursor >= len(self._buffer):
                self._refill()
            available = min(remaining, len(self._buffer) - self._cursor)
            pieces.append(self._buffer[self._cursor : self._cursor + available])
            self._cursor += available
            remaining -= available
        self.slot += int(count)
        if not pieces:
            return np.zeros((0, self.n), dtype=np.int64)
        return np.concatenate(pieces, axis=0)

    def next(self) -> np.ndarray:
        return self.take(1)[0]

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        return self.next()


class BernoulliProcess(ArrivalProcess):
    """Link i receives one packet per slot with probability rates_i, independently."""

    def __init__(self, rates, seed: int | None = None):
        rates = as_rates(rates)
        for link, r in enumerate(rates, start=1):
            _check_probability(r, f"Bernoulli rate at link {link}")
        super().__init__(rates, a_max=1, seed=seed)

    def _generate(self, first_slot, count):
        return (self.rng.random((count, self.n)) < self.declared_rate).astype(np.int64)


class PeriodicBurstProcess(ArrivalProcess):
    """
    Cycles through `groups` one slot at a time. In the slot of a group every
    link of the group receives one packet with probability len(groups)*rho;
    independently, with probability epsilon one packet arrives at every link.
    """

    def __init__(self, n: int, groups: Sequence[Sequence[int]], epsilon: float, rho: float, seed: int | None = None):
        self.groups = tuple(tuple(g) for g in groups)
        period = len(self.groups)
        self.epsilon = _check_probability(epsilon, "epsilon")
        self.rho = _check_probability(rho, "rho", upper=1.0 / period)
        self.fire_probability = min(1.0, period * self.rho)

        self._pattern = np.zeros((period, n), dtype=np.int64)
        for phase, group in enumerate(self.groups):
            for link in group:
                self._pattern[phase, link - 1] = 1
        declared = self.rho * self._pattern.sum(axis=0) + self.epsilon
        super().__init__(declared, a_max=int(self._pattern.max(initial=0)) + 1, seed=seed)

    def _generate(self, first_slot, count):
        phases = (first_slot - 1 + np.arange(count)) % len(self.groups)
        fire = self.rng.random(count) < self.fire_probability
        flood = self.rng.random(count) < self.epsilon
        return self._pattern[phases] * fire[:, None] + flood[:, None].astype(np.int64)


def bernoulli_process(rates, seed: int | None = None) -> BernoulliProcess:
    return BernoulliProcess(rates, seed=seed)


def ring6_adversarial(epsilon: float, seed: int | None = None, rho: float = 1 / 3) -> PeriodicBurstProcess:
    """Pairs (1,4), (2,5), (3,6) in turn, plus an epsilon flood; rho = 1/3 fires the pairs every slot."""
    return PeriodicBurstProcess(6, RING6_GROUPS, epsilon=epsilon, rho=rho, seed=seed)


def bipartite_adversarial(
    epsilon: float, seed: int | None = None, rho: float | None = None, pattern: str = "halves"
) -> PeriodicBurstProcess:
    """
    Periodic arrivals on the 8-link bipartite graph.

    "halves" alternates {1,2,7,8} and {3,4,5,6} (rho <= 1/2). "pairs" cycles the
    non-conflicting cross pairs {i, i+4} (rho <= 1/4), the direct analogue of
    the 6-ring pairs.
    """
    if pattern == "halves":
        groups = BIPARTITE_HALVES
    elif pattern == "pairs":
        groups = BIPARTITE_PAIRS
    else:
        raise InputError(f"unknown bipartite pattern {pattern!r}; use 'halves' or 'pairs'")
    if rho is None:
        rho = 1.0 / len(groups)
    return PeriodicBurstProcess(8, groups, epsilon=epsilon, rho=rho, seed=seed)


def adversarial_mix(rate: float, rho_max: float) -> tuple[float, float]:
    """Splits a uniform offered rate into (rho, epsilon): periodic part first, flood for the rest."""
    rate = float(rate)
    if rate < 0:
        raise InputError(f"offered rate must be non-negative, got {rate}")
    rho = min(rate, rho_max)
    epsilon = rate - rho
    if epsilon > 1:
        raise InputError(f"offered rate {rate} needs epsilon {epsilon} > 1")
    return rho, epsilon


# --- Trace files ---


class TraceProcess(ArrivalProcess):
    """Replays a recorded trace; slots after the last recorded one are empty."""

    def __init__(self, frame: pd.DataFrame, n: int, horizon: int | None = None):
        missing = set(TRACE_COLUMNS) - set(frame.columns)
        if missing:
            raise InputError(f"arrival trace lacks columns {sorted(missing)}")
        frame = frame[TRACE_COLUMNS].astype(np.int64)
        if len(frame) and (frame["slot"].min() < 1 or frame["link"].min() < 1 or frame["link"].max() > n):
            raise InputError(f"arrival trace references slots < 1 or links outside 1..{n}")
        if (frame["count"] < 0).any():
            raise InputError("arrival trace holds negative counts")

        last = int(frame["slot"].max()) if len(frame) else 0
        self.horizon = max(last, int(horizon or 0))
        self._dense = np.zeros((self.horizon, n), dtype=np.int64)
        np.add.at(self._dense, (frame["slot"].to_numpy() - 1, frame["link"].to_numpy() - 1), frame["count"].to_numpy())
        declared = self._dense.sum(axis=0) / self.horizon if self.horizon else np.zeros(n)
        super().__init__(declared, a_max=max(1, int(self._dense.max(initial=0))))

    @classmethod
    def from_csv(cls, path: str | Path, n: int) -> TraceProcess:
        try:
            frame = pd.read_csv(path)
        except FileNotFoundError as e:
            raise InputError(f"arrival trace {path} not found") from e
        return cls(frame, n)

    def _generate(self, first_slot, count):
        out = np.zeros((count, self.n), dtype=np.int64)
        lo = first_slot - 1
        hi = min(lo + count, self.horizon)
        if hi > lo:
            out[: hi - lo] = self._dense[lo:hi]
        return out


def trace_frame(process: ArrivalProcess, horizon: int) -> pd.DataFrame:
    first = process.slot + 1
    arrivals = process.take(horizon)
    rows, cols = np.nonzero(arrivals)
    return pd.DataFrame(
        {"slot": rows + first, "link": cols + 1, "count": arrivals[rows, cols]},
        columns=TRACE_COLUMNS,
    )


def dump_trace(process: ArrivalProcess, horizon: int, path: str | Path) -> pd.DataFrame:
    frame = trace_frame(process, horizon)
    frame.to_csv(path, index=False)
    logger.debug("Wrote %d arrival rows for %d slots to %s", len(frame), horizon, path)
    return frame


# --- Splitting into sub-queues ---


@dataclass(frozen=True)
class SplitSpec:
    """fractions[k] is the rate vector routed to sub-queue k+1."""

    fractions: tuple[tuple[float, ...], ...]

    @classmethod
    def from_rates(cls, rates: Sequence) -> SplitSpec:
        if not len(rates):
            raise InputError("a split needs at least one sub-queue")
        vectors = [as_rates(r, len(rates[0]), name="sub-queue rate") for r in rates]
        return cls(tuple(tuple(float(v) for v in vec) for vec in vectors))

    @property
    def K(self) -> int:
        return len(self.fractions)

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.fractions, dtype=float)

    def validate(self, parent_rate) -> None:
        parent_rate = as_rates(parent_rate)
        matrix = self.matrix
        if matrix.shape[1] != parent_rate.shape[0]:
            raise InputError(f"split has {matrix.shape[1]} links, parent process has {parent_rate.shape[0]}")
        gap = np.abs(matrix.sum(axis=0) - parent_rate)
        if gap.max(initial=0.0) > SPLIT_TOLERANCE:
            link = int(np.argmax(gap)) + 1
            raise InputError(
                f"sub-queue rates at link {link} sum to {matrix[:, link - 1].sum()}, "
                f"parent rate is {parent_rate[link - 1]}"
            )


class _SplitSource:
    """Draws each parent chunk once and hands the K routed parts to the children."""

    def __init__(self, parent: ArrivalProcess, spec: SplitSpec, seed: int | None, mode: str):
        if mode not in ("random", "round_robin"):
            raise InputError(f"unknown split mode {mode!r}")
        spec.validate(parent.declared_rate)
        self.parent = parent
        self.mode = mode
        self.K = spec.K
        self.rng = np.random.default_rng(seed)
        self._chunks: dict[int, list] = {}

        matrix = spec.matrix
        totals = matrix.sum(axis=0)
        weights = np.divide(matrix, totals, out=np.zeros_like(matrix), where=totals > 0)
        # Zero-rate links route anything they receive to the first sub-queue.
        weights[0, totals <= 0] = 1.0
        self.weights = weights
        self._credits = np.zeros_like(weights)

    def part(self, k: int, first_slot: int, count: int) -> np.ndarray:
        if first_slot not in self._chunks:
            parent_chunk = self.parent.take(count)
            self._chunks[first_slot] = [self._route(parent_chunk), 0]
        entry = self._chunks[first_slot]
        entry[1] += 1
        if entry[1] == self.K:
            del self._chunks[first_slot]
        return entry[0][k]

    def _route(self, chunk: np.ndarray) -> np.ndarray:
        if self.mode == "random":
            return self._route_random(chunk)
        return self._route_round_robin(chunk)

    def _route_random(self, chunk):
        parts = np.zeros((self.K,) + chunk.shape, dtype=np.int64)
        remaining = chunk.copy()
        left = np.ones(chunk.shape[1])
        for k in range(self.K - 1):
            p = np.divide(self.weights[k], left, out=np.zeros_like(left), where=left > 1e-15)
            taken = self.rng.binomial(remaining, np.clip(p, 0.0, 1.0))
            parts[k] = taken
            remaining -= taken
            left = left - self.weights[k]
        parts[self.K - 1] = remaining
        return parts

    def _route_round_robin(self, chunk):
        parts = np.zeros((self.K,) + chunk.shape, dtype=np.int64)
        for row, col in zip(*np.nonzero(chunk)):
            for _ in range(chunk[row, col]):
                credits = self._credits[:, col]
                credits += self.weights[:, col]
                k = int(np.argmax(credits))
                credits[k] -= 1.0
                parts[k, row, col] += 1
        return parts


class SplitChild(ArrivalProcess):
    def __init__(self, source: _SplitSource, k: int, declared_rate):
        self._source = source
        self.k = k
        super().__init__(declared_rate, a_max=source.parent.a_max)

    def _generate(self, first_slot, count):
        return self._source.part(self.k, first_slot, count)


def split_process(
    parent: ArrivalProcess, spec: SplitSpec, seed: int | None = None, mode: str = "random"
) -> list[ArrivalProcess]:
    """
    Routes each packet of `parent` to one of K sub-processes. Children must be
    read in step (same chunk boundaries); together they always sum to the
    parent's arrivals slot by slot.
    """
    source = _SplitSource(parent, spec, seed, mode)
    return [SplitChild(source, k, spec.fractions[k]) for k in range(spec.K)]


# --- Specifiers ---


def read_rates_csv(path: str | Path, n: int) -> np.ndarray:
    """Reads a `link,rate` CSV into a rate vector; unlisted links get rate 0."""
    try:
        frame = pd.read_csv(path)
    except FileNotFoundError as e:
        raise InputError(f"rate file {path} not found") from e
    if not {"link", "rate"} <= set(frame.columns):
        raise InputError(f"rate file {path} needs columns link,rate")
    rates = np.zeros(n)
    for link, rate in zip(frame["link"].astype(int), frame["rate"].astype(float)):
        if not 1 <= link <= n:
            raise InputError(f"rate file {path} references link {link} outside 1..{n}")
        rates[link - 1] = rate
    return as_rates(rates, n)


def parse_specifier(spec: str) -> tuple[str, dict[str, str]]:
    """`name:k=v,k=v` -> (name, {k: v}); a bare `name:value` is stored under key ''."""
    name, _, rest = spec.strip().partition(":")
    options: dict[str, str] = {}
    for item in filter(None, (part.strip() for part in rest.split(","))):
        key, sep, value = item.partition("=")
        if sep:
            options[key.strip()] = value.strip()
        else:
            options[""] = key
    return name.strip(), options


def _float_option(options: dict[str, str], key: str, spec: str, default=None):
    if key not in options:
        return default
    try:
        return float(options[key])
    except ValueError as e:
        raise InputError(f"option {key}={options[key]!r} in {spec!r} is not a number") from e


def make_process(spec: str, graph: ConflictGraph, seed: int | None = None, rate: float | None = None) -> ArrivalProcess:
    """
    Builds a process from an arrival specifier. `rate` overrides the uniform
    offered rate, which is how rate sweeps reuse a single specifier.
    """
    name, options = parse_specifier(spec)
    bare = options.get("")

    if name == "bernoulli":
        if rate is not None:
            return BernoulliProcess(np.full(graph.n, float(rate)), seed=seed)
        if "rates" in options:
            return BernoulliProcess(read_rates_csv(options["rates"], graph.n), seed=seed)
        if bare is not None:
            try:
                uniform = float(bare)
            except ValueError:
                return BernoulliProcess(read_rates_csv(bare, graph.n), seed=seed)
        else:
            uniform = _float_option(options, "rate", spec)
        if uniform is None:
            raise InputError(f"{spec!r} needs a rate, e.g. bernoulli:0.48")
        return BernoulliProcess(np.full(graph.n, uniform), seed=seed)

    if name in ("ring6-adv", "bipartite-adv"):
        expected = 6 if name == "ring6-adv" else 8
        if graph.n != expected:
            raise InputError(f"{name} needs a graph of {expected} links, got {graph.n}")
        pattern = options.get("pattern", "halves")
        rho_max = 1 / 3 if name == "ring6-adv" else (0.25 if pattern == "pairs" else 0.5)
        offered = rate if rate is not None else _float_option(options, "rate", spec)
        if offered is not None:
            rho, epsilon = adversarial_mix(offered, rho_max)
        else:
            if bare is not None:
                options.setdefault("epsilon", bare)
            epsilon = _float_option(options, "epsilon", spec, default=0.0)
            rho = _float_option(options, "rho", spec, default=rho_max)
        if name == "ring6-adv":
            return ring6_adversarial(epsilon, seed=seed, rho=rho)
        return bipartite_adversarial(epsilon, seed=seed, rho=rho, pattern=pattern)

    if name == "trace":
        path = options.get("path", bare)
        if not path:
            raise InputError(f"{spec!r} needs a trace path")
        if rate is not None:
            raise InputError("a recorded trace cannot be swept over rates")
        return TraceProcess.from_csv(path, graph.n)

    raise InputError(f"unknown arrival process {name!r} in {spec!r}")
