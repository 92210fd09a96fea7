"""
Greedy maximal scheduling driven by priority vectors.

Every scheduler here reduces to one greedy pass: links are examined once, in
priority order, and a link with a non-empty queue joins the schedule unless a
neighbor already did. LQF recomputes the order from queue lengths each slot,
SP uses a fixed order, SP-K rotates K orders over sub-blocks of a block, and
max-weight is the exact oracle the greedy schedulers are compared against.
"""

from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from conflict_graph import (
    ENUM_N_MAX,
    ConflictGraph,
    PriorityVector,
    as_rates,
    independent_sets,
    links_to_mask,
    mask_to_links,
)
from errors import CapacityError, InputError

logger = logging.getLogger(__name__)

# --- Configuration Constants ---
THETA_TOLERANCE = 1e-9
MAX_WEIGHT_TABLE_LIMIT = 1 << 16
TIEBREAK_RULES = ("index", "random")

Schedule = frozenset[int]


# --- Greedy core ---


def greedy_mask(order: Sequence[int], neighbor_masks: Sequence[int], occupied: int) -> int:
    chosen = 0
    for link in order:
        bit = 1 << (link - 1)
        if occupied & bit and not neighbor_masks[link - 1] & chosen:
            chosen |= bit
    return chosen


def greedy_schedule(graph: ConflictGraph, p: PriorityVector, occupied: Iterable[int]) -> Schedule:
    if p.n != graph.n:
        raise InputError(f"priority vector has {p.n} entries, graph has {graph.n} links")
    occupied_mask = links_to_mask(graph.check_link(v) for v in occupied)
    return mask_to_links(greedy_mask(p.order, graph.neighbor_masks, occupied_mask))


def _occupied(q: Sequence[int]) -> int:
    mask = 0
    for idx, backlog in enumerate(q):
        if backlog > 0:
            mask |= 1 << idx
    return mask


def _check_queue(graph: ConflictGraph, q: Sequence[int]) -> None:
    if len(q) != graph.n:
        raise InputError(f"queue vector has {len(q)} entries, graph has {graph.n} links")


# --- LQF ---


def lqf_order(q: Sequence[int], tiebreak: str = "index", rng: np.random.Generator | None = None) -> list[int]:
    """Links from longest to shortest queue."""
    links = range(1, len(q) + 1)
    if tiebreak == "index":
        return sorted(links, key=lambda link: (-q[link - 1], link))
    if tiebreak == "random":
        if rng is None:
            raise InputError("random LQF tie-break needs a seeded generator")
        keys = rng.random(len(q))
        return sorted(links, key=lambda link: (-q[link - 1], keys[link - 1]))
    raise InputError(f"unknown tie-break rule {tiebreak!r}; use one of {TIEBREAK_RULES}")


def lqf_priorities(q: Sequence[int], tiebreak: str = "index", rng: np.random.Generator | None = None) -> PriorityVector:
    return PriorityVector.from_order(lqf_order(q, tiebreak, rng))


def lqf_step(
    graph: ConflictGraph, q: Sequence[int], tiebreak: str = "index", rng: np.random.Generator | None = None
) -> Schedule:
    """Schedule for a slot from the queue lengths Q(t-1) at its start."""
    _check_queue(graph, q)
    order = lqf_order(q, tiebreak, rng)
    return mask_to_links(greedy_mask(order, graph.neighbor_masks, _occupied(q)))


# --- Static priority ---


def sp_single_step(graph: ConflictGraph, p: PriorityVector, q: Sequence[int]) -> Schedule:
    _check_queue(graph, q)
    if p.n != graph.n:
        raise InputError(f"priority vector has {p.n} entries, graph has {graph.n} links")
    return mask_to_links(greedy_mask(p.order, graph.neighbor_masks, _occupied(q)))


@dataclass(frozen=True)
class SPParams:
    """
    Multi-priority SP parameters {p^(k), a^(k), θ^(k)}. Class k owns sub-queue k
    and a sub-block of round(θ^(k)·block) consecutive slots inside each block.
    """

    priorities: tuple[PriorityVector, ...]
    rates: tuple[tuple[float, ...], ...]
    theta: tuple[float, ...]
    block: int | None = None

    def __post_init__(self):
        K = len(self.priorities)
        if K == 0:
            raise InputError("SP parameters need at least one priority vector")
        if len(self.rates) != K or len(self.theta) != K:
            raise InputError(
                f"SP parameters disagree on K: {K} priorities, {len(self.rates)} rate vectors, {len(self.theta)} weights"
            )
        n = self.priorities[0].n
        if any(p.n != n for p in self.priorities):
            raise InputError("SP priority vectors have different lengths")
        rates = tuple(tuple(float(v) for v in as_rates(r, n, name="sub-queue rate")) for r in self.rates)
        object.__setattr__(self, "rates", rates)
        theta = tuple(float(v) for v in self.theta)
        if any(v <= 0 for v in theta):
            raise InputError(f"SP weights must be positive, got {theta}")
        if abs(sum(theta) - 1.0) > THETA_TOLERANCE:
            raise InputError(f"SP weights sum to {sum(theta)}, expected 1")
        object.__setattr__(self, "theta", theta)
        if self.block is not None and int(self.block) < 1:
            raise InputError(f"block length must be positive, got {self.block}")

    @property
    def K(self) -> int:
        return len(self.priorities)

    @property
    def n(self) -> int:
        return self.priorities[0].n

    @property
    def rate_matrix(self) -> np.ndarray:
        return np.array(self.rates, dtype=float)

    @property
    def total_rate(self) -> np.ndarray:
        return self.rate_matrix.sum(axis=0)

    def scaled(self, factor: float) -> SPParams:
        return SPParams(self.priorities, tuple(tuple(v * factor for v in r) for r in self.rates), self.theta, self.block)

    def with_block(self, block: int) -> SPParams:
        return SPParams(self.priorities, self.rates, self.theta, block)

    def sub_block_lengths(self) -> tuple[int, ...]:
        if self.block is None:
            raise InputError("SP parameters have no block length")
        lengths = []
        for k, weight in enumerate(self.theta, start=1):
            slots = weight * self.block
            if abs(slots - round(slots)) > 1e-6 or round(slots) < 1:
                raise InputError(
                    f"θ^({k})·block = {slots:g} is not a positive integer; round the weights to the block grid first"
                )
            lengths.append(int(round(slots)))
        return tuple(lengths)

    def active_class(self, t: int) -> int:
        """1-indexed class whose sub-block contains slot t (slots start at 1)."""
        if t < 1:
            raise InputError(f"slots start at 1, got {t}")
        position = (t - 1) % self.block if self.block else 0
        for k, end in enumerate(np.cumsum(self.sub_block_lengths()), start=1):
            if position < end:
                return k
        raise InputError(f"sub-blocks do not cover block of {self.block} slots")

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "theta": list(self.theta),
            "priorities": [list(p.values) for p in self.priorities],
            "rates": [list(r) for r in self.rates],
            "block": self.block,
        }

    @classmethod
    def from_dict(cls, data: dict) -> SPParams:
        try:
            params = cls(
                priorities=tuple(PriorityVector(tuple(p)) for p in data["priorities"]),
                rates=tuple(tuple(r) for r in data["rates"]),
                theta=tuple(data["theta"]),
                block=data.get("block"),
            )
        except KeyError as e:
            raise InputError(f"SP-K parameters lack field {e}") from e
        if "K" in data and int(data["K"]) != params.K:
            raise InputError(f"SP-K parameters declare K={data['K']} but list {params.K} classes")
        return params

    @classmethod
    def load(cls, path: str | Path) -> SPParams:
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except FileNotFoundError as e:
            raise InputError(f"SP-K parameter file {path} not found") from e
        except json.JSONDecodeError as e:
            raise InputError(f"SP-K parameter file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=4)


def sp_multi_step(
    graph: ConflictGraph, params: SPParams, sub_queues: Sequence[Sequence[int]], t: int
) -> tuple[Schedule, int]:
    """Returns the schedule for slot t and the 1-indexed class k whose sub-queues it drains."""
    if len(sub_queues) != params.K:
        raise InputError(f"expected {params.K} sub-queue vectors, got {len(sub_queues)}")
    if params.n != graph.n:
        raise InputError(f"SP parameters cover {params.n} links, graph has {graph.n}")
    k = params.active_class(t)
    queue = sub_queues[k - 1]
    _check_queue(graph, queue)
    return mask_to_links(greedy_mask(params.priorities[k - 1].order, graph.neighbor_masks, _occupied(queue))), k


# --- Max-weight ---


def max_weight_schedule(graph: ConflictGraph, q: Sequence[int], n_max: int | None = None) -> Schedule:
    """
    Exact max-weight independent set over links with positive queues. Ties go
    to the lexicographically smallest link set.
    """
    _check_queue(graph, q)
    cap = ENUM_N_MAX if n_max is None else n_max
    if graph.n > cap:
        raise CapacityError(f"exact max-weight search is capped at {cap} links, graph has {graph.n}")
    occupied = [link for link in graph.links if q[link - 1] > 0]
    best, best_weight = (), 0
    for links in independent_sets(graph, within=occupied, n_max=cap):
        weight = sum(q[link - 1] for link in links)
        if weight > best_weight:
            best, best_weight = links, weight
    return frozenset(best)


# --- Queue state ---


@dataclass
class QueueState:
    """K×n integer backlogs; K = 1 for every scheduler except SP-K."""

    backlog: list[list[int]]

    @classmethod
    def zeros(cls, n: int, K: int = 1) -> QueueState:
        return cls([[0] * n for _ in range(K)])

    @property
    def K(self) -> int:
        return len(self.backlog)

    def occupied_mask(self, k: int = 0) -> int:
        return _occupied(self.backlog[k])

    def depart(self, mask: int, k: int = 0) -> None:
        row = self.backlog[k]
        link = 0
        while mask:
            if mask & 1:
                row[link] -= 1
            mask >>= 1
            link += 1

    def arrive(self, arrivals: Sequence[Sequence[int]]) -> None:
        for row, incoming in zip(self.backlog, arrivals):
            for idx, count in enumerate(incoming):
                if count:
                    row[idx] += count

    def totals(self) -> list[int]:
        return [sum(column) for column in zip(*self.backlog)]


# --- Policies used by the simulator ---


class Policy(ABC):
    """A scheduler bound to a graph. `step` returns (schedule bitmask, 0-indexed class drained)."""

    name = "policy"
    classes = 1

    def __init__(self, graph: ConflictGraph):
        self.graph = graph
        self.neighbor_masks = graph.neighbor_masks

    @abstractmethod
    def step(self, t: int, state: QueueState) -> tuple[int, int]:
        ...


class LQFPolicy(Policy):
    name = "lqf"

    def __init__(self, graph: ConflictGraph, tiebreak: str = "index", seed: int | None = None):
        super().__init__(graph)
        if tiebreak not in TIEBREAK_RULES:
            raise InputError(f"unknown tie-break rule {tiebreak!r}; use one of {TIEBREAK_RULES}")
        self.tiebreak = tiebreak
        self.rng = np.random.default_rng(seed)

    def step(self, t, state):
        q = state.backlog[0]
        return greedy_mask(lqf_order(q, self.tiebreak, self.rng), self.neighbor_masks, _occupied(q)), 0


class StaticPriorityPolicy(Policy):
    name = "sp"

    def __init__(self, graph: ConflictGraph, p: PriorityVector):
        super().__init__(graph)
        if p.n != graph.n:
            raise InputError(f"priority vector has {p.n} entries, graph has {graph.n} links")
        self.priority = p
        self.order = p.order

    def step(self, t, state):
        return greedy_mask(self.order, self.neighbor_masks, state.occupied_mask(0)), 0


class MultiPriorityPolicy(Policy):
    name = "spk"

    def __init__(self, graph: ConflictGraph, params: SPParams):
        super().__init__(graph)
        if params.n != graph.n:
            raise InputError(f"SP parameters cover {params.n} links, graph has {graph.n}")
        self.params = params
        self.classes = params.K
        self.orders = [p.order for p in params.priorities]
        self.block = params.block
        # Slot position inside a block -> class index, precomputed once.
        self._class_at = np.repeat(np.arange(params.K), params.sub_block_lengths()).tolist()

    def step(self, t, state):
        k = self._class_at[(t - 1) % self.block]
        return greedy_mask(self.orders[k], self.neighbor_masks, state.occupied_mask(k)), k


class MaxWeightPolicy(Policy):
    name = "maxweight"

    def __init__(self, graph: ConflictGraph):
        super().__init__(graph)
        sets = []
        for links in independent_sets(graph):
            sets.append(links)
            if len(sets) > MAX_WEIGHT_TABLE_LIMIT:
                raise CapacityError(
                    f"graph has more than {MAX_WEIGHT_TABLE_LIMIT} independent sets; too many for the max-weight table"
                )
        self.sets = sets
        self.table = np.zeros((len(sets), graph.n), dtype=np.int64)
        for row, links in enumerate(sets):
            self.table[row, [link - 1 for link in links]] = 1
        logger.debug("Max-weight table holds %d independent sets", len(sets))

    def step(self, t, state):
        q = state.backlog[0]
        weights = self.table @ np.asarray(q, dtype=np.int64)
        best = int(weights.max())
        if best == 0:
            return 0, 0
        candidates = np.flatnonzero(weights == best)
        chosen = min(tuple(link for link in self.sets[row] if q[link - 1] > 0) for row in candidates)
        return links_to_mask(chosen), 0
