"""
Stability-region tests and certified priority constructions.

All region tests are closed (value <= 1 + τ) and flag `boundary` when the value
sits within τ of 1, so callers that need the strict regions can apply it.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from conflict_graph import (
    ENUM_N_MAX,
    ConflictGraph,
    PriorityVector,
    as_rates,
    incidence_matrix,
    independent_sets,
    is_independent,
    weighted_norm,
)
from errors import CapacityError, InfeasibleError, InputError, InvariantViolation
from scheduling import SPParams
from simplex import LinearProgram, LPInfeasible, lp_solve

logger = logging.getLogger(__name__)

# --- Configuration Constants ---
TOLERANCE = float(os.environ.get("GREEDY_SCHED_TOLERANCE", 1e-9))
DECOMPOSITION_TOLERANCE = 1e-9
MAX_DECOMPOSITION_SETS = int(os.environ.get("GREEDY_SCHED_MAX_DECOMPOSITION_SETS", 4096))


@dataclass(frozen=True)
class RegionVerdict:
    region: str
    member: bool
    value: float
    boundary: bool
    certificate: PriorityVector | None = None

    def describe(self) -> str:
        line = (
            f"region={self.region} member={str(self.member).lower()} "
            f"value={self.value:.12g} boundary={str(self.boundary).lower()}"
        )
        if self.certificate is not None:
            line += f" certificate={','.join(str(v) for v in self.certificate)}"
        return line

    def to_dict(self) -> dict:
        return {
            "region": self.region,
            "member": self.member,
            "value": self.value,
            "boundary": self.boundary,
            "certificate": list(self.certificate.values) if self.certificate is not None else None,
        }


def _verdict(region: str, value: float, tol: float, certificate=None) -> RegionVerdict:
    return RegionVerdict(
        region=region,
        member=value <= 1.0 + tol,
        value=float(value),
        boundary=abs(value - 1.0) <= tol,
        certificate=certificate,
    )


def neighborhood_loads(graph: ConflictGraph, a) -> np.ndarray:
    """a_i + Σ_{j∈N_i} a_j for every link."""
    a = as_rates(a, graph.n)
    return np.array([a[i - 1] + sum(a[j - 1] for j in graph.neighbors(i)) for i in graph.links])


def in_maximal_region(graph: ConflictGraph, a, tol: float = TOLERANCE) -> RegionVerdict:
    return _verdict("maximal", float(neighborhood_loads(graph, a).max()), tol)


def in_priority_region(graph: ConflictGraph, p: PriorityVector, a, tol: float = TOLERANCE) -> RegionVerdict:
    return _verdict("priority", weighted_norm(incidence_matrix(graph, p), as_rates(a, graph.n)), tol)


def _greedy_lowest_priority(graph: ConflictGraph, a: np.ndarray, stop_above: float | None):
    """
    Hands out priorities n, n-1, ..., 1, each to the remaining link with the
    smallest load over its remaining neighborhood (ties: lowest index).
    Loads within TOLERANCE·max(1, max a) of the minimum count as tied, so the
    order does not depend on rounding in the running sums or on scaling a.
    Returns (priority values, max examined load, failed).
    """
    loads = neighborhood_loads(graph, a)
    slack = TOLERANCE * max(1.0, float(a.max(initial=0.0)))
    remaining = set(graph.links)
    values = [0] * graph.n
    worst = 0.0
    for k in range(graph.n, 0, -1):
        load = min(float(loads[i - 1]) for i in remaining)
        link = min(i for i in remaining if loads[i - 1] <= load + slack)
        worst = max(worst, load)
        if stop_above is not None and load > stop_above:
            return values, load, True
        values[link - 1] = k
        remaining.discard(link)
        for j in graph.neighbors(link):
            if j in remaining:
                loads[j - 1] -= a[link - 1]
    return values, worst, False


def test_feasibility(graph: ConflictGraph, a, tol: float = TOLERANCE) -> RegionVerdict:
    """Decides membership in A_LQF and returns the certifying priority vector."""
    a = as_rates(a, graph.n)
    values, value, failed = _greedy_lowest_priority(graph, a, stop_above=1.0 + tol)
    if failed:
        logger.debug("Test-Feasibility rejected with load %.12g", value)
        return _verdict("lqf", value, tol)
    return _verdict("lqf", value, tol, certificate=PriorityVector(tuple(values)))


# not a pytest test
test_feasibility.__test__ = False


class MinNormPriority(NamedTuple):
    priority: PriorityVector
    value: float


def min_norm_priority(graph: ConflictGraph, a) -> MinNormPriority:
    """The priority vector minimizing ‖Pa‖∞ over all n! priorities."""
    a = as_rates(a, graph.n)
    values, _, _ = _greedy_lowest_priority(graph, a, stop_above=None)
    p = PriorityVector(tuple(values))
    return MinNormPriority(p, weighted_norm(incidence_matrix(graph, p), a))


def sp_ratio(graph: ConflictGraph, params: SPParams) -> float:
    """max over classes k and positive-rate links i of (P^(k) a^(k))_i / θ^(k)."""
    if params.n != graph.n:
        raise InputError(f"SP parameters cover {params.n} links, graph has {graph.n}")
    worst = 0.0
    for p, rates, theta in zip(params.priorities, params.rate_matrix, params.theta):
        positive = rates > 0
        if not positive.any():
            continue
        loads = incidence_matrix(graph, p).dot(rates)
        worst = max(worst, float(loads[positive].max()) / theta)
    return worst


def sp_condition(graph: ConflictGraph, params: SPParams, tol: float = TOLERANCE, strict: bool = False) -> RegionVerdict:
    """
    Sufficient condition for rate stability of SP-K scheduling, checked only at
    links with positive sub-rate. `strict=True` demands value < 1 - τ.
    """
    value = sp_ratio(graph, params)
    verdict = _verdict("sp", value, tol)
    if strict:
        return RegionVerdict("sp", value < 1.0 - tol, value, verdict.boundary)
    return verdict


# --- Independent-set decompositions ---


@dataclass(frozen=True)
class IndependentSetDecomposition:
    """a = Σ_k weights[k] · 1_{sets[k]}; the empty set, when present, is last."""

    n: int
    sets: tuple[tuple[int, ...], ...]
    weights: tuple[float, ...]

    @property
    def K(self) -> int:
        return len(self.sets)

    def indicator(self, k: int) -> np.ndarray:
        m = np.zeros(self.n)
        m[[link - 1 for link in self.sets[k]]] = 1.0
        return m

    def reconstruct(self) -> np.ndarray:
        total = np.zeros(self.n)
        for k, weight in enumerate(self.weights):
            total += weight * self.indicator(k)
        return total

    def to_dict(self) -> dict:
        return {"sets": [list(s) for s in self.sets], "weights": list(self.weights)}


def decompose_independent_sets(
    graph: ConflictGraph, a, n_max: int | None = None, max_sets: int | None = None
) -> IndependentSetDecomposition:
    """
    Writes a as a convex combination of at most n+1 independent sets, or raises
    InfeasibleError when a lies outside the convex hull of independent sets.
    The LP minimizes the total weight on non-empty sets; its basic optimum has
    at most n+1 non-zero weights including the idle share. Raises CapacityError
    when the graph has more than `max_sets` non-empty independent sets.
    """
    a = as_rates(a, graph.n)
    cap = ENUM_N_MAX if n_max is None else n_max
    limit = MAX_DECOMPOSITION_SETS if max_sets is None else max_sets
    sets = []
    for links in independent_sets(graph, n_max=cap):
        if not links:
            continue
        sets.append(links)
        if len(sets) > limit:
            raise CapacityError(f"graph has more than {limit} independent sets; too many for the decomposition LP")
    if not a.any():
        return IndependentSetDecomposition(graph.n, ((),), (1.0,))

    columns = np.zeros((graph.n, len(sets)))
    for col, links in enumerate(sets):
        columns[[link - 1 for link in links], col] = 1.0
    lp = LinearProgram(
        c=np.ones(len(sets)),
        A_ub=np.ones((1, len(sets))),
        b_ub=np.array([1.0]),
        A_eq=columns,
        b_eq=a,
        lo=np.zeros(len(sets)),
        hi=np.full(len(sets), np.inf),
    )
    try:
        solution = lp_solve(lp)
    except LPInfeasible as e:
        raise InfeasibleError("rate vector lies outside the convex hull of independent sets") from e

    chosen = [(sets[col], float(w)) for col, w in enumerate(solution.z) if w > DECOMPOSITION_TOLERANCE]
    idle = 1.0 - sum(w for _, w in chosen)
    if idle < -DECOMPOSITION_TOLERANCE:
        raise InfeasibleError(f"rate vector needs total weight {1.0 - idle:.12g} > 1")
    if idle > DECOMPOSITION_TOLERANCE:
        chosen.append(((), idle))
    decomposition = IndependentSetDecomposition(
        graph.n, tuple(s for s, _ in chosen), tuple(w for _, w in chosen)
    )

    error = np.abs(decomposition.reconstruct() - a).max()
    if error > DECOMPOSITION_TOLERANCE * max(1.0, float(a.max())) * 10:
        raise InvariantViolation(f"decomposition misses the rate vector by {error:.3g}")
    if decomposition.K > graph.n + 1:
        raise InvariantViolation(f"decomposition uses {decomposition.K} sets for {graph.n} links")
    return decomposition


def in_optimal_region(
    graph: ConflictGraph, a, n_max: int | None = None, max_sets: int | None = None
) -> RegionVerdict:
    """Membership in the convex hull of independent sets; value is the total non-idle weight."""
    try:
        decomposition = decompose_independent_sets(graph, a, n_max=n_max, max_sets=max_sets)
    except InfeasibleError:
        return RegionVerdict("optimal", False, float("inf"), False)
    busy = sum(w for s, w in zip(decomposition.sets, decomposition.weights) if s)
    return _verdict("optimal", busy, DECOMPOSITION_TOLERANCE)


def active_set_lowest(n: int, links: tuple[int, ...]) -> PriorityVector:
    """Priority vector giving `links` the lowest priorities, everything else (by index) first."""
    members = set(links)
    order = [link for link in range(1, n + 1) if link not in members] + sorted(members)
    return PriorityVector.from_order(order)


def caratheodory_sp_params(
    graph: ConflictGraph, a, block: int | None = None, n_max: int | None = None
) -> SPParams:
    """
    SP-(≤n+1) parameters stabilizing any a inside the convex hull of
    independent sets: class k serves the independent set m^(k) at rate
    θ^(k)·m^(k) with m^(k) at the lowest priorities, so zero-rate links never block.
    """
    decomposition = decompose_independent_sets(graph, a, n_max=n_max)
    params = SPParams(
        priorities=tuple(active_set_lowest(graph.n, s) for s in decomposition.sets),
        rates=tuple(tuple(w * decomposition.indicator(k)) for k, w in enumerate(decomposition.weights)),
        theta=decomposition.weights,
        block=block,
    )
    for s in decomposition.sets:
        if not is_independent(graph, s):
            raise InvariantViolation(f"decomposition set {s} is not independent")
    verdict = sp_condition(graph, params)
    if not verdict.member:
        raise InvariantViolation(f"Carathéodory parameters fail the SP condition with value {verdict.value}")
    return params
