"""
Two-priority assignment by alternating minimization.

The rate vector a is split into x (served by priority block 1) and a - x
(block 2). The E-step picks the min-norm priority for each part, the M-step
re-splits the rates with an LP for the chosen priorities. The objective t is
twice the worse of the two norms, so t < 1 certifies SP-2 stability with
θ = (1/2, 1/2).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from conflict_graph import ConflictGraph, PriorityVector, as_rates, incidence_matrix, weighted_norm
from errors import InputError, InvariantViolation
from scheduling import SPParams
from simplex import LinearProgram, LPInfeasible, LPSolution, LPUnbounded, lp_solve
from stability import min_norm_priority

logger = logging.getLogger(__name__)

__all__ = [
    "EMState",
    "LinearProgram",
    "LPInfeasible",
    "LPSolution",
    "LPUnbounded",
    "best_em_assign",
    "e_step",
    "em_assign",
    "initial_split",
    "lp_solve",
    "m_step",
]

# --- Configuration Constants ---
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100
DEFAULT_BLOCK = 100
BOX_TOLERANCE = 1e-9
MONOTONE_SLACK = 1e-9
INIT_RULES = ("half", "independent", "random")


@dataclass
class EMState:
    a: np.ndarray
    x: np.ndarray
    p1: PriorityVector
    p2: PriorityVector
    t: float
    trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    init: str = "half"

    @property
    def stable(self) -> bool:
        return self.t < 1.0

    def to_sp_params(self, block: int | None = DEFAULT_BLOCK) -> SPParams:
        second = np.clip(self.a - self.x, 0.0, None)
        return SPParams(
            priorities=(self.p1, self.p2),
            rates=(tuple(self.x), tuple(second)),
            theta=(0.5, 0.5),
            block=block,
        )

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "x": self.x.tolist(),
            "p1": list(self.p1.values),
            "p2": list(self.p2.values),
            "trace": list(self.trace),
            "stable": self.stable,
            "iterations": self.iterations,
            "converged": self.converged,
            "init": self.init,
        }


def _greedy_independent(graph: ConflictGraph, a: np.ndarray) -> list[int]:
    """Maximal independent set built by decreasing rate (ties: lowest index)."""
    chosen, blocked = [], 0
    for link in sorted(graph.links, key=lambda i: (-a[i - 1], i)):
        if not blocked >> (link - 1) & 1:
            chosen.append(link)
            blocked |= graph.neighbor_mask(link) | 1 << (link - 1)
    return chosen


def initial_split(graph: ConflictGraph, a, init: str = "half", seed: int | None = None) -> np.ndarray:
    a = as_rates(a, graph.n)
    if init == "half":
        return a / 2.0
    if init == "independent":
        x = np.zeros(graph.n)
        links = [link - 1 for link in _greedy_independent(graph, a)]
        x[links] = a[links]
        return x
    if init == "random":
        return np.random.default_rng(seed).uniform(0.0, 1.0, graph.n) * a
    raise InputError(f"unknown init rule {init!r}; use one of {INIT_RULES}")


def _check_box(x: np.ndarray, a: np.ndarray) -> np.ndarray:
    if x.shape != a.shape:
        raise InputError(f"split has {x.shape[0]} entries, rate vector has {a.shape[0]}")
    if np.any(x < -BOX_TOLERANCE) or np.any(x > a + BOX_TOLERANCE):
        link = int(np.flatnonzero((x < -BOX_TOLERANCE) | (x > a + BOX_TOLERANCE))[0]) + 1
        raise InputError(f"split at link {link} is {x[link - 1]}, outside [0, {a[link - 1]}]")
    return np.clip(x, 0.0, a)


def e_step(graph: ConflictGraph, x, a) -> tuple[PriorityVector, PriorityVector, float]:
    """Min-norm priorities for x and a - x; the objective is the larger of the two norms."""
    a = as_rates(a, graph.n)
    x = _check_box(np.asarray(x, dtype=float), a)
    first = min_norm_priority(graph, x)
    second = min_norm_priority(graph, a - x)
    return first.priority, second.priority, max(first.value, second.value)


def m_step(graph: ConflictGraph, p1: PriorityVector, p2: PriorityVector, a) -> tuple[np.ndarray, float]:
    """min t  s.t.  P1 x <= t/2,  P2 (a - x) <= t/2,  0 <= x <= a,  t >= 0."""
    a = as_rates(a, graph.n)
    n = graph.n
    P1 = incidence_matrix(graph, p1).dense.astype(float)
    P2 = incidence_matrix(graph, p2).dense.astype(float)
    half = np.full((n, 1), -0.5)
    lp = LinearProgram(
        c=np.concatenate([np.zeros(n), [1.0]]),
        A_ub=np.vstack([np.hstack([P1, half]), np.hstack([-P2, half])]),
        b_ub=np.concatenate([np.zeros(n), -P2 @ a]),
        lo=np.zeros(n + 1),
        hi=np.concatenate([a, [np.inf]]),
    )
    try:
        solution = lp_solve(lp)
    except (LPInfeasible, LPUnbounded) as e:
        raise InvariantViolation(f"M-step LP failed on a problem that is always feasible: {e}") from e
    x = np.clip(solution.z[:n], 0.0, a)
    return x, float(solution.z[n])


def em_assign(
    graph: ConflictGraph,
    a,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    init: str = "half",
    seed: int | None = None,
) -> EMState:
    a = as_rates(a, graph.n)
    if tol <= 0:
        raise InputError(f"tolerance must be positive, got {tol}")
    if max_iter < 1:
        raise InputError(f"max_iter must be at least 1, got {max_iter}")

    x = initial_split(graph, a, init, seed)
    p1, p2, _ = e_step(graph, x, a)
    state = EMState(a=a, x=x, p1=p1, p2=p2, t=float("inf"), init=init)

    for iteration in range(1, max_iter + 1):
        p1, p2, _ = e_step(graph, state.x, a)
        x, _ = m_step(graph, p1, p2, a)
        # Recompute from the clipped split so the trace and the certificate agree.
        t = 2.0 * max(
            weighted_norm(incidence_matrix(graph, p1), x),
            weighted_norm(incidence_matrix(graph, p2), a - x),
        )
        if state.trace and t > state.trace[-1] + MONOTONE_SLACK:
            raise InvariantViolation(f"EM objective rose from {state.trace[-1]:.12g} to {t:.12g}")
        previous = state.trace[-1] if state.trace else None
        state.x, state.p1, state.p2, state.t = x, p1, p2, t
        state.trace.append(t)
        state.iterations = iteration
        logger.debug("EM iteration %d: t=%.12g", iteration, t)
        if t <= 0.0 or (previous is not None and abs(previous - t) < tol):
            state.converged = True
            break

    if not state.converged:
        logger.warning("EM stopped after %d iterations without converging (t=%.6g)", max_iter, state.t)
    return state


def best_em_assign(
    graph: ConflictGraph,
    a,
    restarts: int = 0,
    seed: int = 0,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> EMState:
    """
    Runs the half and independent starts plus `restarts` random starts
    (seeds seed, seed+1, ...) and keeps the smallest final t, earliest first on ties.
    """
    if restarts < 0:
        raise InputError(f"restarts must be non-negative, got {restarts}")
    candidates = [("half", None), ("independent", None)] + [("random", seed + r) for r in range(restarts)]
    best = None
    for init, run_seed in candidates:
        state = em_assign(graph, a, tol=tol, max_iter=max_iter, init=init, seed=run_seed)
        logger.debug("EM start %s (seed %s) ended at t=%.12g", init, run_seed, state.t)
        if best is None or state.t < best.t:
            best = state
    return best
