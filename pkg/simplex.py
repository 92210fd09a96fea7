"""
Dense two-phase simplex with Bland's rule.

The LPs in this project are tiny (a few dozen variables), so a dense numpy
tableau is plenty. Infeasible and unbounded problems raise distinct errors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from errors import GreedySchedError, InputError, InvariantViolation

logger = logging.getLogger(__name__)

# --- Configuration Constants ---
PIVOT_TOLERANCE = 1e-12
FEASIBILITY_TOLERANCE = 1e-9
MAX_PIVOTS = 50_000


class LPInfeasible(GreedySchedError):
    pass


class LPUnbounded(GreedySchedError):
    pass


def _matrix(values, n: int, name: str) -> np.ndarray:
    if values is None:
        return np.zeros((0, n))
    matrix = np.atleast_2d(np.asarray(values, dtype=float))
    if matrix.size == 0:
        return np.zeros((0, n))
    if matrix.shape[1] != n:
        raise InputError(f"{name} has {matrix.shape[1]} columns, expected {n}")
    return matrix


@dataclass(frozen=True)
class LinearProgram:
    """minimize c·z  subject to  A_ub z <= b_ub,  A_eq z = b_eq,  lo <= z <= hi."""

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = c.shape[0]
        A_ub = _matrix(self.A_ub, n, "A_ub")
        A_eq = _matrix(self.A_eq, n, "A_eq")
        b_ub = np.asarray(self.b_ub if self.b_ub is not None else [], dtype=float).reshape(-1)
        b_eq = np.asarray(self.b_eq if self.b_eq is not None else [], dtype=float).reshape(-1)
        if b_ub.shape[0] != A_ub.shape[0]:
            raise InputError(f"A_ub has {A_ub.shape[0]} rows but b_ub has {b_ub.shape[0]} entries")
        if b_eq.shape[0] != A_eq.shape[0]:
            raise InputError(f"A_eq has {A_eq.shape[0]} rows but b_eq has {b_eq.shape[0]} entries")
        lo = np.zeros(n) if self.lo is None else np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape[0] != n or hi.shape[0] != n:
            raise InputError(f"bounds must have {n} entries")
        if np.any(lo > hi):
            j = int(np.flatnonzero(lo > hi)[0])
            raise InputError(f"variable {j} has lower bound {lo[j]} above upper bound {hi[j]}")
        for name, value in (("c", c), ("A_ub", A_ub), ("A_eq", A_eq), ("lo", lo), ("hi", hi)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "b_ub", b_ub)
        object.__setattr__(self, "b_eq", b_eq)

    @property
    def num_variables(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class LPSolution:
    z: np.ndarray
    value: float
    pivots: int


def _pivot(T: np.ndarray, basis: list[int], row: int, col: int) -> None:
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])
    basis[row] = col


def _run(T: np.ndarray, basis: list[int], ncols: int, pivots: int) -> int:
    """Bland's rule on a tableau whose last row holds reduced costs and -objective."""
    while True:
        entering = np.flatnonzero(T[-1, :ncols] < -PIVOT_TOLERANCE)
        if entering.size == 0:
            return pivots
        col = int(entering[0])
        column = T[:-1, col]
        rows = np.flatnonzero(column > PIVOT_TOLERANCE)
        if rows.size == 0:
            raise LPUnbounded(f"objective decreases without bound along variable {col}")
        ratios = T[rows, -1] / column[rows]
        ties = rows[ratios <= ratios.min() + PIVOT_TOLERANCE]
        row = min(ties, key=lambda r: basis[r])
        _pivot(T, basis, int(row), col)
        pivots += 1
        if pivots > MAX_PIVOTS:
            raise InvariantViolation(f"simplex exceeded {MAX_PIVOTS} pivots")


def _standardize(lp: LinearProgram):
    """Substitutes z = offset + Σ sign·u over columns u >= 0; finite boxes become extra rows.

    Column k of the standard form stands for sign[k]·u_k added to variable source[k].
    """
    n = lp.num_variables
    finite_lo, finite_hi = np.isfinite(lp.lo), np.isfinite(lp.hi)
    offset = np.where(finite_lo, lp.lo, np.where(finite_hi, lp.hi, 0.0))
    free = ~finite_lo & ~finite_hi
    source = np.concatenate([np.arange(n), np.flatnonzero(free)])
    sign = np.concatenate([np.where(finite_lo | free, 1.0, -1.0), -np.ones(int(free.sum()))])
    order = np.argsort(source, kind="stable")
    source, sign = source[order], sign[order]

    A_ub = lp.A_ub[:, source] * sign
    b_ub = lp.b_ub - lp.A_ub @ offset
    boxed = np.flatnonzero(finite_lo[source] & finite_hi[source])
    if boxed.size:
        extra = np.zeros((boxed.size, source.size))
        extra[np.arange(boxed.size), boxed] = 1.0
        A_ub = np.vstack([A_ub, extra])
        b_ub = np.concatenate([b_ub, (lp.hi - lp.lo)[source[boxed]]])
    A_eq = lp.A_eq[:, source] * sign
    b_eq = lp.b_eq - lp.A_eq @ offset
    return source, sign, offset, A_ub, b_ub, A_eq, b_eq


def lp_solve(lp: LinearProgram) -> LPSolution:
    source, sign, offset, A_ub, b_ub, A_eq, b_eq = _standardize(lp)
    N = source.size
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq

    rows = np.zeros((m, N + m_ub))
    rows[:m_ub, :N] = A_ub
    rows[:m_ub, N:] = np.eye(m_ub)
    rows[m_ub:, :N] = A_eq
    rhs = np.concatenate([b_ub, b_eq])
    flip = rhs < 0
    rows[flip] *= -1.0
    rhs = np.abs(rhs)

    needs_artificial = [r for r in range(m) if r >= m_ub or flip[r]]
    n_art = len(needs_artificial)
    width = N + m_ub + n_art
    T = np.zeros((m + 1, width + 1))
    T[:m, : N + m_ub] = rows
    T[:m, -1] = rhs
    basis = [N + r for r in range(m)]
    for a, r in enumerate(needs_artificial):
        T[r, N + m_ub + a] = 1.0
        basis[r] = N + m_ub + a

    pivots = 0
    if n_art:
        T[-1, N + m_ub : width] = 1.0
        for r in needs_artificial:
            T[-1] -= T[r]
        pivots = _run(T, basis, width, pivots)
        infeasibility = -T[-1, -1]
        if infeasibility > FEASIBILITY_TOLERANCE * max(1.0, float(np.abs(rhs).max(initial=0.0))):
            raise LPInfeasible(f"constraints cannot be met (phase-one residual {infeasibility:.3g})")

        # Drive zero-level artificials out of the basis; drop rows that are redundant.
        keep = []
        for r in range(m):
            if basis[r] >= N + m_ub:
                candidates = np.flatnonzero(np.abs(T[r, : N + m_ub]) > PIVOT_TOLERANCE)
                if candidates.size == 0:
                    continue
                _pivot(T, basis, r, int(candidates[0]))
                pivots += 1
            keep.append(r)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[r] for r in keep]
        T = np.delete(T, np.s_[N + m_ub : width], axis=1)
        width = N + m_ub

    costs = np.concatenate([lp.c[source] * sign, np.zeros(m_ub)])
    T[-1, :] = 0.0
    T[-1, :width] = costs
    for r, b in enumerate(basis):
        if costs[b] != 0.0:
            T[-1] -= costs[b] * T[r]
    pivots = _run(T, basis, width, pivots)

    values = np.zeros(width)
    for r, b in enumerate(basis):
        values[b] = T[r, -1]
    z = offset + np.bincount(source, weights=sign * np.maximum(values[:N], 0.0), minlength=lp.num_variables)
    _check_residuals(lp, z)
    logger.debug("LP solved in %d pivots", pivots)
    return LPSolution(z=z, value=float(lp.c @ z), pivots=pivots)


def _check_residuals(lp: LinearProgram, z: np.ndarray) -> None:
    tol = FEASIBILITY_TOLERANCE
    if lp.A_ub.shape[0]:
        excess = lp.A_ub @ z - lp.b_ub
        if np.any(excess > tol * (1.0 + np.abs(lp.b_ub))):
            raise InvariantViolation(f"simplex solution violates an inequality by {excess.max():.3g}")
    if lp.A_eq.shape[0]:
        gap = np.abs(lp.A_eq @ z - lp.b_eq)
        if np.any(gap > tol * (1.0 + np.abs(lp.b_eq))):
            raise InvariantViolation(f"simplex solution misses an equality by {gap.max():.3g}")
    if np.any(z < lp.lo - tol) or np.any(z > lp.hi + tol):
        raise InvariantViolation("simplex solution leaves its bounds")
