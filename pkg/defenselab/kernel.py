# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Shared game-theoretic substrate: probability vectors, seeded sampling,
learning-rate schedules, and the matrix and bimatrix equilibrium solvers used by
the defense engines.
"""

from __future__ import annotations

import enum
import itertools as it
import logging
from dataclasses import dataclass
from typing import Any, Iterator, Sequence, TypeAlias

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linprog

from .errors import CapacityError, ContractError, ModelError, UnsupportedScheduleError

_log = logging.getLogger(__name__)

FloatArray: TypeAlias = NDArray[np.float64]
RandomSource: TypeAlias = np.random.Generator
"""
Seeded random source.  All randomness in DefenseLab flows through explicitly
passed generators created by :func:`random_source`.
"""

SIMPLEX_TOL = 1e-9
"Tolerance on the sum of a probability vector after construction."
SIMPLEX_REJECT = 1e-6
"Inputs farther than this from the simplex are rejected instead of repaired."
EQUILIBRIUM_TOL = 1e-8
"Deviation tolerance for equilibrium checks."
ENUMERATION_BOUND = 8
"Default maximum number of actions per player for support enumeration."

MAX_SEED = 2**64


class ProbabilityVector:
    """
    A point on a finite probability simplex.  Beliefs, mixed strategies and
    transition rows are all probability vectors.

    Construction validates and renormalizes: small negative entries and sum
    errors up to :data:`SIMPLEX_REJECT` are repaired, anything farther from the
    simplex raises :class:`~defenselab.errors.ContractError`.  The underlying
    array is read-only.

    Args:
        weights: the probability weights.
    """

    __slots__ = ("_weights",)
    _weights: FloatArray

    def __init__(self, weights: ArrayLike):
        w = np.array(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ContractError(f"probability vector must be a non-empty 1-D array, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ContractError("probability vector has non-finite weights")
        if np.min(w) < -SIMPLEX_REJECT:
            raise ContractError(f"negative probability {np.min(w)}")
        total = np.sum(w)
        if abs(total - 1.0) > SIMPLEX_REJECT:
            raise ContractError(f"probabilities sum to {total}, not 1")
        w = np.clip(w, 0.0, None)
        w /= np.sum(w)
        w.setflags(write=False)
        self._weights = w

    @classmethod
    def uniform(cls, n: int) -> ProbabilityVector:
        "The uniform distribution over ``n`` outcomes."
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def vertex(cls, n: int, i: int) -> ProbabilityVector:
        "The degenerate distribution on outcome ``i``."
        w = np.zeros(n)
        w[i] = 1.0
        return cls(w)

    @property
    def weights(self) -> FloatArray:
        "The (read-only) weight array."
        return self._weights

    def support(self) -> tuple[int, ...]:
        "Indices with positive probability."
        return tuple(int(i) for i in np.flatnonzero(self._weights > 0))

    def __len__(self) -> int:
        return len(self._weights)

    def __getitem__(self, i: int) -> float:
        return float(self._weights[i])

    def __iter__(self) -> Iterator[float]:
        return (float(x) for x in self._weights)

    def __array__(self, dtype: Any = None, copy: bool | None = None) -> NDArray[Any]:
        arr = self._weights if dtype is None else self._weights.astype(dtype)
        if copy:
            arr = arr.copy()
        return arr

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ProbabilityVector):
            return NotImplemented
        return bool(np.array_equal(self._weights, other._weights))

    __hash__ = None  # type: ignore

    def __repr__(self) -> str:
        return "ProbabilityVector({})".format(", ".join(f"{x:.6g}" for x in self._weights))


def as_probability(x: ProbabilityVector | ArrayLike) -> ProbabilityVector:
    "Coerce an array-like into a probability vector (no copy if already one)."
    if isinstance(x, ProbabilityVector):
        return x
    return ProbabilityVector(x)


def random_source(seed: int) -> RandomSource:
    """
    Create a seeded random source.  Identical seeds yield identical draw
    sequences for identical call sequences.

    Args:
        seed: an unsigned 64-bit seed.
    """
    if not isinstance(seed, (int, np.integer)) or seed < 0 or seed >= MAX_SEED:
        raise ContractError(f"seed {seed!r} is not an unsigned 64-bit integer")
    return np.random.default_rng(int(seed))


def sample_categorical(dist: ProbabilityVector | ArrayLike, rng: RandomSource) -> int:
    """
    Draw an index from a categorical distribution by inverting its CDF with a
    single uniform draw.
    """
    w = as_probability(dist).weights
    u = rng.random()
    i = int(np.searchsorted(np.cumsum(w), u, side="right"))
    return min(i, len(w) - 1)


class ScheduleFamily(enum.Enum):
    """
    Families of learning-rate schedules.
    """

    HARMONIC = "harmonic"
    "``kc / (n - 1 + kc)``"
    POWER = "power"
    "``1 / n**p``"
    CONSTANT = "constant"
    "A fixed rate."


@dataclass(frozen=True)
class RateSchedule:
    """
    A declared learning-rate schedule.  Convergence is a property of the
    family and its parameter, not of any finite prefix of the sequence.
    """

    family: str
    "The family name (see :class:`ScheduleFamily`)."
    param: float
    "The family parameter (``kc``, ``p``, or the constant)."

    def __post_init__(self):
        try:
            fam = ScheduleFamily(self.family)
        except ValueError:
            # unknown families are representable but cannot be evaluated
            return
        if fam == ScheduleFamily.CONSTANT:
            if not 0 < self.param <= 1:
                raise ContractError(f"constant rate {self.param} not in (0, 1]")
        elif self.param <= 0:
            raise ContractError(f"{fam.value} schedule parameter must be positive")

    @classmethod
    def harmonic(cls, kc: float = 1.0) -> RateSchedule:
        return cls(ScheduleFamily.HARMONIC.value, kc)

    @classmethod
    def power(cls, p: float) -> RateSchedule:
        return cls(ScheduleFamily.POWER.value, p)

    @classmethod
    def constant(cls, c: float) -> RateSchedule:
        return cls(ScheduleFamily.CONSTANT.value, c)

    @classmethod
    def parse(cls, text: str) -> RateSchedule:
        """
        Parse a ``family:param`` string such as ``harmonic:1`` or ``power:0.6``.
        """
        fam, sep, param = text.partition(":")
        if not sep:
            raise ContractError(f"schedule {text!r} is not of the form family:param")
        try:
            value = float(param)
        except ValueError:
            raise ContractError(f"schedule parameter {param!r} is not a number")
        sched = cls(fam.strip(), value)
        sched._family()
        return sched

    def _family(self) -> ScheduleFamily:
        try:
            return ScheduleFamily(self.family)
        except ValueError:
            raise UnsupportedScheduleError(f"unknown schedule family {self.family!r}")

    def __call__(self, n: int) -> float:
        if n < 1:
            raise ContractError(f"schedule step {n} must be at least 1")
        match self._family():
            case ScheduleFamily.HARMONIC:
                return self.param / (n - 1 + self.param)
            case ScheduleFamily.POWER:
                return float(n) ** -self.param
            case ScheduleFamily.CONSTANT:
                return self.param

    @property
    def satisfies_convergency(self) -> bool:
        "Whether the schedule has a divergent sum and a convergent sum of squares."
        return classify_schedule(self)

    def __str__(self) -> str:
        return f"{self.family}:{self.param:g}"


def classify_schedule(s: RateSchedule) -> bool:
    """
    Analytically classify whether a schedule satisfies the Robbins–Monro
    condition (divergent sum, convergent sum of squares).
    """
    match s._family():
        case ScheduleFamily.HARMONIC:
            return True
        case ScheduleFamily.POWER:
            return 0.5 < s.param <= 1.0
        case ScheduleFamily.CONSTANT:
            return False


def _as_table(data: ArrayLike, what: str) -> FloatArray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ModelError(f"{what} must be a non-empty 2-D table, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{what} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, init=False)
class MatrixGame:
    """
    A two-player zero-sum game given by its cost matrix.  The row player
    minimizes the cost and the column player maximizes it.
    """

    cost: FloatArray

    def __init__(self, cost: ArrayLike):
        object.__setattr__(self, "cost", _as_table(cost, "cost matrix"))

    @property
    def shape(self) -> tuple[int, int]:
        m, n = self.cost.shape
        return m, n


@dataclass(frozen=True, init=False)
class BimatrixGame:
    """
    A two-player general-sum game in which both players maximize their own
    payoff table.
    """

    row_payoffs: FloatArray
    col_payoffs: FloatArray

    def __init__(self, row_payoffs: ArrayLike, col_payoffs: ArrayLike):
        a = _as_table(row_payoffs, "row payoff table")
        b = _as_table(col_payoffs, "column payoff table")
        if a.shape != b.shape:
            raise ModelError(f"payoff tables have shapes {a.shape} and {b.shape}")
        object.__setattr__(self, "row_payoffs", a)
        object.__setattr__(self, "col_payoffs", b)

    @property
    def shape(self) -> tuple[int, int]:
        m, n = self.row_payoffs.shape
        return m, n


def deviation_gains(
    game: BimatrixGame,
    row: ProbabilityVector | ArrayLike,
    col: ProbabilityVector | ArrayLike,
) -> tuple[float, float]:
    """
    Compute the largest gain each player can obtain by a unilateral pure
    deviation from a mixed profile.
    """
    x = np.asarray(row, dtype=np.float64)
    y = np.asarray(col, dtype=np.float64)
    a_y = game.row_payoffs @ y
    x_b = x @ game.col_payoffs
    return float(np.max(a_y) - x @ a_y), float(np.max(x_b) - x_b @ y)


def is_nash(
    game: BimatrixGame,
    row: ProbabilityVector | ArrayLike,
    col: ProbabilityVector | ArrayLike,
    tol: float = EQUILIBRIUM_TOL,
) -> bool:
    "Check whether a profile is a Nash equilibrium within ``tol``."
    rg, cg = deviation_gains(game, row, col)
    return rg <= tol and cg <= tol


def _indifference(payoffs: FloatArray, tol: float) -> FloatArray | None:
    """
    Solve for a mixture over the rows of a square payoff block that makes the
    opponent indifferent among the block's columns.  Returns ``None`` if the
    system is singular or the solution leaves the simplex.
    """
    k = payoffs.shape[0]
    system = np.zeros((k + 1, k + 1))
    system[:k, :k] = payoffs.T
    system[:k, k] = -1.0
    system[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        return None
    w = sol[:k]
    if not np.all(np.isfinite(w)) or np.min(w) < -tol:
        return None
    w = np.clip(w, 0.0, None)
    return w / np.sum(w)


def _lp_minimizer(cost: FloatArray) -> FloatArray:
    "Optimal mixed strategy of the minimizing row player of a cost matrix."
    m, n = cost.shape
    c = np.zeros(m + 1)
    c[m] = 1.0
    a_ub = np.hstack([cost.T, -np.ones((n, 1))])
    a_eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    bounds = [(0.0, None)] * m + [(None, None)]
    res = linprog(
        c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=[1.0], bounds=bounds, method="highs"
    )
    if not res.success:  # pragma: no cover
        raise ModelError(f"saddle-point LP failed: {res.message}")
    x = np.clip(res.x[:m], 0.0, None)
    return x / np.sum(x)


def _saddle_gap(cost: FloatArray, x: FloatArray, y: FloatArray) -> tuple[float, float]:
    return float(np.max(x @ cost)), float(np.min(cost @ y))


def _polish_saddle(cost: FloatArray, x: FloatArray, y: FloatArray) -> tuple[FloatArray, FloatArray]:
    "Re-solve the equalizer system on the LP supports when it tightens the gap."
    rows = np.flatnonzero(x > SIMPLEX_TOL)
    cols = np.flatnonzero(y > SIMPLEX_TOL)
    if len(rows) != len(cols) or len(rows) < 2:
        return x, y
    block = cost[np.ix_(rows, cols)]
    xs = _indifference(block, SIMPLEX_TOL)
    ys = _indifference(block.T, SIMPLEX_TOL)
    if xs is None or ys is None:
        return x, y
    x2 = np.zeros_like(x)
    x2[rows] = xs
    y2 = np.zeros_like(y)
    y2[cols] = ys
    hi, lo = _saddle_gap(cost, x, y)
    hi2, lo2 = _saddle_gap(cost, x2, y2)
    if hi2 - lo2 < hi - lo:
        return x2, y2
    return x, y


def solve_zero_sum(g: MatrixGame) -> tuple[ProbabilityVector, ProbabilityVector, float]:
    """
    Compute a mixed saddle point of a zero-sum matrix game by linear
    programming (HiGHS).

    Args:
        g: the game; the row player minimizes its cost matrix.

    Returns:
        The row strategy, the column strategy, and the game value.
    """
    cost = g.cost
    x = _lp_minimizer(cost)
    y = _lp_minimizer(-cost.T)
    x, y = _polish_saddle(cost, x, y)
    upper, lower = _saddle_gap(cost, x, y)
    _log.debug("saddle point of %dx%d game: gap %.3g", *cost.shape, upper - lower)
    return ProbabilityVector(x), ProbabilityVector(y), (upper + lower) / 2


def _support_key(x: FloatArray, y: FloatArray) -> tuple[tuple[int, ...], tuple[int, ...]]:
    return (
        tuple(int(i) for i in np.flatnonzero(x > 0)),
        tuple(int(j) for j in np.flatnonzero(y > 0)),
    )


def _feasible_mixture(
    payoffs: FloatArray, own: Sequence[int], other: Sequence[int]
) -> FloatArray | None:
    """
    Find a mixture over ``own`` rows making the opponent indifferent over
    ``other`` columns and no better off elsewhere, by LP feasibility.
    """
    m, n = payoffs.shape
    k = len(own)
    rest = [j for j in range(n) if j not in other]
    sub = payoffs[list(own), :]
    a_eq = np.vstack(
        [
            np.hstack([sub[:, list(other)].T, -np.ones((len(other), 1))]),
            np.hstack([np.ones((1, k)), np.zeros((1, 1))]),
        ]
    )
    b_eq = np.zeros(len(other) + 1)
    b_eq[-1] = 1.0
    a_ub = None
    b_ub = None
    if rest:
        a_ub = np.hstack([sub[:, rest].T, -np.ones((len(rest), 1))])
        b_ub = np.zeros(len(rest))
    bounds = [(0.0, None)] * k + [(None, None)]
    res = linprog(
        np.zeros(k + 1),
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
    )
    if not res.success:
        return None
    w = np.zeros(m)
    w[list(own)] = np.clip(res.x[:k], 0.0, None)
    return w / np.sum(w)


def solve_bimatrix(
    g: BimatrixGame, *, bound: int = ENUMERATION_BOUND, tol: float = EQUILIBRIUM_TOL
) -> list[tuple[ProbabilityVector, ProbabilityVector]]:
    """
    Enumerate Nash equilibria of a bimatrix game by support enumeration.

    Equal-size supports are tried first; if that finds nothing (a degenerate
    game), all support pairs are searched with LP feasibility.  Results are
    ordered by their (row, column) supports, lexicographically.

    Args:
        g: the game.
        bound: maximum number of actions per player.
        tol: equilibrium tolerance.

    Raises:
        CapacityError: if either player has more than ``bound`` actions.
    """
    a, b = g.row_payoffs, g.col_payoffs
    m, n = g.shape
    if m > bound or n > bound:
        raise CapacityError(f"{m}x{n} game exceeds the {bound}x{bound} enumeration bound")

    found: list[tuple[FloatArray, FloatArray]] = []

    def record(x: FloatArray, y: FloatArray):
        if not is_nash(g, x, y, tol):
            return
        for fx, fy in found:
            if np.allclose(fx, x, atol=SIMPLEX_TOL) and np.allclose(fy, y, atol=SIMPLEX_TOL):
                return
        found.append((x, y))

    for k in range(1, min(m, n) + 1):
        for rows in it.combinations(range(m), k):
            for cols in it.combinations(range(n), k):
                block_b = b[np.ix_(rows, cols)]
                block_a = a[np.ix_(rows, cols)]
                xs = _indifference(block_b, tol)
                if xs is None:
                    continue
                ys = _indifference(block_a.T, tol)
                if ys is None:
                    continue
                x = np.zeros(m)
                x[list(rows)] = xs
                y = np.zeros(n)
                y[list(cols)] = ys
                record(x, y)

    if not found:
        _log.debug("no equal-support equilibrium in %dx%d game, searching all supports", m, n)
        for rows in _subsets(m):
            for cols in _subsets(n):
                x = _feasible_mixture(b, rows, cols)
                if x is None:
                    continue
                y = _feasible_mixture(a.T, cols, rows)
                if y is None:
                    continue
                record(x, y)

    if not found:  # pragma: no cover
        raise ModelError("support enumeration found no equilibrium")

    found.sort(key=lambda p: _support_key(*p))
    _log.debug("found %d equilibria in %dx%d game", len(found), m, n)
    return [(ProbabilityVector(x), ProbabilityVector(y)) for x, y in found]


def _subsets(n: int) -> Iterator[tuple[int, ...]]:
    for k in range(1, n + 1):
        yield from it.combinations(range(n), k)
