# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Multistage two-player Bayesian deception games: type priors, belief updates,
cumulative utilities, ε-perfect Bayesian Nash equilibria, and episode
simulation.

Player 0 is the defender and player 1 the attacker (or user).  Stage payoff
tables have axes ``(state, defender action, attacker action, defender type,
attacker type)``; strategy tables have axes ``(state, own type, own action)``;
belief tables have axes ``(state, own type, opponent type)``.
"""

from __future__ import annotations

import itertools as it
import logging
from dataclasses import dataclass, field, replace
from typing import Sequence, TypeAlias

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import CapacityError, ContractError, ModelError, NoConvergenceError
from .kernel import (
    ENUMERATION_BOUND,
    EQUILIBRIUM_TOL,
    SIMPLEX_REJECT,
    BimatrixGame,
    FloatArray,
    ProbabilityVector,
    RandomSource,
    as_probability,
    sample_categorical,
    solve_bimatrix,
)

_log = logging.getLogger(__name__)

IntArray: TypeAlias = NDArray[np.int64]

PLAYERS = ("defender", "attacker")
CONSISTENCY_TOL = 1e-9
"Belief-consistency tolerance for equilibrium verification and convergence."
MAX_HISTORY_HORIZON = 6
"Largest horizon supported under the perfect-recall information structure."
DAMPING_FALLBACK = (0.25, 0.1)
"Smaller belief step sizes the solver retries with when its first step size cycles."
DEVIATION_BOUND = 4096
"Largest number of pure plans enumerated for one best-response check."
DIRECTION_TOL = 1e-12


@dataclass(frozen=True)
class TypeSpace:
    """
    Private type labels for both players.
    """

    defender: tuple[str, ...]
    attacker: tuple[str, ...]

    def __post_init__(self):
        for name, labels in zip(PLAYERS, (self.defender, self.attacker)):
            if not labels:
                raise ModelError(f"{name} has no types")
            if len(set(labels)) != len(labels):
                raise ModelError(f"{name} type labels are not unique")

    def labels(self, player: int) -> tuple[str, ...]:
        return self.defender if player == 0 else self.attacker

    @property
    def sizes(self) -> tuple[int, int]:
        return len(self.defender), len(self.attacker)

    def index(self, player: int, label: str) -> int:
        try:
            return self.labels(player).index(label)
        except ValueError:
            raise ModelError(f"unknown {PLAYERS[player]} type {label!r}")


@dataclass(frozen=True, eq=False)
class StateModel:
    """
    Stage-indexed states, actions, and the deterministic transition function.
    Stage ``k`` transitions are integer tables of shape ``(|X^k|, |A1^k|, |A2^k|)``
    holding indices into the states of stage ``k + 1``.
    """

    states: tuple[tuple[str, ...], ...]
    "State labels per stage."
    actions: tuple[tuple[tuple[str, ...], tuple[str, ...]], ...]
    "Defender and attacker action labels per stage."
    transitions: tuple[IntArray, ...]
    "Transition tables for stages ``0`` through ``K - 1``."
    initial: int = 0
    "Index of the initial state in stage 0."

    def __post_init__(self):
        nk = len(self.states)
        if nk == 0:
            raise ModelError("state model has no stages")
        if len(self.actions) != nk:
            raise ModelError(f"{len(self.actions)} action sets for {nk} stages")
        if len(self.transitions) != nk - 1:
            raise ModelError(f"{len(self.transitions)} transition tables for {nk} stages")
        if not 0 <= self.initial < len(self.states[0]):
            raise ModelError(f"initial state {self.initial} out of range")
        for k, (xs, (a1, a2)) in enumerate(zip(self.states, self.actions)):
            if not xs or not a1 or not a2:
                raise ModelError(f"stage {k} has an empty state or action set")
        tables: list[IntArray] = []
        for k, f in enumerate(self.transitions):
            f = np.array(f, dtype=np.int64)
            shape = (len(self.states[k]), len(self.actions[k][0]), len(self.actions[k][1]))
            if f.shape != shape:
                raise ModelError(f"stage {k} transition table has shape {f.shape}, not {shape}")
            if f.size and (f.min() < 0 or f.max() >= len(self.states[k + 1])):
                raise ModelError(f"stage {k} transition leaves the stage {k + 1} state set")
            f.setflags(write=False)
            tables.append(f)
        object.__setattr__(self, "transitions", tuple(tables))

    @property
    def horizon(self) -> int:
        "The final stage index ``K``."
        return len(self.states) - 1

    def action_counts(self, k: int) -> tuple[int, int]:
        return len(self.actions[k][0]), len(self.actions[k][1])


@dataclass(frozen=True)
class NoiseSpec:
    """
    Mean-zero stage payoff noise, kept as metadata; stage payoffs are already
    noise expectations.
    """

    family: str = "uniform"
    half_width: float = 0.0

    def __post_init__(self):
        if self.family != "uniform":
            raise ModelError(f"unsupported noise family {self.family!r}")
        if self.half_width < 0:
            raise ModelError("noise half-width must be non-negative")


@dataclass(frozen=True, eq=False)
class StageUtility:
    """
    Expected stage payoffs for both players at every stage.
    """

    payoffs: tuple[tuple[FloatArray, FloatArray], ...]
    noise: NoiseSpec = field(default_factory=NoiseSpec)


@dataclass(frozen=True, eq=False)
class MultistageGame:
    """
    A multistage two-player Bayesian game.

    The prior ``priors[0][t]`` is the defender's initial belief over attacker
    types when the defender has type ``t``; ``priors[1][u]`` is the attacker's
    belief over defender types when the attacker has type ``u``.
    """

    types: TypeSpace
    priors: tuple[FloatArray, FloatArray]
    model: StateModel
    utility: StageUtility
    name: str = "game"

    def __post_init__(self):
        t1, t2 = self.types.sizes
        priors: list[FloatArray] = []
        for p, shape in enumerate([(t1, t2), (t2, t1)]):
            prior = np.array(self.priors[p], dtype=np.float64)
            if prior.shape != shape:
                raise ModelError(f"{PLAYERS[p]} prior has shape {prior.shape}, not {shape}")
            prior = np.stack([as_probability(row).weights for row in prior])
            prior.setflags(write=False)
            priors.append(prior)
        object.__setattr__(self, "priors", (priors[0], priors[1]))

        if len(self.utility.payoffs) != len(self.model.states):
            raise ModelError("payoff tables do not cover every stage")
        tables: list[tuple[FloatArray, FloatArray]] = []
        for k, pair in enumerate(self.utility.payoffs):
            shape = (len(self.model.states[k]), *self.model.action_counts(k), t1, t2)
            checked: list[FloatArray] = []
            for p, table in enumerate(pair):
                arr = np.array(table, dtype=np.float64)
                if arr.shape != shape:
                    raise ModelError(
                        f"stage {k} {PLAYERS[p]} payoffs have shape {arr.shape}, not {shape}"
                    )
                if not np.all(np.isfinite(arr)):
                    raise ModelError(f"stage {k} {PLAYERS[p]} payoffs are not finite")
                arr.setflags(write=False)
                checked.append(arr)
            tables.append((checked[0], checked[1]))
        object.__setattr__(self, "utility", replace(self.utility, payoffs=tuple(tables)))

    @property
    def horizon(self) -> int:
        return self.model.horizon

    def payoff(self, k: int, player: int) -> FloatArray:
        return self.utility.payoffs[k][player]


@dataclass(frozen=True)
class Belief:
    """
    One player's belief over the opponent's types at a single information
    point.
    """

    stage: int
    info: int
    "State (or history-state) index at this stage."
    own_type: int
    distribution: ProbabilityVector


class BehavioralStrategy:
    """
    A behavioral strategy: for every stage, a table of shape ``(states, own types,
    actions)`` whose rows are probability vectors.
    """

    tables: tuple[FloatArray, ...]

    def __init__(self, tables: Sequence[ArrayLike]):
        checked: list[FloatArray] = []
        for k, table in enumerate(tables):
            arr = np.array(table, dtype=np.float64)
            if arr.ndim != 3:
                raise ModelError(f"stage {k} strategy table must be 3-D, got {arr.shape}")
            if np.min(arr, initial=0.0) < -SIMPLEX_REJECT or np.any(
                np.abs(arr.sum(axis=2) - 1.0) > SIMPLEX_REJECT
            ):
                raise ContractError(f"stage {k} strategy rows are not probability vectors")
            arr = np.clip(arr, 0.0, None)
            arr /= arr.sum(axis=2, keepdims=True)
            arr.setflags(write=False)
            checked.append(arr)
        self.tables = tuple(checked)

    @classmethod
    def uniform(cls, game: MultistageGame, player: int) -> BehavioralStrategy:
        "The strategy playing uniformly at every information point."
        nt = game.types.sizes[player]
        tables: list[FloatArray] = []
        for k, xs in enumerate(game.model.states):
            na = game.model.action_counts(k)[player]
            tables.append(np.full((len(xs), nt, na), 1.0 / na))
        return cls(tables)

    @property
    def horizon(self) -> int:
        return len(self.tables) - 1

    def rows(self, k: int, x: int) -> FloatArray:
        "The ``(types, actions)`` table at stage ``k`` and state ``x``."
        if not 0 <= k < len(self.tables) or not 0 <= x < self.tables[k].shape[0]:
            raise ModelError(f"strategy is undefined at stage {k}, state {x}")
        return self.tables[k][x]

    def at(self, k: int, x: int, own_type: int) -> ProbabilityVector:
        return ProbabilityVector(self.rows(k, x)[own_type])


@dataclass(frozen=True, eq=False)
class BeliefSystem:
    """
    Beliefs of both players at every stage, state, and own type.
    """

    tables: tuple[tuple[FloatArray, ...], tuple[FloatArray, ...]]

    @classmethod
    def prior(cls, game: MultistageGame) -> BeliefSystem:
        "Beliefs equal to the prior at every information point."
        tables: list[tuple[FloatArray, ...]] = []
        for p in range(2):
            tables.append(
                tuple(
                    np.broadcast_to(game.priors[p], (len(xs), *game.priors[p].shape)).copy()
                    for xs in game.model.states
                )
            )
        return cls((tables[0], tables[1]))

    def at(self, player: int, k: int, x: int, own_type: int) -> Belief:
        dist = ProbabilityVector(self.tables[player][k][x, own_type])
        return Belief(k, x, own_type, dist)

    def distance(self, other: BeliefSystem) -> float:
        "Sup-norm distance between two belief systems."
        return max(
            float(np.max(np.abs(a - b), initial=0.0))
            for p in range(2)
            for a, b in zip(self.tables[p], other.tables[p])
        )

    def blend(self, other: BeliefSystem, weight: float) -> BeliefSystem:
        "Move ``weight`` of the way toward another belief system."
        tables = tuple(
            tuple((1 - weight) * a + weight * b for a, b in zip(self.tables[p], other.tables[p]))
            for p in range(2)
        )
        return BeliefSystem((tables[0], tables[1]))


@dataclass(frozen=True, eq=False)
class EquilibriumProfile:
    """
    A strategy and belief profile together with the slack it was solved for.
    """

    strategies: tuple[BehavioralStrategy, BehavioralStrategy]
    beliefs: BeliefSystem
    slack: float = 0.0
    sweeps: int = 0
    "Number of solver sweeps that produced this profile."


@dataclass(frozen=True, eq=False)
class PbneReport:
    """
    Verification report for an equilibrium profile.
    """

    consistency_residual: float
    "Sup-norm gap between the profile's beliefs and those implied by its strategies."
    gains: tuple[tuple[FloatArray, ...], tuple[FloatArray, ...]]
    "Per player and stage, best-response value minus profile value by state and type."
    slack: float

    @property
    def max_gain(self) -> float:
        return max(float(np.max(g)) for p in range(2) for g in self.gains[p])

    @property
    def passed(self) -> bool:
        return (
            self.consistency_residual <= CONSISTENCY_TOL
            and self.max_gain <= self.slack + EQUILIBRIUM_TOL
        )


@dataclass(frozen=True, eq=False)
class Episode:
    """
    A simulated play of a multistage game.
    """

    states: IntArray
    defender_actions: IntArray
    attacker_actions: IntArray
    defender_payoffs: FloatArray
    attacker_payoffs: FloatArray
    defender_beliefs: FloatArray
    "Defender belief over attacker types at each stage, shape ``(K + 1, |Θ2|)``."
    attacker_beliefs: FloatArray
    "Attacker belief over defender types at each stage, shape ``(K + 1, |Θ1|)``."


def posterior(
    belief: ProbabilityVector | ArrayLike,
    likelihoods: ArrayLike,
    fallback: ProbabilityVector | ArrayLike,
) -> ProbabilityVector:
    """
    Bayes' rule over opponent types.  If the observation has zero probability
    under every type, the update does not apply and ``fallback`` is returned.
    """
    b = as_probability(belief).weights
    num = b * np.asarray(likelihoods, dtype=np.float64)
    den = float(np.sum(num))
    if den <= 0:
        return as_probability(fallback)
    return ProbabilityVector(num / den)


def update_belief_history(
    b: Belief,
    own: BehavioralStrategy,
    opponent: BehavioralStrategy,
    own_action: int,
    opponent_action: int,
    next_info: int,
    prior: ProbabilityVector | ArrayLike,
) -> Belief:
    """
    Update a belief after observing both players' actions at a history.

    Args:
        b: the current belief, conditioned on the history ``b.info`` and own type.
        own: the believing player's strategy.
        opponent: the opponent's strategy.
        own_action: the believing player's action.
        opponent_action: the opponent's observed action.
        next_info: index of the extended history at the next stage.
        prior: the initial belief, returned when the update does not apply.
    """
    own_rows = own.rows(b.stage, b.info)
    opp_rows = opponent.rows(b.stage, b.info)
    if opp_rows.shape[0] != len(b.distribution):
        raise ModelError("opponent strategy does not match the belief's type space")
    lik = own_rows[b.own_type, own_action] * opp_rows[:, opponent_action]
    return Belief(b.stage + 1, next_info, b.own_type, posterior(b.distribution, lik, prior))


def update_belief_markov(
    b: Belief,
    kernel: ArrayLike,
    next_state: int,
    prior: ProbabilityVector | ArrayLike,
) -> Belief:
    """
    Update a belief after a state transition.

    Args:
        b: the current belief at state ``b.info``.
        kernel:
            Transition probabilities ``Pr(x' | opponent type, x, own type)``
            with shape ``(opponent types, next states)``.
        next_state: the observed next state.
        prior: the initial belief, returned when the update does not apply.
    """
    kern = np.asarray(kernel, dtype=np.float64)
    if kern.ndim != 2 or kern.shape[0] != len(b.distribution):
        raise ModelError(f"transition kernel has shape {kern.shape}")
    if np.any(np.abs(kern.sum(axis=1) - 1.0) > SIMPLEX_REJECT) or np.min(kern) < -SIMPLEX_REJECT:
        raise ContractError("transition kernel rows are not probability vectors")
    if not 0 <= next_state < kern.shape[1]:
        raise ModelError(f"state {next_state} is not in the next stage")
    lik = kern[:, next_state]
    return Belief(b.stage + 1, next_state, b.own_type, posterior(b.distribution, lik, prior))


def transition_kernel(
    game: MultistageGame,
    strategies: tuple[BehavioralStrategy, BehavioralStrategy],
    k: int,
    x: int,
    player: int,
    own_type: int,
) -> FloatArray:
    """
    Compute ``Pr(x' | opponent type, x, own type)`` at stage ``k < K``, with
    shape ``(opponent types, next states)``.
    """
    f = game.model.transitions[k][x]
    own_row = strategies[player].rows(k, x)[own_type]
    opp_rows = strategies[1 - player].rows(k, x)
    if player == 0:
        joint = own_row[None, :, None] * opp_rows[:, None, :]
    else:
        joint = opp_rows[:, :, None] * own_row[None, None, :]
    kern = np.zeros((opp_rows.shape[0], len(game.model.states[k + 1])))
    for a1, a2 in np.ndindex(f.shape):
        kern[:, f[a1, a2]] += joint[:, a1, a2]
    return kern


def utility_range(game: MultistageGame) -> float:
    "Range of cumulative utility over all stages, maximized over players."
    return max(
        sum(float(np.ptp(game.payoff(k, p))) for k in range(game.horizon + 1)) for p in range(2)
    )


def _stage_expectation(
    k: int,
    game: MultistageGame,
    strategies: tuple[BehavioralStrategy, BehavioralStrategy],
    x: int,
    player: int,
    own_type: int,
    belief: FloatArray,
) -> float:
    s1 = strategies[0].rows(k, x)
    s2 = strategies[1].rows(k, x)
    j = game.payoff(k, player)[x]
    if player == 0:
        return float(np.einsum("u,a,ub,abu->", belief, s1[own_type], s2, j[:, :, own_type, :]))
    else:
        return float(np.einsum("t,ta,b,abt->", belief, s1, s2[own_type], j[:, :, :, own_type]))


def cumulative_utility(
    game: MultistageGame,
    strategies: tuple[BehavioralStrategy, BehavioralStrategy],
    belief: ProbabilityVector | ArrayLike,
    state: int,
    own_type: int,
    stage: int = 0,
    player: int = 0,
) -> float:
    """
    Expected cumulative utility from ``stage`` to the horizon for one player of
    a given type, starting from ``state`` with the given belief over opponent
    types.  Beliefs are propagated along each state path by Bayes' rule.
    """
    fallback = game.priors[player][own_type]
    b0 = as_probability(belief).weights

    def value(k: int, x: int, b: FloatArray) -> float:
        total = _stage_expectation(k, game, strategies, x, player, own_type, b)
        if k == game.horizon:
            return total
        kern = transition_kernel(game, strategies, k, x, player, own_type)
        reach = b @ kern
        for nx in np.flatnonzero(reach > 0):
            nb = posterior(b, kern[:, nx], fallback).weights
            total += float(reach[nx]) * value(k + 1, int(nx), nb)
        return total

    return value(stage, state, b0)


def _continuation_q(
    game: MultistageGame, k: int, nexts: tuple[FloatArray, FloatArray] | None
) -> tuple[FloatArray, FloatArray]:
    "Stage payoffs plus type-conditioned continuation values, indexed like the payoff tables."
    j1 = game.payoff(k, 0)
    j2 = game.payoff(k, 1)
    if nexts is None:
        return j1, j2
    f = game.model.transitions[k]
    return j1 + nexts[0][f], j2 + nexts[1][f]


def type_pair_values(
    game: MultistageGame, strategies: tuple[BehavioralStrategy, BehavioralStrategy]
) -> tuple[list[FloatArray], list[FloatArray]]:
    """
    Expected cumulative utility of each player from every stage and state to
    the horizon, conditioned on both players' types.  Tables have axes
    ``(state, defender type, attacker type)``.
    """
    vals: tuple[list[FloatArray], list[FloatArray]] = ([], [])
    nexts = None
    for k in range(game.horizon, -1, -1):
        q1, q2 = _continuation_q(game, k, nexts)
        s1 = strategies[0].tables[k]
        s2 = strategies[1].tables[k]
        w1 = np.einsum("xta,xub,xabtu->xtu", s1, s2, q1)
        w2 = np.einsum("xta,xub,xabtu->xtu", s1, s2, q2)
        vals[0].append(w1)
        vals[1].append(w2)
        nexts = (w1, w2)
    vals[0].reverse()
    vals[1].reverse()
    return vals


def profile_values(
    game: MultistageGame,
    strategies: tuple[BehavioralStrategy, BehavioralStrategy],
    beliefs: BeliefSystem,
) -> tuple[list[FloatArray], list[FloatArray]]:
    """
    Evaluate a profile at every stage, state, and own type by weighting the
    type-conditioned values with the profile's beliefs.  Returns per-stage
    tables of shape ``(states, own types)`` for each player.
    """
    w1, w2 = type_pair_values(game, strategies)
    v1 = [np.einsum("xtu,xtu->xt", b, w) for b, w in zip(beliefs.tables[0], w1)]
    v2 = [np.einsum("xut,xtu->xu", b, w) for b, w in zip(beliefs.tables[1], w2)]
    return v1, v2


@dataclass(frozen=True, eq=False)
class _Deviator:
    """
    One player of one type facing the opponent's fixed strategy.  At stage
    ``k``, ``reward[k][x, a, u]`` is the expected stage payoff of own action
    ``a`` against opponent type ``u``, and ``reach[k][x, a, u, x']`` the
    probability that the game then moves to ``x'``.
    """

    reward: list[FloatArray]
    reach: list[FloatArray]

    @classmethod
    def build(
        cls,
        game: MultistageGame,
        strategies: tuple[BehavioralStrategy, BehavioralStrategy],
        player: int,
        own_type: int,
    ) -> _Deviator:
        reward: list[FloatArray] = []
        reach: list[FloatArray] = []
        for k in range(game.horizon + 1):
            j = game.payoff(k, player)
            if player == 0:
                q = j[:, :, :, own_type, :]
            else:
                q = j[:, :, :, :, own_type].transpose(0, 2, 1, 3)
            opp = strategies[1 - player].tables[k]
            reward.append(np.einsum("xub,xabu->xau", opp, q))
            if k == game.horizon:
                break
            f = game.model.transitions[k]
            if player == 1:
                f = f.transpose(0, 2, 1)
            lik = np.zeros((*f.shape[:2], opp.shape[1], len(game.model.states[k + 1])))
            for x, a, b in np.ndindex(*f.shape):
                lik[x, a, :, f[x, a, b]] += opp[x, :, b]
            reach.append(lik)
        return cls(reward, reach)

    @property
    def horizon(self) -> int:
        return len(self.reward) - 1

    def best_value(self, k0: int, x0: int, belief: FloatArray) -> float:
        """
        The largest cumulative utility any own strategy attains from ``(k0, x0)``
        when the opponent's type is distributed as ``belief``.
        """
        layers = self._directions(k0, x0, belief)
        if layers is None:
            plans = 1
            for lik in self.reach[k0:]:
                plans *= lik.shape[1] ** lik.shape[0]
            if plans > DEVIATION_BOUND:
                raise CapacityError(
                    f"checking deviations from stage {k0} needs {plans} plans, "
                    f"bound is {DEVIATION_BOUND}"
                )
            return self._enumerate(k0, {x0: belief})

        directions, scales = layers
        values = {
            x: float(np.max(self.reward[self.horizon][x] @ d)) for x, d in directions[-1].items()
        }
        for i in range(len(scales) - 1, -1, -1):
            k = k0 + i
            prev: dict[int, float] = {}
            for x, d in directions[i].items():
                stage = self.reward[k][x] @ d
                prev[x] = max(
                    float(stage[a]) + sum(s * values[nx] for nx, s in scales[i][x, a].items())
                    for a in range(len(stage))
                )
            values = prev
        return values[x0]

    def _directions(
        self, k0: int, x0: int, belief: FloatArray
    ) -> tuple[list[dict[int, FloatArray]], list[dict[tuple[int, int], dict[int, float]]]] | None:
        """
        Propagate opponent-type weights forward from ``(k0, x0)``.  Returns
        ``None`` if some state's conditional type distribution depends on the
        own actions leading to it, in which case backward induction over states
        is not exact.
        """
        directions: list[dict[int, FloatArray]] = [{x0: belief}]
        scales: list[dict[tuple[int, int], dict[int, float]]] = []
        for k in range(k0, self.horizon):
            nxt: dict[int, FloatArray] = {}
            step: dict[tuple[int, int], dict[int, float]] = {}
            for x, d in directions[-1].items():
                for a in range(self.reach[k].shape[1]):
                    mass = d[:, None] * self.reach[k][x, a]
                    total = mass.sum(axis=0)
                    children: dict[int, float] = {}
                    for i in np.flatnonzero(total > 0):
                        nx = int(i)
                        w = mass[:, nx] / total[nx]
                        seen = nxt.setdefault(nx, w)
                        if np.max(np.abs(seen - w)) > DIRECTION_TOL:
                            return None
                        children[nx] = float(total[nx])
                    step[x, a] = children
            directions.append(nxt)
            scales.append(step)
        return directions, scales

    def _enumerate(self, k: int, weights: dict[int, FloatArray]) -> float:
        "Best value over pure plans, given joint state and type weights at stage ``k``."
        if k == self.horizon:
            return sum(float(np.max(self.reward[k][x] @ w)) for x, w in weights.items())
        xs = list(weights)
        best = -np.inf
        for plan in it.product(range(self.reach[k].shape[1]), repeat=len(xs)):
            total = 0.0
            nxt: dict[int, FloatArray] = {}
            for x, a in zip(xs, plan):
                w = weights[x]
                total += float(self.reward[k][x, a] @ w)
                mass = w[:, None] * self.reach[k][x, a]
                for i in np.flatnonzero(mass.sum(axis=0) > 0):
                    nx = int(i)
                    nxt[nx] = nxt[nx] + mass[:, nx] if nx in nxt else mass[:, nx]
            best = max(best, total + self._enumerate(k + 1, nxt))
        return float(best)


def best_response_values(
    game: MultistageGame,
    strategies: tuple[BehavioralStrategy, BehavioralStrategy],
    beliefs: BeliefSystem,
) -> tuple[list[FloatArray], list[FloatArray]]:
    """
    Best-response values of each player against the opponent's fixed strategy
    at every stage, state, and own type.  The deviator starts from the
    profile's belief, and its later beliefs follow from its own deviation by
    Bayes' rule, so each value is the largest :func:`cumulative_utility` any
    own strategy attains.  Mixing never beats the best pure plan, since each
    stage is visited once.

    Raises:
        CapacityError:
            if own moves change which opponent types reach a state and the
            pure plans to check exceed :data:`DEVIATION_BOUND`.
    """
    vals: tuple[list[FloatArray], list[FloatArray]] = ([], [])
    for p in range(2):
        nt = game.types.sizes[p]
        devs = [_Deviator.build(game, strategies, p, t) for t in range(nt)]
        for k, xs in enumerate(game.model.states):
            table = np.zeros((len(xs), nt))
            for x, t in np.ndindex(*table.shape):
                table[x, t] = devs[t].best_value(k, x, beliefs.tables[p][k][x, t])
            vals[p].append(table)
    return vals


def _reach(
    game: MultistageGame, strategies: tuple[BehavioralStrategy, BehavioralStrategy]
) -> list[FloatArray]:
    "Probability of reaching each state given both types, per stage ``(state, θ1, θ2)``."
    t1, t2 = game.types.sizes
    reach = np.zeros((len(game.model.states[0]), t1, t2))
    reach[game.model.initial] = 1.0
    out = [reach]
    for k in range(game.horizon):
        s1 = strategies[0].tables[k]
        s2 = strategies[1].tables[k]
        joint = np.einsum("xtu,xta,xub->xabtu", reach, s1, s2)
        nxt = np.zeros((len(game.model.states[k + 1]), t1, t2))
        np.add.at(nxt, game.model.transitions[k].reshape(-1), joint.reshape(-1, t1, t2))
        reach = nxt
        out.append(reach)
    return out


def consistent_beliefs(
    game: MultistageGame, strategies: tuple[BehavioralStrategy, BehavioralStrategy]
) -> BeliefSystem:
    """
    Compute the beliefs implied by a strategy profile.  Each state's belief is
    the prior conditioned on reaching that state.  Where a player's own play
    rules a state out, the belief is conditioned on reaching it under uniform
    own play instead, so the opponent's moves still count; states the opponent
    never leads to keep the prior.
    """
    actual = _reach(game, strategies)
    own0 = _reach(game, (BehavioralStrategy.uniform(game, 0), strategies[1]))
    own1 = _reach(game, (strategies[0], BehavioralStrategy.uniform(game, 1)))
    b1 = tuple(_condition(r, game.priors[0], alt) for r, alt in zip(actual, own0))
    b2 = tuple(
        _condition(r.transpose(0, 2, 1), game.priors[1], alt.transpose(0, 2, 1))
        for r, alt in zip(actual, own1)
    )
    return BeliefSystem((b1, b2))


def _condition(reach: FloatArray, prior: FloatArray, fallback: FloatArray) -> FloatArray:
    "Condition a prior on reach probabilities, then on fallback ones, then keep it."
    num = reach * prior[None, :, :]
    alt = fallback * prior[None, :, :]
    den = num.sum(axis=2, keepdims=True)
    alt_den = alt.sum(axis=2, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        kept = np.where(alt_den > 0, alt / np.where(alt_den > 0, alt_den, 1.0), prior[None, :, :])
        return np.where(den > 0, num / np.where(den > 0, den, 1.0), kept)


def _type_maps(n_actions: int, n_types: int) -> IntArray:
    "All pure maps from types to actions, shape ``(maps, types)``."
    return np.array(list(it.product(range(n_actions), repeat=n_types)), dtype=np.int64)


def _solve_stage(
    q1: FloatArray,
    q2: FloatArray,
    b1: FloatArray,
    b2: FloatArray,
    bound: int,
) -> tuple[FloatArray, FloatArray]:
    """
    Solve one stage game under fixed beliefs via its type-agent normal form.

    Args:
        q1: defender payoffs with continuation, axes ``(a1, a2, θ1, θ2)``.
        q2: attacker payoffs with continuation, same axes.
        b1: defender beliefs, axes ``(θ1, θ2)``.
        b2: attacker beliefs, axes ``(θ2, θ1)``.
        bound: the enumeration bound.

    Returns:
        Behavioral strategy rows for both players, shapes ``(θ1, a1)`` and ``(θ2, a2)``.
    """
    na1, na2, nt1, nt2 = q1.shape
    m1 = _type_maps(na1, nt1)
    m2 = _type_maps(na2, nt2)
    if len(m1) > bound or len(m2) > bound:
        raise CapacityError(
            f"stage game has {len(m1)}x{len(m2)} type-contingent strategies, bound is {bound}"
        )
    t1 = np.arange(nt1)
    t2 = np.arange(nt2)
    ix = (
        m1[:, None, :, None],
        m2[None, :, None, :],
        t1[None, None, :, None],
        t2[None, None, None, :],
    )
    u1 = np.einsum("pqtu,tu->pq", q1[ix], b1)
    u2 = np.einsum("pqtu,ut->pq", q2[ix], b2)
    mu1, mu2 = solve_bimatrix(BimatrixGame(u1, u2), bound=bound)[0]
    pick1 = (m1[:, :, None] == np.arange(na1)).astype(np.float64)
    pick2 = (m2[:, :, None] == np.arange(na2)).astype(np.float64)
    sigma1 = np.einsum("p,pta->ta", mu1.weights, pick1)
    sigma2 = np.einsum("q,qub->ub", mu2.weights, pick2)
    return sigma1, sigma2


def _backward_pass(
    game: MultistageGame, beliefs: BeliefSystem, bound: int
) -> tuple[BehavioralStrategy, BehavioralStrategy]:
    tables: tuple[list[FloatArray], list[FloatArray]] = ([], [])
    nexts = None
    for k in range(game.horizon, -1, -1):
        q1, q2 = _continuation_q(game, k, nexts)
        nx = q1.shape[0]
        nt1, nt2 = game.types.sizes
        na1, na2 = game.model.action_counts(k)
        s1 = np.zeros((nx, nt1, na1))
        s2 = np.zeros((nx, nt2, na2))
        b1 = beliefs.tables[0][k]
        b2 = beliefs.tables[1][k]
        for x in range(nx):
            s1[x], s2[x] = _solve_stage(q1[x], q2[x], b1[x], b2[x], bound)
        w1 = np.einsum("xta,xub,xabtu->xtu", s1, s2, q1)
        w2 = np.einsum("xta,xub,xabtu->xtu", s1, s2, q2)
        tables[0].append(s1)
        tables[1].append(s2)
        nexts = (w1, w2)
    tables[0].reverse()
    tables[1].reverse()
    return BehavioralStrategy(tables[0]), BehavioralStrategy(tables[1])


def verify_pbne(game: MultistageGame, profile: EquilibriumProfile, epsilon: float) -> PbneReport:
    """
    Verify belief consistency and sequential rationality of a profile.

    Args:
        game: the game.
        profile: the profile to check.
        epsilon: the permitted deviation gain.
    """
    implied = consistent_beliefs(game, profile.strategies)
    residual = profile.beliefs.distance(implied)
    values = profile_values(game, profile.strategies, profile.beliefs)
    best = best_response_values(game, profile.strategies, profile.beliefs)
    gains = tuple(tuple(b - v for b, v in zip(best[p], values[p])) for p in range(2))
    report = PbneReport(residual, (gains[0], gains[1]), epsilon)
    _log.debug(
        "verified profile: consistency residual %.3g, max gain %.3g",
        residual,
        report.max_gain,
    )
    return report


def solve_pbne(
    game: MultistageGame,
    epsilon: float = 0.0,
    max_iter: int = 100,
    *,
    damping: float = 0.5,
    tol: float = CONSISTENCY_TOL,
    bound: int = ENUMERATION_BOUND,
) -> EquilibriumProfile:
    """
    Compute an ε-perfect Bayesian Nash equilibrium.

    Each sweep solves every stage game by backward induction under the current
    beliefs, then recomputes the beliefs those strategies imply.  The sweeps
    stop as soon as the strategies with their implied beliefs pass
    :func:`verify_pbne` at ``epsilon``; otherwise the beliefs are moved
    ``damping`` of the way toward the implied ones.  If the beliefs settle on
    a profile that fails verification, or ``max_iter`` sweeps pass, the
    search restarts from the prior with the smaller step sizes in
    :data:`DAMPING_FALLBACK`.

    Args:
        game: the game.
        epsilon: permitted deviation gain.
        max_iter: maximum number of sweeps per step size.
        damping: belief step size between sweeps.
        tol: sup-norm belief change treated as settled.
        bound: enumeration bound for stage games.

    Raises:
        NoConvergenceError:
            if no step size reaches a verified profile; the error carries the
            last profile and its verification report.
    """
    if epsilon < 0:
        raise ContractError(f"slack {epsilon} must be non-negative")
    if max_iter < 1:
        raise ContractError("at least one sweep is required")
    if not 0 < damping <= 1:
        raise ContractError(f"damping {damping} not in (0, 1]")

    steps = [damping, *(d for d in DAMPING_FALLBACK if d < damping)]
    profile = None
    report = None
    sweeps = 0
    for step in steps:
        beliefs = BeliefSystem.prior(game)
        for sweep in range(1, max_iter + 1):
            sweeps += 1
            strategies = _backward_pass(game, beliefs, bound)
            implied = consistent_beliefs(game, strategies)
            change = beliefs.distance(implied)
            profile = EquilibriumProfile(strategies, implied, epsilon, sweeps)
            report = verify_pbne(game, profile, epsilon)
            _log.debug(
                "damping %g, sweep %d: belief change %.3g, max gain %.3g",
                step,
                sweep,
                change,
                report.max_gain,
            )
            if report.passed:
                _log.info("%s: equilibrium after %d sweeps", game.name, sweeps)
                return profile
            if change < tol:
                break
            beliefs = beliefs.blend(implied, step)
        _log.debug("%s: damping %g found no equilibrium", game.name, step)

    assert profile is not None and report is not None
    _log.warning(
        "%s: no equilibrium after %d sweeps (max gain %.3g)", game.name, sweeps, report.max_gain
    )
    raise NoConvergenceError(
        f"belief iteration did not converge in {max_iter} sweeps at any of {len(steps)} step sizes",
        profile,
        report,
    )


def equilibrium_values(
    game: MultistageGame, profile: EquilibriumProfile
) -> tuple[FloatArray, FloatArray]:
    "Each player's expected utility per own type from the initial state."
    values = profile_values(game, profile.strategies, profile.beliefs)
    x0 = game.model.initial
    return values[0][0][x0], values[1][0][x0]


def simulate_episode(
    game: MultistageGame,
    profile: EquilibriumProfile,
    defender_type: int,
    attacker_type: int,
    rng: RandomSource,
    *,
    noisy: bool = False,
) -> Episode:
    """
    Play one episode of the game under a profile.  Beliefs start at the priors
    and are updated from observed state transitions.

    Args:
        game: the game.
        profile: the strategies to play.
        defender_type: the defender's realized type.
        attacker_type: the attacker's realized type.
        rng: the random source.
        noisy:
            if ``True``, realized payoffs include the game's recorded noise.
    """
    nk = game.horizon + 1
    types = (defender_type, attacker_type)
    states = np.zeros(nk, dtype=np.int64)
    acts = np.zeros((2, nk), dtype=np.int64)
    pays = np.zeros((2, nk))
    beliefs = [np.zeros((nk, game.types.sizes[1])), np.zeros((nk, game.types.sizes[0]))]
    cur = [game.priors[0][defender_type], game.priors[1][attacker_type]]
    width = game.utility.noise.half_width

    x = game.model.initial
    for k in range(nk):
        states[k] = x
        for p in range(2):
            beliefs[p][k] = cur[p]
        for p in range(2):
            acts[p, k] = sample_categorical(profile.strategies[p].rows(k, x)[types[p]], rng)
        a1, a2 = int(acts[0, k]), int(acts[1, k])
        for p in range(2):
            pays[p, k] = game.payoff(k, p)[x, a1, a2, defender_type, attacker_type]
            if noisy and width > 0:
                pays[p, k] += rng.uniform(-width, width)
        if k == game.horizon:
            break
        nx = int(game.model.transitions[k][x, a1, a2])
        for p in range(2):
            kern = transition_kernel(game, profile.strategies, k, x, p, types[p])
            cur[p] = posterior(cur[p], kern[:, nx], game.priors[p][types[p]]).weights
        x = nx

    return Episode(states, acts[0], acts[1], pays[0], pays[1], beliefs[0], beliefs[1])


def with_perfect_recall(game: MultistageGame) -> MultistageGame:
    """
    Expand a game so every state records the full action history, making the
    state-based solver operate under the perfect-recall information structure.

    Raises:
        CapacityError: if the horizon exceeds :data:`MAX_HISTORY_HORIZON`.
    """
    if game.horizon > MAX_HISTORY_HORIZON:
        raise CapacityError(
            f"horizon {game.horizon} exceeds the history bound {MAX_HISTORY_HORIZON}"
        )
    model = game.model
    labels: list[list[str]] = [list(model.states[0])]
    base: list[list[int]] = [list(range(len(model.states[0])))]
    transitions: list[IntArray] = []
    for k in range(game.horizon):
        a1s, a2s = model.actions[k]
        f = model.transitions[k]
        table = np.zeros((len(labels[k]), len(a1s), len(a2s)), dtype=np.int64)
        nlabels: list[str] = []
        nbase: list[int] = []
        for h, hl in enumerate(labels[k]):
            for a1, a2 in it.product(range(len(a1s)), range(len(a2s))):
                table[h, a1, a2] = len(nlabels)
                nlabels.append(f"{hl}/{a1s[a1]},{a2s[a2]}")
                nbase.append(int(f[base[k][h], a1, a2]))
        transitions.append(table)
        labels.append(nlabels)
        base.append(nbase)

    payoffs = tuple(
        (game.payoff(k, 0)[base[k]], game.payoff(k, 1)[base[k]]) for k in range(game.horizon + 1)
    )
    recall = StateModel(
        tuple(tuple(ls) for ls in labels), model.actions, tuple(transitions), model.initial
    )
    _log.debug("expanded %s to %d history states", game.name, sum(len(ls) for ls in labels))
    return MultistageGame(
        game.types,
        game.priors,
        recall,
        StageUtility(payoffs, game.utility.noise),
        f"{game.name}+recall",
    )


def restrict_types(
    game: MultistageGame,
    *,
    defender: Sequence[str] | None = None,
    attacker: Sequence[str] | None = None,
) -> MultistageGame:
    """
    Restrict the type spaces of a game, renormalizing the priors.  Restricting
    a player to a single type makes that type common knowledge, which models
    complete-information and one-sided deception variants of a game.
    """
    sel: list[list[int]] = []
    for p, keep in enumerate([defender, attacker]):
        if keep:
            sel.append([game.types.index(p, t) for t in keep])
        else:
            sel.append(list(range(game.types.sizes[p])))
    priors: list[FloatArray] = []
    for p in range(2):
        sub = game.priors[p][np.ix_(sel[p], sel[1 - p])]
        tot = sub.sum(axis=1, keepdims=True)
        if np.any(tot <= 0):
            raise ModelError(f"{PLAYERS[p]} prior puts no mass on the retained types")
        priors.append(sub / tot)
    payoffs = tuple(
        (
            game.payoff(k, 0)[..., sel[0], :][..., sel[1]],
            game.payoff(k, 1)[..., sel[0], :][..., sel[1]],
        )
        for k in range(game.horizon + 1)
    )
    types = TypeSpace(
        tuple(game.types.defender[i] for i in sel[0]),
        tuple(game.types.attacker[i] for i in sel[1]),
    )
    return MultistageGame(
        types,
        (priors[0], priors[1]),
        game.model,
        StageUtility(payoffs, game.utility.noise),
        game.name,
    )
