# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Honeypot engagement as a discounted semi-Markov decision process.

The model is reduced to an equivalent discrete MDP through the Laplace
transform of the sojourn distributions, solved exactly by value iteration, and
learned model-free by Q-learning from simulated engagements.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence, TypeAlias

import numpy as np
from numpy.typing import NDArray

from .errors import (
    ContractError,
    ConvergenceWarning,
    DomainError,
    ModelError,
    UnsupportedScheduleError,
)
from .kernel import SIMPLEX_REJECT, FloatArray, RandomSource

_log = logging.getLogger(__name__)

IntArray: TypeAlias = NDArray[np.int64]
BoolArray: TypeAlias = NDArray[np.bool_]


class SojournFamily(enum.Enum):
    EXPONENTIAL = "exponential"
    DETERMINISTIC = "deterministic"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class SojournSpec:
    """
    Distribution of the time spent between two decision epochs.  Only
    families with closed-form Laplace transforms and CDFs are supported.
    """

    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        try:
            fam = SojournFamily(self.family)
        except ValueError:
            raise DomainError(f"unsupported sojourn family {self.family!r}")
        params = tuple(float(p) for p in self.params)
        object.__setattr__(self, "params", params)
        match fam:
            case SojournFamily.EXPONENTIAL:
                if len(params) != 1 or not params[0] > 0:
                    raise DomainError("exponential sojourn needs one positive rate")
            case SojournFamily.DETERMINISTIC:
                if len(params) != 1 or not params[0] >= 0:
                    raise DomainError("deterministic sojourn needs one non-negative duration")
            case SojournFamily.UNIFORM:
                if len(params) != 2 or not 0 <= params[0] < params[1]:
                    raise DomainError("uniform sojourn needs bounds 0 <= lo < hi")
        if not all(math.isfinite(p) for p in params):
            raise DomainError("sojourn parameters must be finite")

    @classmethod
    def exponential(cls, rate: float) -> SojournSpec:
        return cls(SojournFamily.EXPONENTIAL.value, (rate,))

    @classmethod
    def deterministic(cls, duration: float) -> SojournSpec:
        return cls(SojournFamily.DETERMINISTIC.value, (duration,))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> SojournSpec:
        return cls(SojournFamily.UNIFORM.value, (lo, hi))

    @property
    def kind(self) -> SojournFamily:
        return SojournFamily(self.family)

    def laplace(self, gamma: float) -> float:
        "Laplace transform of the sojourn density at ``gamma``."
        if gamma < 0:
            raise DomainError(f"discount rate {gamma} is negative")
        match self.kind:
            case SojournFamily.EXPONENTIAL:
                (rate,) = self.params
                return rate / (rate + gamma)
            case SojournFamily.DETERMINISTIC:
                return math.exp(-gamma * self.params[0])
            case SojournFamily.UNIFORM:
                lo, hi = self.params
                span = gamma * (hi - lo)
                if span == 0:
                    return math.exp(-gamma * lo)
                return math.exp(-gamma * lo) * -math.expm1(-span) / span

    def discounted_duration(self, gamma: float) -> float:
        """
        Expected discounted time ``(1 - laplace(gamma)) / gamma``, with the
        mean sojourn as its limit at zero.
        """
        if gamma < 0:
            raise DomainError(f"discount rate {gamma} is negative")
        if gamma == 0:
            return self.mean
        match self.kind:
            case SojournFamily.EXPONENTIAL:
                return 1.0 / (self.params[0] + gamma)
            case SojournFamily.DETERMINISTIC:
                return -math.expm1(-gamma * self.params[0]) / gamma
            case SojournFamily.UNIFORM:
                return (1.0 - self.laplace(gamma)) / gamma

    @property
    def mean(self) -> float:
        match self.kind:
            case SojournFamily.EXPONENTIAL:
                return 1.0 / self.params[0]
            case SojournFamily.DETERMINISTIC:
                return self.params[0]
            case SojournFamily.UNIFORM:
                return 0.5 * (self.params[0] + self.params[1])

    def cdf(self, t: float) -> float:
        "Probability that the sojourn is at most ``t``."
        match self.kind:
            case SojournFamily.EXPONENTIAL:
                return -math.expm1(-self.params[0] * t) if t > 0 else 0.0
            case SojournFamily.DETERMINISTIC:
                return 1.0 if t >= self.params[0] else 0.0
            case SojournFamily.UNIFORM:
                lo, hi = self.params
                return min(1.0, max(0.0, (t - lo) / (hi - lo)))

    def sample(self, rng: RandomSource) -> float:
        match self.kind:
            case SojournFamily.EXPONENTIAL:
                return float(rng.exponential(1.0 / self.params[0]))
            case SojournFamily.DETERMINISTIC:
                return self.params[0]
            case SojournFamily.UNIFORM:
                return float(rng.uniform(*self.params))


def laplace_sojourn(spec: SojournSpec, gamma: float) -> float:
    "Laplace transform of a sojourn distribution; 1 at ``gamma = 0``."
    return spec.laplace(gamma)


@dataclass(frozen=True)
class Outcome:
    """
    One possible result of taking an action: the next state, its probability,
    the immediate reward and the sojourn distribution.
    """

    target: str
    prob: float
    reward: float = 0.0
    sojourn: SojournSpec = field(default_factory=lambda: SojournSpec.exponential(1.0))


@dataclass(frozen=True)
class ActionSpec:
    name: str
    outcomes: tuple[Outcome, ...]
    rate: float = 0.0
    "Reward accrued per unit time during the sojourn."
    known: bool = False
    "Whether the defender knows this action's value; known actions are never explored."


@dataclass(frozen=True)
class StateSpec:
    name: str
    actions: tuple[ActionSpec, ...]
    absorbing: bool = False


@dataclass(frozen=True, eq=False)
class SmdpModel:
    """
    A finite discounted SMDP.

    Args:
        states: the states with their actions.
        discount: the discount rate per unit time.
        reward_bound: bound on the equivalent-MDP rewards.
        noise: relative half-width of the uniform noise on observed reward rates.
        initial: distribution of episode starting states.
    """

    states: tuple[StateSpec, ...]
    discount: float
    reward_bound: float
    noise: float = 0.1
    initial: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        names = [s.name for s in self.states]
        if not names:
            raise ModelError("model has no states")
        if len(set(names)) != len(names):
            raise ModelError("state names are not unique")
        if self.discount < 0 or not math.isfinite(self.discount):
            raise ModelError(f"discount rate {self.discount} must be finite and non-negative")
        if self.reward_bound <= 0:
            raise ModelError("reward bound must be positive")
        if self.noise < 0:
            raise ModelError("reward noise must be non-negative")
        known = set(names)
        for s in self.states:
            if not s.actions:
                raise ModelError(f"state {s.name} has no actions")
            anames = [a.name for a in s.actions]
            if len(set(anames)) != len(anames):
                raise ModelError(f"state {s.name}: action names are not unique")
            for a in s.actions:
                _check_action(s, a, known)
        initial = dict(self.initial)
        if not initial:
            initial = {names[0]: 1.0}
        for k, p in initial.items():
            if k not in known:
                raise ModelError(f"initial distribution names unknown state {k!r}")
            if self.state(k).absorbing and p > 0:
                raise ModelError(f"initial distribution puts mass on absorbing state {k}")
            if p < 0:
                raise ModelError("initial distribution has negative mass")
        if abs(sum(initial.values()) - 1) > SIMPLEX_REJECT:
            raise ModelError("initial distribution does not sum to 1")
        object.__setattr__(self, "initial", initial)

    @property
    def state_names(self) -> list[str]:
        return [s.name for s in self.states]

    @property
    def max_actions(self) -> int:
        return max(len(s.actions) for s in self.states)

    def state(self, name: str) -> StateSpec:
        for s in self.states:
            if s.name == name:
                return s
        raise ModelError(f"unknown state {name!r}")

    def state_index(self, name: str) -> int:
        try:
            return self.state_names.index(name)
        except ValueError:
            raise ModelError(f"unknown state {name!r}")

    def action_index(self, state: str, action: str) -> int:
        names = [a.name for a in self.state(state).actions]
        try:
            return names.index(action)
        except ValueError:
            raise ModelError(f"state {state} has no action {action!r}")


def _check_action(s: StateSpec, a: ActionSpec, states: set[str]):
    where = f"state {s.name}, action {a.name}"
    if not a.outcomes:
        raise ModelError(f"{where}: no outcomes")
    total = 0.0
    for o in a.outcomes:
        if o.target not in states:
            raise ModelError(f"{where}: unknown target {o.target!r}")
        if o.prob < 0:
            raise ModelError(f"{where}: negative probability")
        total += o.prob
    if abs(total - 1) > SIMPLEX_REJECT:
        raise ModelError(f"{where}: transition probabilities sum to {total:g}")
    if s.absorbing:
        if len(s.actions) != 1:
            raise ModelError(f"absorbing state {s.name} must have a single action")
        if any(o.target != s.name and o.prob > 0 for o in a.outcomes):
            raise ModelError(f"absorbing state {s.name} must loop to itself")
        if a.rate != 0 or any(o.reward != 0 for o in a.outcomes):
            raise ModelError(f"absorbing state {s.name} must carry zero reward")


@dataclass(frozen=True, eq=False)
class EquivalentMdp:
    """
    Array form of the equivalent discrete MDP.  Arrays are indexed by
    ``(state, action, next_state)``; ``mask`` marks the actions that exist.
    """

    states: tuple[str, ...]
    actions: tuple[tuple[str, ...], ...]
    tr: FloatArray
    r: FloatArray
    z: FloatArray
    mask: BoolArray
    absorbing: BoolArray
    known: BoolArray

    @property
    def expected_reward(self) -> FloatArray:
        return np.sum(self.tr * self.r, axis=2)

    @property
    def discounted_kernel(self) -> FloatArray:
        return self.tr * self.z

    @property
    def contraction_modulus(self) -> float:
        "Largest discounted transition mass over existing actions."
        mass = np.sum(self.discounted_kernel, axis=2)
        return float(np.max(mass[self.mask]))


def equivalent_mdp(m: SmdpModel) -> EquivalentMdp:
    """
    Reduce an SMDP to its equivalent discrete MDP.

    Raises:
        UnsupportedScheduleError: if the model is undiscounted.
        ModelError: if a reduced reward exceeds the reward bound.
    """
    gamma = m.discount
    if gamma == 0:
        raise UnsupportedScheduleError("undiscounted SMDPs are not supported")
    ns = len(m.states)
    na = m.max_actions
    index = {name: i for i, name in enumerate(m.state_names)}
    tr = np.zeros((ns, na, ns))
    r = np.zeros((ns, na, ns))
    z = np.zeros((ns, na, ns))
    mask = np.zeros((ns, na), dtype=np.bool_)
    known = np.zeros((ns, na), dtype=np.bool_)
    for i, s in enumerate(m.states):
        for j, a in enumerate(s.actions):
            mask[i, j] = True
            known[i, j] = a.known
            for o in a.outcomes:
                k = index[o.target]
                tr[i, j, k] += o.prob
                z[i, j, k] = o.sojourn.laplace(gamma)
                r[i, j, k] = o.reward + a.rate * o.sojourn.discounted_duration(gamma)
                if abs(r[i, j, k]) > m.reward_bound:
                    raise ModelError(
                        f"state {s.name}, action {a.name}: reduced reward {r[i, j, k]:g}"
                        f" exceeds bound {m.reward_bound:g}"
                    )
    absorbing = np.array([s.absorbing for s in m.states], dtype=np.bool_)
    return EquivalentMdp(
        tuple(m.state_names),
        tuple(tuple(a.name for a in s.actions) for s in m.states),
        tr,
        r,
        z,
        mask,
        absorbing,
        known,
    )


@dataclass
class RegularityReport:
    delta: float
    theta: float
    violations: list[tuple[str, str, float]]
    "State, action and short-sojourn mass of each violating pair."

    @property
    def passed(self) -> bool:
        return not self.violations


def check_regularity(m: SmdpModel, delta: float, theta: float) -> RegularityReport:
    """
    Check that no state-action pair transitions within ``delta`` time units
    with probability above ``1 - theta``.
    """
    if delta <= 0:
        raise ContractError("regularity window must be positive")
    if not 0 < theta < 1:
        raise ContractError(f"regularity margin {theta} not in (0, 1)")
    violations: list[tuple[str, str, float]] = []
    for s in m.states:
        for a in s.actions:
            mass = sum(o.prob * o.sojourn.cdf(delta) for o in a.outcomes)
            if mass > 1 - theta:
                violations.append((s.name, a.name, mass))
    if violations:
        _log.info("%d state-action pairs violate regularity", len(violations))
    return RegularityReport(delta, theta, violations)


def _bellman(equiv: EquivalentMdp, v: FloatArray) -> FloatArray:
    q = equiv.expected_reward + np.einsum("ijk,k->ij", equiv.discounted_kernel, v)
    return np.where(equiv.mask, q, -np.inf)


def q_star(equiv: EquivalentMdp, v: FloatArray) -> FloatArray:
    "State-action values under a value function; missing actions are ``-inf``."
    return _bellman(equiv, np.asarray(v, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class PlanResult:
    values: FloatArray
    policy: IntArray
    "Greedy action index per state."
    residual: float
    "Bellman residual of ``values``."
    residuals: FloatArray
    "Residual at each iteration."

    @property
    def iterations(self) -> int:
        return len(self.residuals)

    def greedy_actions(self, equiv: EquivalentMdp) -> dict[str, str]:
        return {s: equiv.actions[i][a] for i, (s, a) in enumerate(zip(equiv.states, self.policy))}


def value_iterate(equiv: EquivalentMdp, tol: float = 1e-10, max_iter: int = 100_000) -> PlanResult:
    """
    Solve the equivalent MDP's Bellman equation by value iteration.

    Args:
        equiv: the equivalent MDP.
        tol: the target Bellman residual.
        max_iter: iteration limit.

    Raises:
        DomainError: if the discounted kernel is not a contraction.
    """
    beta = equiv.contraction_modulus
    if beta >= 1:
        mass = np.sum(equiv.discounted_kernel, axis=2)
        i, j = np.unravel_index(np.argmax(np.where(equiv.mask, mass, -np.inf)), mass.shape)
        raise DomainError(
            f"no contraction: discounted mass {beta:g} at state {equiv.states[i]},"
            f" action {equiv.actions[i][j]}"
        )
    v = np.zeros(len(equiv.states))
    history: list[float] = []
    res = math.inf
    for _i in range(max_iter):
        tv = np.max(_bellman(equiv, v), axis=1)
        res = float(np.max(np.abs(tv - v)))
        history.append(res)
        if res <= tol:
            break
        v = tv
    else:
        warnings.warn(
            f"value iteration stopped at residual {res:.3e} after {max_iter} iterations",
            ConvergenceWarning,
        )
    policy = np.argmax(_bellman(equiv, v), axis=1)
    _log.debug("value iteration: %d iterations, modulus %.4f", len(history), beta)
    return PlanResult(v, policy, res, np.array(history))


def policy_evaluation(equiv: EquivalentMdp, policy: Sequence[int] | IntArray) -> FloatArray:
    "Exact values of a deterministic policy by a linear solve."
    pol = np.asarray(policy, dtype=np.int64)
    idx = np.arange(len(equiv.states))
    if not np.all(equiv.mask[idx, pol]):
        raise ModelError("policy selects a missing action")
    kernel = equiv.discounted_kernel[idx, pol]
    reward = equiv.expected_reward[idx, pol]
    return np.linalg.solve(np.eye(len(idx)) - kernel, reward)


@dataclass(eq=False)
class QTable:
    """
    Tabular Q estimates with per-pair visit counts.
    """

    q: FloatArray
    counts: IntArray
    mask: BoolArray

    @classmethod
    def zeros(cls, equiv: EquivalentMdp) -> QTable:
        shape = equiv.mask.shape
        return cls(np.zeros(shape), np.zeros(shape, dtype=np.int64), equiv.mask.copy())

    def copy(self) -> QTable:
        return QTable(self.q.copy(), self.counts.copy(), self.mask.copy())

    def masked(self, s: int) -> FloatArray:
        return np.where(self.mask[s], self.q[s], -np.inf)

    def max_value(self, s: int) -> float:
        return float(np.max(self.masked(s)))

    def greedy(self, s: int) -> int:
        if not np.any(self.mask[s]):
            raise ModelError(f"state {s} has no actions")
        return int(np.argmax(self.masked(s)))


@dataclass(frozen=True)
class Experience:
    "One observed SMDP transition."

    state: int
    action: int
    next_state: int
    sojourn: float
    reward: float
    "Observed immediate reward."
    rate: float
    "Observed reward rate."


def learning_rate(count: int, kc: float) -> float:
    "The visit-count learning rate ``kc / (count - 1 + kc)``."
    if count < 1:
        raise ContractError("visit count must be incremented before updating")
    if kc <= 0:
        raise ContractError(f"rate constant {kc} must be positive")
    return kc / (count - 1 + kc)


def _q_target(q: QTable, e: Experience, gamma: float) -> float:
    decay = math.exp(-gamma * e.sojourn)
    accrued = -math.expm1(-gamma * e.sojourn) / gamma if gamma > 0 else e.sojourn
    return e.reward + e.rate * accrued + decay * q.max_value(e.next_state)


def _q_update_inplace(q: QTable, e: Experience, kc: float, gamma: float) -> float:
    alpha = learning_rate(int(q.counts[e.state, e.action]), kc)
    target = _q_target(q, e, gamma)
    q.q[e.state, e.action] += alpha * (target - q.q[e.state, e.action])
    return float(q.q[e.state, e.action])


def q_update(q: QTable, sample: Experience, kc: float, gamma: float) -> QTable:
    """
    Apply one Q-learning update for an observed transition, returning a new
    table.  The sample's visit count must already include this visit.

    Args:
        q: the current table.
        sample: the observed transition.
        kc: the learning-rate constant.
        gamma: the discount rate.
    """
    out = q.copy()
    _q_update_inplace(out, sample, kc, gamma)
    return out


def epsilon_greedy(
    q: QTable,
    s: int,
    eps: float,
    rng: RandomSource,
    candidates: BoolArray | None = None,
) -> int:
    """
    Pick the greedy action with probability ``1 - eps``, otherwise a uniform
    action among ``candidates`` (default: all of the state's actions).
    """
    if not 0 <= eps <= 1:
        raise ContractError(f"exploration probability {eps} not in [0, 1]")
    if not np.any(q.mask[s]):
        raise ModelError(f"state {s} has no actions")
    u = rng.random()
    if u < eps:
        pool = q.mask[s] if candidates is None else candidates & q.mask[s]
        choices = np.flatnonzero(pool)
        if len(choices):
            return int(choices[rng.integers(len(choices))])
    return q.greedy(s)


@dataclass(frozen=True, eq=False)
class EpisodeLog:
    """
    Columnar log of decision epochs.  ``next_state[k]`` is ``state[k + 1]``
    unless it is absorbing, in which case a new episode starts.
    """

    episode: IntArray
    state: IntArray
    action: IntArray
    sojourn: FloatArray
    reward: FloatArray
    rate: FloatArray
    next_state: IntArray
    q_value: FloatArray
    "Q estimate of the played pair after the epoch (NaN for fixed policies)."

    def __len__(self) -> int:
        return len(self.state)

    def realized_rewards(self, gamma: float) -> FloatArray:
        "Immediate plus discounted accrued reward of each epoch."
        if gamma == 0:
            return self.reward + self.rate * self.sojourn
        return self.reward + self.rate * -np.expm1(-gamma * self.sojourn) / gamma


@dataclass(frozen=True, eq=False)
class Engagement:
    log: EpisodeLog
    q: QTable | None
    watched: FloatArray | None
    "Watched Q entry after each epoch."


@dataclass(frozen=True)
class _Choice:
    targets: IntArray
    cum: FloatArray
    rewards: tuple[float, ...]
    sojourns: tuple[SojournSpec, ...]
    rate: float


def _compile(m: SmdpModel) -> list[list[_Choice]]:
    index = {name: i for i, name in enumerate(m.state_names)}
    table: list[list[_Choice]] = []
    for s in m.states:
        row: list[_Choice] = []
        for a in s.actions:
            probs = np.array([o.prob for o in a.outcomes])
            row.append(
                _Choice(
                    np.array([index[o.target] for o in a.outcomes]),
                    np.cumsum(probs / probs.sum()),
                    tuple(o.reward for o in a.outcomes),
                    tuple(o.sojourn for o in a.outcomes),
                    a.rate,
                )
            )
        table.append(row)
    return table


def _draw(cum: FloatArray, u: float) -> int:
    return min(int(np.searchsorted(cum, u, side="right")), len(cum) - 1)


def known_values(m: SmdpModel, equiv: EquivalentMdp | None = None) -> QTable:
    """
    Initial Q table: zeros for learned actions, model values for known ones.
    """
    if equiv is None:
        equiv = equivalent_mdp(m)
    q = QTable.zeros(equiv)
    if np.any(equiv.known):
        plan = value_iterate(equiv)
        qs = q_star(equiv, plan.values)
        q.q[equiv.known] = qs[equiv.known]
    return q


def simulate_engagement(
    m: SmdpModel,
    epochs: int,
    rng: RandomSource,
    *,
    policy: Sequence[int] | IntArray | None = None,
    epsilon: float = 0.2,
    kc: float = 1.0,
    decay_after: int | None = None,
    watch: tuple[str, str] | None = None,
    q: QTable | None = None,
) -> Engagement:
    """
    Simulate honeynet engagement for a number of decision epochs.

    With ``policy`` the defender follows that fixed action per state;
    otherwise it learns with ε-greedy Q-learning.  Known actions keep their
    model values and are never explored.  Episodes restart from the initial
    distribution on absorption; restarts do not consume epochs.

    Args:
        m: the model.
        epochs: number of decision epochs.
        rng: the random source.
        policy: fixed action index per state.
        epsilon: exploration probability.
        kc: learning-rate constant.
        decay_after: if given, exploration decays linearly to zero from this
            epoch to the end of the run.
        watch: a ``(state, action)`` pair whose estimate is recorded each epoch.
        q: starting Q table (default :func:`known_values`).
    """
    if epochs < 0:
        raise ContractError("epoch count must be non-negative")
    if not 0 <= epsilon <= 1:
        raise ContractError(f"exploration probability {epsilon} not in [0, 1]")
    if kc <= 0:
        raise ContractError(f"rate constant {kc} must be positive")
    gamma = m.discount
    compiled = _compile(m)
    absorbing = [s.absorbing for s in m.states]
    start_names = list(m.initial)
    start_idx = np.array([m.state_index(n) for n in start_names])
    start_cum = np.cumsum([m.initial[n] for n in start_names])

    learning = policy is None
    table: QTable | None = None
    explore: BoolArray | None = None
    fixed: IntArray | None = None
    if learning:
        table = known_values(m) if q is None else q.copy()
        equiv_known = np.zeros_like(table.mask)
        for i, s in enumerate(m.states):
            for j, a in enumerate(s.actions):
                equiv_known[i, j] = a.known
        explore = table.mask & ~equiv_known
    else:
        fixed = np.asarray(policy, dtype=np.int64)
        if fixed.shape != (len(m.states),):
            raise ModelError("fixed policy must name one action per state")
        for i, s in enumerate(m.states):
            if not 0 <= fixed[i] < len(s.actions):
                raise ModelError(f"fixed policy action {fixed[i]} missing at state {s.name}")

    watch_idx: tuple[int, int] | None = None
    if watch is not None:
        watch_idx = (m.state_index(watch[0]), m.action_index(*watch))
        if not learning:
            raise ContractError("watching a Q entry requires a learning run")

    ep = np.zeros(epochs, dtype=np.int64)
    st = np.zeros(epochs, dtype=np.int64)
    ac = np.zeros(epochs, dtype=np.int64)
    so = np.zeros(epochs)
    rw = np.zeros(epochs)
    rt = np.zeros(epochs)
    nx = np.zeros(epochs, dtype=np.int64)
    qv = np.full(epochs, np.nan)
    watched = np.zeros(epochs) if watch_idx is not None else None

    episode = 0
    s = int(start_idx[_draw(start_cum, rng.random())])
    for k in range(epochs):
        if learning:
            assert table is not None and explore is not None
            eps = epsilon
            if decay_after is not None and k >= decay_after:
                eps = epsilon * (epochs - k) / max(epochs - decay_after, 1)
            a = epsilon_greedy(table, s, eps, rng, explore[s])
        else:
            assert fixed is not None
            a = int(fixed[s])

        choice = compiled[s][a]
        o = _draw(choice.cum, rng.random())
        nxt = int(choice.targets[o])
        tau = choice.sojourns[o].sample(rng)
        rate = choice.rate
        if m.noise > 0 and rate != 0:
            rate = rate * (1 + rng.uniform(-m.noise, m.noise))
        reward = choice.rewards[o]

        if learning:
            assert table is not None and explore is not None
            table.counts[s, a] += 1
            if explore[s, a]:
                _q_update_inplace(table, Experience(s, a, nxt, tau, reward, rate), kc, gamma)
            qv[k] = table.q[s, a]
            if watched is not None and watch_idx is not None:
                watched[k] = table.q[watch_idx]

        ep[k] = episode
        st[k] = s
        ac[k] = a
        so[k] = tau
        rw[k] = reward
        rt[k] = rate
        nx[k] = nxt

        if absorbing[nxt]:
            episode += 1
            s = int(start_idx[_draw(start_cum, rng.random())])
        else:
            s = nxt

    log = EpisodeLog(ep, st, ac, so, rw, rt, nx, qv)
    _log.debug("simulated %d epochs over %d episodes", epochs, episode)
    return Engagement(log, table, watched)


def settle_time(series: Sequence[float] | FloatArray, target: float, band: float = 0.1) -> float:
    """
    First epoch (1-based) after which ``series`` stays within a relative band
    of ``target`` through the end; infinite if it never settles.
    """
    arr = np.asarray(series, dtype=np.float64)
    if len(arr) == 0:
        return math.inf
    ok = np.abs(arr - target) <= band * abs(target)
    if not ok[-1]:
        return math.inf
    bad = np.flatnonzero(~ok)
    if len(bad) == 0:
        return 1.0
    return float(bad[-1] + 2)


def late_variance(series: Sequence[float] | FloatArray, fraction: float = 0.2) -> float:
    "Temporal variance over the final ``fraction`` of a series."
    arr = np.asarray(series, dtype=np.float64)
    if not 0 < fraction <= 1:
        raise ContractError(f"fraction {fraction} not in (0, 1]")
    n = max(1, math.ceil(len(arr) * fraction))
    return float(np.var(arr[-n:])) if len(arr) else math.nan


HONEYPOTS = tuple(f"s{i}" for i in range(1, 12))
NORMAL_ZONE = "s12"
ABSORBING = "s13"
BRIDGES = ("s1", "s2", "s8")
DEMO_ADJACENCY: Mapping[str, tuple[str, ...]] = {
    "s1": ("s3", "s4"),
    "s2": ("s5", "s6"),
    "s3": ("s1", "s7"),
    "s4": ("s1", "s9"),
    "s5": ("s2", "s9"),
    "s6": ("s2", "s11"),
    "s7": ("s3", "s10"),
    "s8": ("s9", "s10"),
    "s9": ("s4", "s5", "s8", "s10", "s11"),
    "s10": ("s7", "s8", "s9"),
    "s11": ("s6", "s9"),
}
"Honeypot links; bridge nodes also connect to the normal zone."
DEMO_REWARD_RATES: Mapping[str, float] = {"s10": 6.0, "s11": 3.0}
"Base reward rates of the database (s10) and sensor (s11) nodes; others use 1."


def _spread(
    targets: Sequence[str], mass: float, reward: float, sojourn: SojournSpec
) -> list[Outcome]:
    return [Outcome(t, mass / len(targets), reward, sojourn) for t in targets]


def _honeypot(name: str) -> StateSpec:
    base = DEMO_REWARD_RATES.get(name, 1.0)
    unit = SojournSpec.exponential(1.0)
    fast = SojournSpec.exponential(10.0)
    links = DEMO_ADJACENCY[name]
    bridge = name in BRIDGES

    eject = ActionSpec("a_E", (Outcome(ABSORBING, 1.0, -1.0, fast),), 0.0, known=True)

    def passive(zone: float, reward: float) -> tuple[Outcome, ...]:
        out = [Outcome(ABSORBING, 0.2, reward, unit)]
        if bridge:
            out.append(Outcome(NORMAL_ZONE, zone, reward, unit))
            out += _spread(links, 0.8 - zone, reward, unit)
        else:
            out += _spread(links, 0.8, reward, unit)
        return tuple(out)

    prevent = ActionSpec("a_P", passive(0.4, 0.0), base)
    lure = ActionSpec("a_L", passive(0.1, -0.5), base + 0.6)

    hold = [Outcome(ABSORBING, 0.2, -2.0, unit), Outcome(name, 0.3, -2.0, unit)]
    if bridge:
        hold.append(Outcome(NORMAL_ZONE, 0.05, -2.0, unit))
        hold += _spread(links, 0.45, -2.0, unit)
    else:
        hold += _spread(links, 0.5, -2.0, unit)
    high = ActionSpec("a_H", tuple(hold), 2 * base)
    return StateSpec(name, (eject, prevent, lure, high))


def build_demo_honeynet() -> SmdpModel:
    """
    Build the 13-state demonstration honeynet: eleven honeypots ``s1``–``s11``,
    the normal zone ``s12`` and the absorbing state ``s13``.  All numbers are
    synthetic.

    Honeypot actions are ejection ``a_E`` (known, ends the engagement), and
    three engagement levels ``a_P``, ``a_L`` and ``a_H``; the high level
    pays twice the node's reward rate at a fixed cost and holds the attacker
    longer.  The normal zone can eject (``a_E``, known) or attract the
    attacker into the bridge honeypots (``a_A``).
    """
    unit = SojournSpec.exponential(1.0)
    states = [_honeypot(h) for h in HONEYPOTS]
    attract = ActionSpec(
        "a_A",
        tuple(Outcome(b, 0.3, 0.0, SojournSpec.exponential(0.25)) for b in BRIDGES)
        + (Outcome(ABSORBING, 0.1, 0.0, SojournSpec.exponential(0.25)),),
        -10.0,
    )
    eject = ActionSpec(
        "a_E", (Outcome(ABSORBING, 1.0, -9.0, SojournSpec.exponential(10.0)),), known=True
    )
    states.append(StateSpec(NORMAL_ZONE, (eject, attract)))
    states.append(
        StateSpec(ABSORBING, (ActionSpec("null", (Outcome(ABSORBING, 1.0, 0.0, unit),)),), True)
    )
    return SmdpModel(tuple(states), 1.0, 50.0, 0.1, {NORMAL_ZONE: 1.0})
