# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Moving-target defense at a single layer: attack-surface damage model, the
zero-sum expected cost, and distributed payoff/policy learning with entropy
switching costs, along with the ODE counterpart of the learning dynamics.

The defender (system) picks configurations and minimizes damage; the attacker
picks attacks and maximizes it.  The attacker's risk estimates store negated
damage so both sides share one update rule.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence, TypeAlias

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import logsumexp

from .errors import ContractError, DomainError, ModelError
from .kernel import (
    FloatArray,
    MatrixGame,
    ProbabilityVector,
    RandomSource,
    RateSchedule,
    as_probability,
    solve_zero_sum,
)

_log = logging.getLogger(__name__)

IntArray: TypeAlias = NDArray[np.int64]


class RiskSign(enum.Enum):
    """
    Sign convention of the risk-estimate equations in the ODE counterpart.
    """

    TRACKING = "tracking"
    "Each side relaxes toward its own observed risk; the attacker's risk is negated damage."
    PRINTED = "printed"
    "The literal signs: the defender relaxes toward negated damage, the attacker toward damage."


@dataclass(frozen=True)
class EntropySchedule:
    """
    Annealed entropy weight ``max(floor, initial * decay**t)``.
    """

    initial: float = 1.0
    decay: float = 0.9995
    floor: float = 0.01

    def __post_init__(self):
        if self.initial <= 0 or self.floor <= 0:
            raise DomainError("entropy weights must be positive")
        if not 0 < self.decay <= 1:
            raise DomainError(f"entropy decay {self.decay} not in (0, 1]")

    def __call__(self, t: int) -> float:
        return max(self.floor, self.initial * self.decay**t)


@dataclass(frozen=True, eq=False)
class LayerGame:
    """
    The moving-target game at one layer.

    Vulnerability ``vulnerabilities[i]`` is exploited by attack ``attacks[i]``;
    ``damage[i, j]`` is the damage attack ``i`` causes against configuration
    ``j`` when the configuration exposes the vulnerability.
    """

    name: str
    configurations: tuple[str, ...]
    vulnerabilities: tuple[str, ...]
    attacks: tuple[str, ...]
    surface: Mapping[str, frozenset[str]]
    "The vulnerabilities each configuration exposes."
    damage: FloatArray

    def __post_init__(self):
        m = len(self.configurations)
        n = len(self.vulnerabilities)
        if m == 0 or n == 0:
            raise ModelError(f"layer {self.name} needs configurations and vulnerabilities")
        for what, labels in [
            ("configuration", self.configurations),
            ("vulnerability", self.vulnerabilities),
            ("attack", self.attacks),
        ]:
            if len(set(labels)) != len(labels):
                raise ModelError(f"layer {self.name}: {what} labels are not unique")
        if len(self.attacks) != n:
            raise ModelError(f"layer {self.name}: attack map is not a bijection")
        surface: dict[str, frozenset[str]] = {}
        for c in self.configurations:
            exposed = frozenset(self.surface.get(c, frozenset()))
            unknown = exposed - set(self.vulnerabilities)
            if unknown:
                raise ModelError(f"layer {self.name}: {c} exposes unknown {sorted(unknown)}")
            surface[c] = exposed
        extra = set(self.surface) - set(self.configurations)
        if extra:
            raise ModelError(f"layer {self.name}: surface for unknown {sorted(extra)}")
        dmg = np.array(self.damage, dtype=np.float64)
        if dmg.shape != (n, m):
            raise ModelError(f"layer {self.name}: damage matrix {dmg.shape} is not {(n, m)}")
        if not np.all(np.isfinite(dmg)) or np.min(dmg) < 0:
            raise ModelError(f"layer {self.name}: damage must be finite and non-negative")
        dmg.setflags(write=False)
        object.__setattr__(self, "surface", surface)
        object.__setattr__(self, "damage", dmg)

    @property
    def cost_matrix(self) -> FloatArray:
        "Effective damage with configurations as rows and attacks as columns."
        exposed = np.array(
            [[v in self.surface[c] for v in self.vulnerabilities] for c in self.configurations],
            dtype=np.float64,
        )
        return exposed * self.damage.T

    def matrix_game(self) -> MatrixGame:
        return MatrixGame(self.cost_matrix)

    def configuration_index(self, c: str | int) -> int:
        return _label_index(self.configurations, c, "configuration")

    def attack_index(self, a: str | int) -> int:
        return _label_index(self.attacks, a, "attack")


def _label_index(labels: Sequence[str], x: str | int, what: str) -> int:
    if isinstance(x, str):
        try:
            return labels.index(x)
        except ValueError:
            raise ModelError(f"unknown {what} {x!r}")
    if not 0 <= x < len(labels):
        raise ModelError(f"{what} index {x} out of range")
    return int(x)


def damage(g: LayerGame, a: str | int, c: str | int) -> float:
    """
    Damage of an attack against a configuration: the damage entry if the
    attacked vulnerability is on the configuration's surface, else 0.
    """
    i = g.attack_index(a)
    j = g.configuration_index(c)
    if g.vulnerabilities[i] in g.surface[g.configurations[j]]:
        return float(g.damage[i, j])
    return 0.0


def expected_cost(
    g: LayerGame, f: ProbabilityVector | ArrayLike, g_strat: ProbabilityVector | ArrayLike
) -> float:
    "Expected damage under mixed configuration and attack policies."
    x = as_probability(f).weights
    y = as_probability(g_strat).weights
    cost = g.cost_matrix
    if (len(x), len(y)) != cost.shape:
        raise ModelError(f"policies of sizes {len(x)}, {len(y)} do not fit layer {cost.shape}")
    return float(x @ cost @ y)


def risk_update(estimates: ArrayLike, played: int, observed: float, rate: float) -> FloatArray:
    """
    Move the played action's risk estimate toward the observed payoff.  Other
    estimates are unchanged.
    """
    if not 0 < rate <= 1:
        raise ContractError(f"risk learning rate {rate} not in (0, 1]")
    est = np.array(estimates, dtype=np.float64)
    est[played] += rate * (observed - est[played])
    return est


def switching_cost(
    f_t: ProbabilityVector | ArrayLike, f_next: ProbabilityVector | ArrayLike
) -> float:
    "Relative entropy of the new policy with respect to the old one."
    old = as_probability(f_t).weights
    new = as_probability(f_next).weights
    pos = new > 0
    if np.any(old[pos] == 0):
        raise DomainError("new policy puts mass outside the old policy's support")
    return float(np.sum(new[pos] * np.log(new[pos] / old[pos])))


def _closed_form(
    policy: FloatArray, risks: FloatArray, eps: float | FloatArray
) -> tuple[FloatArray, FloatArray]:
    "Entropy-regularized update along the last axis."
    with np.errstate(divide="ignore"):
        expo = np.where(policy > 0, -risks / eps, -np.inf)
    lse = logsumexp(expo, axis=-1, b=policy, keepdims=True)
    return policy * np.exp(expo - lse), np.squeeze(eps * lse, axis=-1)


def closed_form_update(
    policy: ProbabilityVector | ArrayLike, risks: ArrayLike, eps: float
) -> tuple[ProbabilityVector, float]:
    """
    Solve the entropy-regularized policy program in closed form.

    Args:
        policy: the current policy.
        risks: the estimated risk of each action.
        eps: the entropy weight.

    Returns:
        The updated policy and the optimal objective value.
    """
    if eps <= 0:
        raise DomainError(f"entropy weight {eps} must be positive")
    w = as_probability(policy).weights
    r = np.asarray(risks, dtype=np.float64)
    if r.shape != w.shape:
        raise ModelError(f"risk estimates {r.shape} do not match policy {w.shape}")
    new, value = _closed_form(w, r, eps)
    return ProbabilityVector(new), float(value)


def policy_learning_step(
    policy: ProbabilityVector | ArrayLike, risks: ArrayLike, eps: float, lam: float
) -> ProbabilityVector:
    "Move ``lam`` of the way from a policy toward its closed-form update."
    if not 0 <= lam <= 1:
        raise DomainError(f"policy learning rate {lam} not in [0, 1]")
    w = as_probability(policy).weights
    target, _ = closed_form_update(w, risks, eps)
    return ProbabilityVector((1 - lam) * w + lam * target.weights)


@dataclass(frozen=True, eq=False)
class LearnerState:
    """
    One side's learning state.
    """

    policy: ProbabilityVector
    risks: FloatArray
    step: int = 0
    "Number of steps taken so far."
    entropy: EntropySchedule = field(default_factory=EntropySchedule)
    policy_rate: RateSchedule = field(default_factory=lambda: RateSchedule.harmonic(1.0))
    risk_rate: RateSchedule = field(default_factory=lambda: RateSchedule.power(0.6))

    def __post_init__(self):
        risks = np.array(self.risks, dtype=np.float64)
        if risks.shape != (len(self.policy),) or not np.all(np.isfinite(risks)):
            raise ContractError("risk estimates must be finite and match the policy")
        object.__setattr__(self, "risks", risks)

    @classmethod
    def initial(cls, n: int, **kwargs: object) -> LearnerState:
        "A uniform policy with zero risk estimates."
        return cls(ProbabilityVector.uniform(n), np.zeros(n), **kwargs)  # type: ignore

    @property
    def epsilon(self) -> float:
        return self.entropy(self.step)


@dataclass(frozen=True, eq=False)
class CoupledTrajectory:
    """
    Recorded coupled learning run.  Row ``i`` of every array describes step
    ``steps[i]`` after both sides have updated.
    """

    steps: IntArray
    defender_actions: IntArray
    attacker_actions: IntArray
    payoffs: FloatArray
    defender_policy: FloatArray
    attacker_policy: FloatArray
    defender_risks: FloatArray
    attacker_risks: FloatArray
    defender: LearnerState
    "Final defender state."
    attacker: LearnerState
    "Final attacker state."
    diagnostics: dict[str, float]
    "Final distance to the saddle point (``spe_distance``) and saddle gap (``saddle_gap``)."


def saddle_diagnostics(
    game: LayerGame, f: ArrayLike, g: ArrayLike, spe: tuple[FloatArray, FloatArray] | None = None
) -> dict[str, float]:
    """
    Distance of a policy pair to the LP saddle point and its saddle gap.
    """
    cost = game.cost_matrix
    if spe is None:
        x, y, _v = solve_zero_sum(MatrixGame(cost))
        spe = (x.weights, y.weights)
    fa = np.asarray(f, dtype=np.float64)
    ga = np.asarray(g, dtype=np.float64)
    dist = max(float(np.max(np.abs(fa - spe[0]))), float(np.max(np.abs(ga - spe[1]))))
    gap = float(np.max(fa @ cost) - np.min(cost @ ga))
    return {"spe_distance": dist, "saddle_gap": gap}


def _sample_rows(policies: FloatArray, u: FloatArray) -> FloatArray:
    "Inverse-CDF sampling of one index per row."
    idx = np.sum(np.cumsum(policies, axis=1) <= u[:, None], axis=1)
    return np.minimum(idx, policies.shape[1] - 1)


def run_coupled_replications(
    game: LayerGame,
    defender: LearnerState,
    attacker: LearnerState,
    steps: int,
    rngs: Sequence[RandomSource],
    *,
    noise: float = 0.0,
    record_every: int = 1,
) -> list[CoupledTrajectory]:
    """
    Run independent coupled learning replications in lockstep, one random
    source per replication.  Each replication is identical to a
    :func:`run_coupled_learning` run with the same random source.

    Args:
        game: the layer game.
        defender: the defender's starting state.
        attacker: the attacker's starting state.
        steps: number of learning steps.
        rngs: one random source per replication.
        noise: half-width of uniform payoff observation noise.
        record_every: record every ``record_every``-th step.
    """
    if steps < 0 or record_every < 1:
        raise ContractError("step count must be non-negative and record stride positive")
    if noise < 0:
        raise DomainError("noise half-width must be non-negative")
    cost = game.cost_matrix
    m, n = cost.shape
    if len(defender.policy) != m or len(attacker.policy) != n:
        raise ModelError(f"learner sizes do not fit the {m}x{n} layer {game.name}")
    nrep = len(rngs)

    # draw all randomness up front, per replication, in a fixed order
    draws = np.stack([rng.random((steps, 2)) for rng in rngs]) if nrep else np.zeros((0, steps, 2))
    noises = None
    if noise > 0:
        noises = np.stack([rng.uniform(-noise, noise, steps) for rng in rngs])

    f = np.tile(defender.policy.weights, (nrep, 1))
    g = np.tile(attacker.policy.weights, (nrep, 1))
    rs = np.tile(defender.risks, (nrep, 1))
    ra = np.tile(attacker.risks, (nrep, 1))
    rows = np.arange(nrep)

    nrec = steps // record_every
    rec_steps = np.zeros(nrec, dtype=np.int64)
    rec_c = np.zeros((nrep, nrec), dtype=np.int64)
    rec_a = np.zeros((nrep, nrec), dtype=np.int64)
    rec_pay = np.zeros((nrep, nrec))
    rec_f = np.zeros((nrep, nrec, m))
    rec_g = np.zeros((nrep, nrec, n))
    rec_rs = np.zeros((nrep, nrec, m))
    rec_ra = np.zeros((nrep, nrec, n))

    ts = defender.step
    ta = attacker.step
    for i in range(steps):
        ts += 1
        ta += 1
        c = _sample_rows(f, draws[:, i, 0])
        a = _sample_rows(g, draws[:, i, 1])
        pay = cost[c, a]
        if noises is not None:
            pay = pay + noises[:, i]

        rs[rows, c] += defender.risk_rate(ts) * (pay - rs[rows, c])
        ra[rows, a] += attacker.risk_rate(ta) * (-pay - ra[rows, a])

        lam_s = defender.policy_rate(ts)
        lam_a = attacker.policy_rate(ta)
        f_new, _ = _closed_form(f, rs, defender.entropy(ts))
        g_new, _ = _closed_form(g, ra, attacker.entropy(ta))
        f = (1 - lam_s) * f + lam_s * f_new
        g = (1 - lam_a) * g + lam_a * g_new

        if (i + 1) % record_every == 0:
            j = (i + 1) // record_every - 1
            rec_steps[j] = ts
            rec_c[:, j] = c
            rec_a[:, j] = a
            rec_pay[:, j] = pay
            rec_f[:, j] = f
            rec_g[:, j] = g
            rec_rs[:, j] = rs
            rec_ra[:, j] = ra

    x, y, value = solve_zero_sum(MatrixGame(cost))
    spe = (x.weights, y.weights)
    results: list[CoupledTrajectory] = []
    for r in range(nrep):
        diag = saddle_diagnostics(game, f[r], g[r], spe)
        diag["value"] = value
        results.append(
            CoupledTrajectory(
                rec_steps,
                rec_c[r],
                rec_a[r],
                rec_pay[r],
                rec_f[r],
                rec_g[r],
                rec_rs[r],
                rec_ra[r],
                replace(defender, policy=ProbabilityVector(f[r]), risks=rs[r].copy(), step=ts),
                replace(attacker, policy=ProbabilityVector(g[r]), risks=ra[r].copy(), step=ta),
                diag,
            )
        )
    if nrep:
        _log.debug(
            "layer %s: %d replications of %d steps, mean SPE distance %.4f",
            game.name,
            nrep,
            steps,
            np.mean([t.diagnostics["spe_distance"] for t in results]),
        )
    return results


def run_coupled_learning(
    game: LayerGame,
    defender: LearnerState,
    attacker: LearnerState,
    steps: int,
    rng: RandomSource,
    *,
    noise: float = 0.0,
    record_every: int = 1,
) -> CoupledTrajectory:
    """
    Run distributed learning on one layer.  Each step, both sides sample their
    own actions, observe only the realized damage, update the played action's
    risk estimate, and take a policy learning step.

    Args:
        game: the layer game.
        defender: the defender's starting state.
        attacker: the attacker's starting state.
        steps: number of learning steps.
        rng: the random source.
        noise: half-width of uniform payoff observation noise.
        record_every: record every ``record_every``-th step.
    """
    return run_coupled_replications(
        game, defender, attacker, steps, [rng], noise=noise, record_every=record_every
    )[0]


def ode_rhs(
    f: ArrayLike,
    g: ArrayLike,
    risk_s: ArrayLike,
    risk_a: ArrayLike,
    eps_s: float,
    eps_a: float,
    game: LayerGame,
    *,
    sign: RiskSign = RiskSign.TRACKING,
    risk_timescale: float = 1.0,
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """
    Right-hand sides of the ODE counterpart of the coupled learning dynamics.
    Arrays may carry leading batch axes.

    Args:
        f: defender policies.
        g: attacker policies.
        risk_s: defender risk estimates.
        risk_a: attacker risk estimates (negated damage).
        eps_s: defender entropy weight.
        eps_a: attacker entropy weight.
        game: the layer game.
        sign: sign convention for the risk equations.
        risk_timescale: multiplier on the risk equations (1 for the plain ODE).

    Returns:
        Time derivatives of ``f``, ``g``, ``risk_s`` and ``risk_a``.
    """
    if eps_s <= 0 or eps_a <= 0:
        raise DomainError("entropy weights must be positive")
    cost = game.cost_matrix
    fa = np.asarray(f, dtype=np.float64)
    ga = np.asarray(g, dtype=np.float64)
    rs = np.asarray(risk_s, dtype=np.float64)
    ra = np.asarray(risk_a, dtype=np.float64)
    f_cf, _ = _closed_form(fa, rs, eps_s)
    g_cf, _ = _closed_form(ga, ra, eps_a)
    conf_cost = ga @ cost.T
    attack_cost = fa @ cost
    if sign == RiskSign.TRACKING:
        ds = conf_cost - rs
        da = -attack_cost - ra
    else:
        ds = -conf_cost - rs
        da = attack_cost - ra
    return f_cf - fa, g_cf - ga, risk_timescale * ds, risk_timescale * da


@dataclass(frozen=True, eq=False)
class OdeResult:
    """
    Final state (and optional sampled path) of an ODE integration.
    """

    f: FloatArray
    g: FloatArray
    risk_s: FloatArray
    risk_a: FloatArray
    path_f: FloatArray | None = None
    path_g: FloatArray | None = None


def integrate_ode(
    game: LayerGame,
    f0: ArrayLike,
    g0: ArrayLike,
    risk_s0: ArrayLike | None = None,
    risk_a0: ArrayLike | None = None,
    *,
    steps: int,
    dt: float = 1e-3,
    entropy: EntropySchedule | None = None,
    sign: RiskSign = RiskSign.TRACKING,
    risk_timescale: float = 1.0,
    record_every: int = 0,
) -> OdeResult:
    """
    Integrate the learning ODE with fixed-step forward Euler, annealing the
    entropy weight once per step.  Starting points may be batched along
    leading axes.

    Args:
        game: the layer game.
        f0: initial defender policies.
        g0: initial attacker policies.
        risk_s0: initial defender risks (default zero).
        risk_a0: initial attacker risks (default zero).
        steps: number of Euler steps.
        dt: the step size.
        entropy: entropy annealing schedule for both sides.
        sign: risk sign convention.
        risk_timescale: multiplier on the risk equations.
        record_every: if positive, sample the policy path at this stride.
    """
    if dt <= 0:
        raise DomainError("step size must be positive")
    if entropy is None:
        entropy = EntropySchedule()
    f = np.array(f0, dtype=np.float64)
    g = np.array(g0, dtype=np.float64)
    rs = np.zeros_like(f) if risk_s0 is None else np.array(risk_s0, dtype=np.float64)
    ra = np.zeros_like(g) if risk_a0 is None else np.array(risk_a0, dtype=np.float64)
    path_f: list[FloatArray] = []
    path_g: list[FloatArray] = []
    for i in range(steps):
        eps = entropy(i)
        df, dg, drs, dra = ode_rhs(
            f, g, rs, ra, eps, eps, game, sign=sign, risk_timescale=risk_timescale
        )
        f = f + dt * df
        g = g + dt * dg
        rs = rs + dt * drs
        ra = ra + dt * dra
        if record_every > 0 and (i + 1) % record_every == 0:
            path_f.append(f.copy())
            path_g.append(g.copy())
    _log.debug("integrated %d Euler steps of size %g", steps, dt)
    return OdeResult(
        f,
        g,
        rs,
        ra,
        np.stack(path_f) if path_f else None,
        np.stack(path_g) if path_g else None,
    )
