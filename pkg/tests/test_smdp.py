# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

import math

import numpy as np

import hypothesis.strategies as st
from hypothesis import given
from pytest import approx, fixture, mark, raises, warns

from defenselab.errors import (
    ContractError,
    ConvergenceWarning,
    DomainError,
    ModelError,
    UnsupportedScheduleError,
)
from defenselab.kernel import random_source
from defenselab.smdp import (
    ActionSpec,
    EquivalentMdp,
    Experience,
    Outcome,
    QTable,
    SmdpModel,
    SojournSpec,
    StateSpec,
    build_demo_honeynet,
    check_regularity,
    epsilon_greedy,
    equivalent_mdp,
    known_values,
    laplace_sojourn,
    late_variance,
    learning_rate,
    policy_evaluation,
    q_star,
    q_update,
    settle_time,
    simulate_engagement,
    value_iterate,
)

def three_state(discount: float = 1.0) -> SmdpModel:
    "Two live states and an absorbing end, all with unit-rate sojourns."
    unit = SojournSpec.exponential(1.0)
    end = StateSpec("END", (ActionSpec("null", (Outcome("END", 1.0, 0.0, unit),)),), True)
    a = StateSpec(
        "A",
        (
            ActionSpec(
                "stay",
                (Outcome("A", 0.5, 1.0), Outcome("B", 0.4, 1.0), Outcome("END", 0.1, 1.0)),
            ),
            ActionSpec("move", (Outcome("B", 0.8), Outcome("END", 0.2)), 2.0),
        ),
    )
    b = StateSpec(
        "B",
        (
            ActionSpec(
                "stay",
                (Outcome("A", 0.5, -1.0), Outcome("B", 0.4, -1.0), Outcome("END", 0.1, -1.0)),
            ),
            ActionSpec("move", (Outcome("A", 0.9, 2.0), Outcome("END", 0.1, 2.0)), -1.0),
        ),
    )
    return SmdpModel((a, b, end), discount, 10.0)


@fixture(scope="module")
def honeynet() -> SmdpModel:
    return build_demo_honeynet()


@fixture(scope="module")
def honeynet_mdp(honeynet: SmdpModel) -> EquivalentMdp:
    return equivalent_mdp(honeynet)


def test_exponential_sojourn():
    s = SojournSpec.exponential(1.0)
    assert s.laplace(1.0) == approx(0.5)
    assert s.laplace(0.0) == 1.0
    assert s.discounted_duration(1.0) == approx(0.5)
    assert s.discounted_duration(0.0) == 1.0
    assert s.cdf(0.0) == 0.0
    assert s.cdf(1.0) == approx(1 - math.exp(-1))


def test_deterministic_sojourn():
    s = SojournSpec.deterministic(2.0)
    assert s.laplace(0.5) == approx(math.exp(-1))
    assert s.mean == 2.0
    assert s.cdf(1.9) == 0.0
    assert s.cdf(2.0) == 1.0


def test_uniform_sojourn():
    s = SojournSpec.uniform(0.0, 2.0)
    assert s.laplace(1.0) == approx((1 - math.exp(-2)) / 2)
    assert s.mean == 1.0
    assert s.cdf(0.5) == approx(0.25)
    assert s.cdf(3.0) == 1.0
    assert laplace_sojourn(s, 0.0) == 1.0


@mark.parametrize(
    "family,params",
    [
        ("exponential", (0.0,)),
        ("exponential", (1.0, 2.0)),
        ("deterministic", (-1.0,)),
        ("uniform", (2.0, 1.0)),
        ("gamma", (1.0,)),
        ("exponential", (math.inf,)),
    ],
)
def test_sojourn_rejects(family, params):
    with raises(DomainError):
        SojournSpec(family, params)


def test_negative_discount():
    with raises(DomainError):
        SojournSpec.exponential(1.0).laplace(-0.5)


@given(
    st.sampled_from(
        [SojournSpec.exponential(0.3), SojournSpec.deterministic(1.5), SojournSpec.uniform(0.5, 3)]
    ),
    st.floats(1e-3, 50),
)
def test_sojourn_transform_bounds(spec: SojournSpec, gamma: float):
    z = spec.laplace(gamma)
    assert 0 <= z <= 1
    assert spec.discounted_duration(gamma) == approx((1 - z) / gamma, rel=1e-6, abs=1e-12)
    assert spec.discounted_duration(gamma) <= spec.mean + 1e-12


def test_sojourn_samples_mean():
    rng = random_source(5)
    s = SojournSpec.uniform(1.0, 3.0)
    draws = [s.sample(rng) for _i in range(20_000)]
    assert np.mean(draws) == approx(2.0, abs=0.03)
    assert min(draws) >= 1.0


def test_equivalent_mdp():
    equiv = equivalent_mdp(three_state())
    assert equiv.states == ("A", "B", "END")
    assert equiv.actions[2] == ("null",)
    assert list(equiv.mask[2]) == [True, False]
    assert np.all(equiv.z[equiv.tr > 0] == approx(0.5))
    # immediate reward plus the rate over the discounted duration
    assert equiv.r[0, 1, 1] == approx(1.0)
    assert equiv.r[1, 1, 0] == approx(1.5)
    assert equiv.expected_reward[1, 0] == approx(-1.0)
    assert equiv.contraction_modulus == approx(0.5)
    assert list(equiv.absorbing) == [False, False, True]


def test_undiscounted_rejected():
    with raises(UnsupportedScheduleError):
        equivalent_mdp(three_state(0.0))


def test_reward_bound():
    big = StateSpec("A", (ActionSpec("go", (Outcome("A", 1.0, 50.0),)),))
    with raises(ModelError, match="exceeds bound"):
        equivalent_mdp(SmdpModel((big,), 1.0, 10.0))


def test_model_validation():
    unit = SojournSpec.exponential(1.0)
    end = StateSpec("END", (ActionSpec("null", (Outcome("END", 1.0, 0.0, unit),)),), True)
    short = StateSpec("A", (ActionSpec("go", (Outcome("END", 0.9),)),))
    with raises(ModelError, match="sum to 0.9"):
        SmdpModel((short, end), 1.0, 10.0)
    lost = StateSpec("A", (ActionSpec("go", (Outcome("Z", 1.0),)),))
    with raises(ModelError, match="unknown target"):
        SmdpModel((lost, end), 1.0, 10.0)
    paid = StateSpec("END", (ActionSpec("null", (Outcome("END", 1.0, 1.0),)),), True)
    with raises(ModelError, match="zero reward"):
        SmdpModel((paid,), 1.0, 10.0)
    ok = StateSpec("A", (ActionSpec("go", (Outcome("END", 1.0),)),))
    with raises(ModelError, match="absorbing"):
        SmdpModel((ok, end), 1.0, 10.0, initial={"END": 1.0})
    with raises(ModelError):
        SmdpModel((ok, ok, end), 1.0, 10.0)


def test_model_lookup():
    m = three_state()
    assert m.state_index("B") == 1
    assert m.action_index("B", "move") == 1
    with raises(ModelError):
        m.state("Q")
    with raises(ModelError):
        m.action_index("A", "jump")
    assert m.initial == {"A": 1.0}


def test_regularity(honeynet: SmdpModel):
    report = check_regularity(honeynet, 0.01, 0.05)
    assert report.passed


def test_regularity_violation():
    instant = SojournSpec.deterministic(0.0)
    loop = StateSpec("A", (ActionSpec("spin", (Outcome("A", 1.0, 0.0, instant),)),))
    report = check_regularity(SmdpModel((loop,), 1.0, 10.0), 0.1, 0.1)
    assert not report.passed
    assert report.violations == [("A", "spin", 1.0)]


def test_regularity_contracts(honeynet: SmdpModel):
    with raises(ContractError):
        check_regularity(honeynet, 0.0, 0.5)
    with raises(ContractError):
        check_regularity(honeynet, 0.1, 1.0)


def test_no_contraction():
    instant = SojournSpec.deterministic(0.0)
    loop = StateSpec("A", (ActionSpec("spin", (Outcome("A", 1.0, 1.0, instant),)),))
    equiv = equivalent_mdp(SmdpModel((loop,), 1.0, 10.0))
    with raises(DomainError, match="state A, action spin"):
        value_iterate(equiv)


def test_demo_shape(honeynet: SmdpModel, honeynet_mdp: EquivalentMdp):
    assert len(honeynet.states) == 13
    assert honeynet.states[-1].absorbing
    assert honeynet_mdp.actions[0] == ("a_E", "a_P", "a_L", "a_H")
    assert honeynet_mdp.actions[11] == ("a_E", "a_A")
    assert honeynet_mdp.contraction_modulus == approx(10 / 11)
    assert np.all(honeynet_mdp.known[:12, 0])
    assert not np.any(honeynet_mdp.known[:, 1:])


def test_demo_values(honeynet_mdp: EquivalentMdp):
    plan = value_iterate(honeynet_mdp)
    v = plan.values
    assert plan.residual <= 1e-10
    assert v[9] == approx(5.10, abs=0.01)
    assert v[11] == approx(-7.92, abs=0.01)
    assert v[12] == 0.0
    assert np.all(v[:11] > 0)
    # only the database node is worth the high engagement level
    assert int(np.argmax(v[:11])) == 9


def test_demo_policy(honeynet_mdp: EquivalentMdp):
    plan = value_iterate(honeynet_mdp)
    actions = plan.greedy_actions(honeynet_mdp)
    assert actions["s10"] == "a_H"
    for s in ("s1", "s2", "s8"):
        assert actions[s] == "a_L"
    for s in ("s3", "s4", "s5", "s6", "s7", "s9", "s11"):
        assert actions[s] == "a_P"
    assert actions["s12"] == "a_A"


def test_value_iteration_limit(honeynet_mdp: EquivalentMdp):
    with warns(ConvergenceWarning):
        plan = value_iterate(honeynet_mdp, max_iter=3)
    assert plan.iterations == 3
    assert plan.residual > 1e-10


def test_policy_evaluation_matches(honeynet_mdp: EquivalentMdp):
    plan = value_iterate(honeynet_mdp)
    exact = policy_evaluation(honeynet_mdp, plan.policy)
    assert exact == approx(plan.values, abs=1e-8)
    with raises(ModelError):
        policy_evaluation(honeynet_mdp, [1] * 13)


def test_value_iteration_residuals(honeynet_mdp: EquivalentMdp):
    plan = value_iterate(honeynet_mdp)
    res = plan.residuals
    assert plan.iterations == len(res)
    # each sweep contracts by at most the modulus
    assert np.all(res[1:] <= res[:-1] * honeynet_mdp.contraction_modulus + 1e-12)


def test_known_values(honeynet: SmdpModel, honeynet_mdp: EquivalentMdp):
    q = known_values(honeynet, honeynet_mdp)
    assert q.q[0, 0] == approx(-1.0)
    assert q.q[11, 0] == approx(-9.0)
    assert np.all(q.q[:, 1:] == 0.0)
    assert np.all(q.counts == 0)


def test_learning_rate():
    assert learning_rate(1, 1.0) == 1.0
    assert learning_rate(3, 1.0) == approx(1 / 3)
    assert learning_rate(1, 100.0) == 1.0
    assert learning_rate(101, 100.0) == approx(0.5)
    with raises(ContractError):
        learning_rate(0, 1.0)
    with raises(ContractError):
        learning_rate(1, 0.0)


def test_q_update():
    equiv = equivalent_mdp(three_state())
    q = QTable.zeros(equiv)
    q.q[1, :] = [0.5, 2.0]
    q.counts[0, 0] = 1
    sample = Experience(0, 0, 1, 0.5, 1.0, 2.0)
    nq = q_update(q, sample, 1.0, 1.0)
    decay = math.exp(-0.5)
    assert nq.q[0, 0] == approx(1.0 + 2.0 * (1 - decay) + decay * 2.0)
    assert q.q[0, 0] == 0.0


def test_q_update_partial_step():
    equiv = equivalent_mdp(three_state())
    q = QTable.zeros(equiv)
    q.q[0, 1] = 4.0
    q.counts[0, 1] = 3
    sample = Experience(0, 1, 2, 1.0, 0.0, 0.0)
    nq = q_update(q, sample, 1.0, 1.0)
    # rate 1/3 toward a target of zero
    assert nq.q[0, 1] == approx(4.0 * 2 / 3)


def test_q_update_unvisited():
    equiv = equivalent_mdp(three_state())
    with raises(ContractError):
        q_update(QTable.zeros(equiv), Experience(0, 0, 1, 1.0, 0.0, 0.0), 1.0, 1.0)


def test_epsilon_greedy(rng: np.random.Generator):
    equiv = equivalent_mdp(three_state())
    q = QTable.zeros(equiv)
    q.q[0] = [1.0, 3.0]
    assert all(epsilon_greedy(q, 0, 0.0, rng) == 1 for _i in range(50))
    only = np.array([True, False])
    assert all(epsilon_greedy(q, 0, 1.0, rng, only) == 0 for _i in range(50))
    picks = {epsilon_greedy(q, 0, 1.0, rng) for _i in range(200)}
    assert picks == {0, 1}
    # missing actions are never picked
    assert all(epsilon_greedy(q, 2, 1.0, rng) == 0 for _i in range(50))
    with raises(ContractError):
        epsilon_greedy(q, 0, 1.5, rng)


def test_fixed_policy_engagement(honeynet: SmdpModel, honeynet_mdp: EquivalentMdp):
    plan = value_iterate(honeynet_mdp)
    run = simulate_engagement(honeynet, 500, random_source(9), policy=plan.policy)
    log = run.log
    assert len(log) == 500
    assert run.q is None
    assert np.all(np.isnan(log.q_value))
    assert log.state[0] == 11
    assert np.all(log.action == plan.policy[log.state])
    # absorption restarts at the normal zone without consuming an epoch
    ends = np.flatnonzero(log.next_state[:-1] == 12)
    assert np.all(log.state[ends + 1] == 11)
    assert np.all(np.diff(log.episode) >= 0)
    assert not np.any(log.state == 12)


def test_engagement_deterministic(honeynet: SmdpModel):
    a = simulate_engagement(honeynet, 300, random_source(2), watch=("s12", "a_A"))
    b = simulate_engagement(honeynet, 300, random_source(2), watch=("s12", "a_A"))
    assert np.array_equal(a.log.state, b.log.state)
    assert np.array_equal(a.log.reward, b.log.reward)
    assert a.watched is not None and b.watched is not None
    assert np.array_equal(a.watched, b.watched)


def test_engagement_keeps_known(honeynet: SmdpModel):
    run = simulate_engagement(honeynet, 2000, random_source(4))
    assert run.q is not None
    # known ejection values are never updated
    assert run.q.q[11, 0] == approx(-9.0)
    assert run.q.q[0, 0] == approx(-1.0)
    assert int(np.sum(run.q.counts)) == 2000


def test_engagement_contracts(honeynet: SmdpModel):
    with raises(ContractError):
        simulate_engagement(honeynet, -1, random_source(1))
    with raises(ContractError):
        simulate_engagement(honeynet, 10, random_source(1), epsilon=2.0)
    with raises(ContractError):
        simulate_engagement(honeynet, 10, random_source(1), kc=0.0)
    with raises(ContractError):
        simulate_engagement(
            honeynet, 10, random_source(1), policy=[1] * 11 + [1, 0], watch=("s12", "a_A")
        )
    with raises(ModelError):
        simulate_engagement(honeynet, 10, random_source(1), policy=[1, 1])


def test_realized_rewards(honeynet: SmdpModel):
    log = simulate_engagement(honeynet, 50, random_source(8)).log
    got = log.realized_rewards(1.0)
    expected = log.reward + log.rate * (1 - np.exp(-log.sojourn))
    assert got == approx(expected)


def test_settle_time():
    assert settle_time([0.0, 5.0, 9.5, 10.2, 9.9], 10.0) == 3.0
    assert settle_time([10.0, 10.0], 10.0) == 1.0
    assert settle_time([10.0, 0.0], 10.0) == math.inf
    assert settle_time([], 10.0) == math.inf


def test_late_variance():
    assert late_variance([9.0, 0.0, 1.0, 1.0, 1.0, 1.0], 0.5) == 0.0
    assert late_variance([0.0, 2.0], 1.0) == approx(1.0)
    with raises(ContractError):
        late_variance([1.0], 0.0)


@mark.slow
def test_q_learning_converges():
    m = three_state()
    equiv = equivalent_mdp(m)
    target = q_star(equiv, value_iterate(equiv).values)
    run = simulate_engagement(m, 100_000, random_source(20240601), epsilon=0.5)
    assert run.q is not None
    assert run.q.q[:2] == approx(target[:2], abs=0.1)


RATE_CONSTANTS = [0.1, 1.0, 100.0]


@fixture(scope="module")
def rate_runs(honeynet: SmdpModel) -> dict[float, np.ndarray]:
    runs = {}
    for kc in RATE_CONSTANTS:
        eng = simulate_engagement(honeynet, 20_000, random_source(77), kc=kc, watch=("s12", "a_A"))
        assert eng.watched is not None
        runs[kc] = np.asarray(eng.watched)
    return runs


@mark.slow
@mark.parametrize("kc", RATE_CONSTANTS)
def test_rate_constant_series(rate_runs, kc):
    series = rate_runs[kc]
    assert len(series) == 20_000
    assert np.all(np.isfinite(series))


@mark.slow
def test_rate_constant_ordering(rate_runs, honeynet_mdp: EquivalentMdp):
    qs = q_star(honeynet_mdp, value_iterate(honeynet_mdp).values)
    target = qs[11, 1]
    small, unit, large = (rate_runs[kc] for kc in RATE_CONSTANTS)
    assert unit[-1] == approx(target, rel=0.1)
    # too small a constant stalls, too large a constant keeps jumping
    settle = [settle_time(s, target) for s in (small, unit, large)]
    assert math.isfinite(settle[1])
    assert settle[1] <= settle[0]
    assert settle[1] <= settle[2]
    assert late_variance(large) > late_variance(unit)
    assert late_variance(large) > late_variance(small)
