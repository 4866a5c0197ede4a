# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

import itertools as it

import numpy as np

import hypothesis.strategies as st
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays
from pytest import approx, fixture, mark, raises

from defenselab.bayes import (
    BehavioralStrategy,
    Belief,
    BeliefSystem,
    EquilibriumProfile,
    MultistageGame,
    StageUtility,
    StateModel,
    TypeSpace,
    consistent_beliefs,
    cumulative_utility,
    equilibrium_values,
    posterior,
    profile_values,
    restrict_types,
    simulate_episode,
    solve_pbne,
    type_pair_values,
    update_belief_history,
    update_belief_markov,
    utility_range,
    verify_pbne,
    with_perfect_recall,
)
from defenselab.errors import CapacityError, ContractError, ModelError, NoConvergenceError
from defenselab.kernel import ProbabilityVector, random_source
from defenselab.scenario import parse_scenario, shipped_scenario

MONITOR, IDLE = 0, 1
ACCESS, PROBE = 0, 1
X_ACCESS, X_PROBE = 0, 1


@fixture(scope="module")
def deception() -> MultistageGame:
    return parse_scenario(shipped_scenario("deception")).game


@fixture(scope="module")
def deception_profile(deception: MultistageGame) -> EquilibriumProfile:
    return solve_pbne(deception)


def single_stage(j1) -> MultistageGame:
    "A one-stage game with one type per player and zero-sum payoffs."
    j1 = np.asarray(j1, dtype=np.float64)
    m, n = j1.shape
    model = StateModel(
        (("x",),),
        ((tuple(f"r{i}" for i in range(m)), tuple(f"c{j}" for j in range(n))),),
        (),
    )
    table = j1.reshape(1, m, n, 1, 1)
    return MultistageGame(
        TypeSpace(("d",), ("a",)),
        (np.ones((1, 1)), np.ones((1, 1))),
        model,
        StageUtility(((table, -table),)),
    )


def test_posterior_reveals():
    p = posterior([0.6, 0.4], [0.0, 1.0], [0.5, 0.5])
    assert p.weights == approx([0.0, 1.0])


def test_posterior_bayes_rule():
    p = posterior([0.5, 0.5], [0.2, 0.6], [0.5, 0.5])
    assert p.weights == approx([0.25, 0.75])


def test_posterior_zero_probability():
    p = posterior([1.0, 0.0], [0.0, 1.0], [0.6, 0.4])
    assert p.weights == approx([0.6, 0.4])


@given(
    arrays(np.float64, 3, elements=st.floats(0.01, 1)),
    arrays(np.float64, 3, elements=st.floats(0, 1)),
)
def test_posterior_on_simplex(raw, lik):
    b = raw / raw.sum()
    p = posterior(b, lik, b)
    assert abs(np.sum(p.weights) - 1) <= 1e-9
    assert np.all(p.weights >= 0)


def test_markov_update():
    b = Belief(0, 0, 0, ProbabilityVector([0.6, 0.4]))
    kern = [[1.0, 0.0], [0.0, 1.0]]
    nb = update_belief_markov(b, kern, 1, [0.6, 0.4])
    assert nb.stage == 1
    assert nb.info == 1
    assert nb.distribution.weights == approx([0.0, 1.0])


def test_markov_update_bad_kernel():
    b = Belief(0, 0, 0, ProbabilityVector([0.6, 0.4]))
    with raises(ContractError):
        update_belief_markov(b, [[0.5, 0.4], [0.0, 1.0]], 1, [0.6, 0.4])
    with raises(ModelError):
        update_belief_markov(b, [[1.0, 0.0]], 1, [0.6, 0.4])
    with raises(ModelError):
        update_belief_markov(b, [[1.0, 0.0], [0.0, 1.0]], 2, [0.6, 0.4])


def test_history_update(deception: MultistageGame, deception_profile: EquilibriumProfile):
    d, a = deception_profile.strategies
    b = Belief(0, 0, 0, ProbabilityVector(deception.priors[0][0]))
    nb = update_belief_history(b, d, a, MONITOR, PROBE, 1, deception.priors[0][0])
    assert nb.distribution.weights == approx([0.0, 1.0])


def test_deception_stage_zero(deception_profile: EquilibriumProfile):
    d, a = deception_profile.strategies
    # attackers reveal their type with their first action
    assert a.rows(0, 0)[0] == approx([1.0, 0.0])
    assert a.rows(0, 0)[1] == approx([0.0, 1.0])
    # high-value defenders monitor, low-value defenders stay idle
    assert d.rows(0, 0)[0] == approx([1.0, 0.0])
    assert d.rows(0, 0)[1] == approx([0.0, 1.0])


def test_deception_stage_one(deception_profile: EquilibriumProfile):
    d, a = deception_profile.strategies
    for t in range(2):
        assert d.rows(1, X_ACCESS)[t][IDLE] == approx(1.0)
        assert d.rows(1, X_PROBE)[t][MONITOR] == approx(1.0)
        for x in (X_ACCESS, X_PROBE):
            assert a.rows(1, x)[t][ACCESS] == approx(1.0)


def test_deception_beliefs(deception: MultistageGame, deception_profile: EquilibriumProfile):
    beliefs = deception_profile.beliefs
    for t in range(2):
        assert beliefs.at(0, 1, X_ACCESS, t).distribution.weights == approx([1.0, 0.0])
        assert beliefs.at(0, 1, X_PROBE, t).distribution.weights == approx([0.0, 1.0])
        # the defender's action does not move the state, so attackers learn nothing
        assert beliefs.at(1, 1, X_ACCESS, t).distribution.weights == approx(
            deception.priors[1][t]
        )


def test_deception_verifies(deception: MultistageGame, deception_profile: EquilibriumProfile):
    report = verify_pbne(deception, deception_profile, 0.0)
    assert report.passed
    assert report.consistency_residual <= 1e-9
    assert report.max_gain <= 1e-8


def test_deception_values(deception: MultistageGame, deception_profile: EquilibriumProfile):
    dv, av = equilibrium_values(deception, deception_profile)
    assert dv == approx([2.2, 2.2])
    assert av == approx([11.65, 10.75])


def test_cumulative_matches_values(
    deception: MultistageGame, deception_profile: EquilibriumProfile
):
    dv, av = equilibrium_values(deception, deception_profile)
    strats = deception_profile.strategies
    for t in range(2):
        u = cumulative_utility(deception, strats, deception.priors[0][t], 0, t)
        assert u == approx(dv[t])
        u = cumulative_utility(deception, strats, deception.priors[1][t], 0, t, player=1)
        assert u == approx(av[t])


def test_consistent_beliefs_fixed_point(
    deception: MultistageGame, deception_profile: EquilibriumProfile
):
    implied = consistent_beliefs(deception, deception_profile.strategies)
    assert implied.distance(deception_profile.beliefs) <= 1e-9


def test_uniform_profile_fails(deception: MultistageGame):
    strats = (
        BehavioralStrategy.uniform(deception, 0),
        BehavioralStrategy.uniform(deception, 1),
    )
    profile = EquilibriumProfile(strats, BeliefSystem.prior(deception))
    report = verify_pbne(deception, profile, 0.0)
    assert not report.passed
    assert report.max_gain > 1.0


def test_no_convergence(deception: MultistageGame):
    with raises(NoConvergenceError) as exc:
        solve_pbne(deception, max_iter=1)
    assert isinstance(exc.value.result, EquilibriumProfile)
    assert not exc.value.report.passed
    # one sweep at each of the three step sizes
    assert exc.value.result.sweeps == 3


def test_solver_contracts(deception: MultistageGame):
    with raises(ContractError):
        solve_pbne(deception, epsilon=-0.1)
    with raises(ContractError):
        solve_pbne(deception, max_iter=0)
    with raises(ContractError):
        solve_pbne(deception, damping=0.0)


def test_zero_sum_stage():
    game = single_stage([[3.0, -1.0], [-2.0, 1.0]])
    profile = solve_pbne(game)
    d, a = profile.strategies
    assert d.rows(0, 0)[0] == approx([3 / 7, 4 / 7])
    assert a.rows(0, 0)[0] == approx([2 / 7, 5 / 7])
    dv, av = equilibrium_values(game, profile)
    assert dv[0] == approx(1 / 7)
    assert av[0] == approx(-1 / 7)


def test_perfect_recall(deception: MultistageGame):
    recall = with_perfect_recall(deception)
    assert len(recall.model.states[1]) == 4
    assert recall.model.states[1][0] == "x0/monitor,access"
    profile = solve_pbne(recall)
    assert verify_pbne(recall, profile, 0.0).passed
    dv, av = equilibrium_values(recall, profile)
    assert dv == approx([2.2, 2.2])
    assert av == approx([11.65, 10.75])


def test_perfect_recall_capacity():
    xs = tuple(("x",) for _k in range(8))
    acts = tuple((("a",), ("b",)) for _k in range(8))
    model = StateModel(xs, acts, tuple(np.zeros((1, 1, 1), dtype=np.int64) for _k in range(7)))
    zero = np.zeros((1, 1, 1, 1, 1))
    game = MultistageGame(
        TypeSpace(("d",), ("a",)),
        (np.ones((1, 1)), np.ones((1, 1))),
        model,
        StageUtility(tuple((zero, zero) for _k in range(8))),
    )
    with raises(CapacityError):
        with_perfect_recall(game)


def test_known_attacker(deception: MultistageGame):
    # an attacker known to be malicious is monitored at the final stage
    game = restrict_types(deception, attacker=["b"])
    assert game.types.attacker == ("b",)
    assert game.priors[0] == approx(np.ones((2, 1)))
    profile = solve_pbne(game)
    dv, _av = equilibrium_values(game, profile)
    assert dv == approx([4.0, 4.0])


def test_restrict_unknown_type(deception: MultistageGame):
    with raises(ModelError):
        restrict_types(deception, defender=["M"])


def test_episode(deception: MultistageGame, deception_profile: EquilibriumProfile):
    ep = simulate_episode(deception, deception_profile, 0, 1, random_source(7))
    assert list(ep.states) == [0, X_PROBE]
    assert list(ep.attacker_actions) == [PROBE, ACCESS]
    assert list(ep.defender_actions) == [MONITOR, MONITOR]
    assert list(ep.defender_payoffs) == approx([1.0, 3.0])
    assert list(ep.attacker_payoffs) == approx([10.0, 0.5])
    assert ep.defender_beliefs[0] == approx([0.6, 0.4])
    assert ep.defender_beliefs[1] == approx([0.0, 1.0])
    assert ep.attacker_beliefs[1] == approx(deception.priors[1][1])


def test_noisy_episode(deception: MultistageGame, deception_profile: EquilibriumProfile):
    ep = simulate_episode(deception, deception_profile, 1, 0, random_source(11), noisy=True)
    assert list(ep.states) == [0, X_ACCESS]
    expected = np.array([1.0, 0.0])
    assert np.all(np.abs(ep.defender_payoffs - expected) <= 0.5)


def test_episode_deterministic(deception: MultistageGame, deception_profile: EquilibriumProfile):
    e1 = simulate_episode(deception, deception_profile, 0, 0, random_source(3), noisy=True)
    e2 = simulate_episode(deception, deception_profile, 0, 0, random_source(3), noisy=True)
    assert np.array_equal(e1.defender_payoffs, e2.defender_payoffs)
    assert np.array_equal(e1.attacker_payoffs, e2.attacker_payoffs)


def test_bad_prior_shape():
    model = StateModel((("x",),), ((("a",), ("b",)),), ())
    zero = np.zeros((1, 1, 1, 1, 1))
    with raises(ModelError):
        MultistageGame(
            TypeSpace(("d",), ("a",)),
            (np.ones((1, 2)), np.ones((1, 1))),
            model,
            StageUtility(((zero, zero),)),
        )


def test_duplicate_types():
    with raises(ModelError):
        TypeSpace(("d", "d"), ("a",))


def test_strategy_rows_validated():
    with raises(ContractError):
        BehavioralStrategy([np.full((1, 1, 2), 0.7)])


def random_game(seed: int, successors: int = 2) -> MultistageGame:
    "A random two-stage game with two types and two actions per player."
    rng = np.random.default_rng(seed)
    acts = (("d0", "d1"), ("a0", "a1"))
    model = StateModel(
        (("x0",), tuple(f"y{i}" for i in range(successors))),
        (acts, acts),
        (rng.integers(0, successors, (1, 2, 2)),),
    )
    payoffs = tuple(
        (rng.uniform(-1, 1, (n, 2, 2, 2, 2)), rng.uniform(-1, 1, (n, 2, 2, 2, 2)))
        for n in (1, successors)
    )
    priors = (rng.dirichlet([1.0, 1.0], 2), rng.dirichlet([1.0, 1.0], 2))
    return MultistageGame(
        TypeSpace(("h", "l"), ("g", "b")), priors, model, StageUtility(payoffs), f"random-{seed}"
    )


def random_strategies(
    game: MultistageGame, rng: np.random.Generator
) -> tuple[BehavioralStrategy, BehavioralStrategy]:
    s1, s2 = (
        BehavioralStrategy([rng.dirichlet([1.0, 1.0], (len(xs), 2)) for xs in game.model.states])
        for _p in range(2)
    )
    return s1, s2


def grid_gain(game: MultistageGame, profile: EquilibriumProfile, player: int, t: int) -> float:
    """
    Largest gain of a deviation from the initial state, over stage-0 mixtures
    on a 0.01 grid combined with every pure plan at stage 1.
    """
    strats = profile.strategies
    x0 = game.model.initial
    belief = profile.beliefs.tables[player][0][x0, t]
    base = cumulative_utility(game, strats, belief, x0, t, player=player)
    own = strats[player]
    n1 = len(game.model.states[1])
    best = -np.inf
    for p in np.linspace(0.0, 1.0, 101):
        t0 = own.tables[0].copy()
        t0[:, t] = [p, 1.0 - p]
        for plan in it.product(range(2), repeat=n1):
            t1 = own.tables[1].copy()
            t1[:, t] = np.eye(2)[list(plan)]
            dev = BehavioralStrategy([t0, t1])
            pair = (dev, strats[1]) if player == 0 else (strats[0], dev)
            best = max(best, cumulative_utility(game, pair, belief, x0, t, player=player))
    return best - base


RANDOM_SEEDS = list(range(8))
RECALL_SEEDS = list(range(3))


def _solve(game: MultistageGame) -> tuple[EquilibriumProfile, bool]:
    try:
        return solve_pbne(game, 0.0, 200), True
    except NoConvergenceError as e:
        return e.result, False


@fixture(scope="module")
def random_solutions() -> dict[int, tuple[MultistageGame, EquilibriumProfile, bool]]:
    out = {}
    for seed in RANDOM_SEEDS:
        game = random_game(seed)
        out[seed] = (game, *_solve(game))
    return out


@fixture(scope="module")
def recall_solutions() -> dict[int, tuple[MultistageGame, EquilibriumProfile, bool]]:
    out = {}
    for seed in RECALL_SEEDS:
        game = with_perfect_recall(random_game(seed))
        out[seed] = (game, *_solve(game))
    return out


@mark.parametrize("seed", RANDOM_SEEDS)
def test_gains_match_grid_search(random_solutions, seed):
    game, profile, converged = random_solutions[seed]
    report = verify_pbne(game, profile, 0.0)
    for p, t in it.product(range(2), range(2)):
        gain = grid_gain(game, profile, p, t)
        assert report.gains[p][0][0, t] == approx(gain, abs=1e-9)
        if converged:
            assert gain <= 0.02
    assert report.passed == converged


@mark.parametrize("seed", RECALL_SEEDS)
def test_recall_gains_match_grid_search(recall_solutions, seed):
    game, profile, converged = recall_solutions[seed]
    report = verify_pbne(game, profile, 0.0)
    for p, t in it.product(range(2), range(2)):
        gain = grid_gain(game, profile, p, t)
        assert report.gains[p][0][0, t] == approx(gain, abs=1e-9)
        if converged:
            assert gain <= 0.02


def test_random_games_solve(random_solutions):
    solved = [seed for seed, (_g, _p, ok) in random_solutions.items() if ok]
    assert solved
    for seed in solved:
        game, profile, _ok = random_solutions[seed]
        assert verify_pbne(game, profile, 0.0).passed


def test_uniform_gains_match_grid_search():
    game = random_game(5, successors=3)
    strats = (BehavioralStrategy.uniform(game, 0), BehavioralStrategy.uniform(game, 1))
    profile = EquilibriumProfile(strats, consistent_beliefs(game, strats))
    report = verify_pbne(game, profile, 0.0)
    for p, t in it.product(range(2), range(2)):
        assert report.gains[p][0][0, t] == approx(grid_gain(game, profile, p, t), abs=1e-9)
    assert report.max_gain > 0


@mark.parametrize("seed", range(3))
def test_slack_covers_range(seed):
    game = random_game(seed)
    eps = utility_range(game)
    profile = solve_pbne(game, eps)
    assert profile.sweeps == 1
    assert verify_pbne(game, profile, eps).passed


@mark.parametrize("seed", range(5))
def test_cumulative_utility_enumeration(seed):
    game = random_game(seed, successors=3)
    rng = np.random.default_rng(seed + 100)
    s1, s2 = random_strategies(game, rng)
    f = game.model.transitions[0]
    for player, t in it.product(range(2), range(2)):
        belief = rng.dirichlet([1.0, 1.0])
        expected = 0.0
        for u, a1, a2, c1, c2 in it.product(range(2), repeat=5):
            dt, at = (t, u) if player == 0 else (u, t)
            y = f[0, a1, a2]
            prob = (
                belief[u]
                * s1.tables[0][0, dt, a1]
                * s2.tables[0][0, at, a2]
                * s1.tables[1][y, dt, c1]
                * s2.tables[1][y, at, c2]
            )
            pay = game.payoff(0, player)[0, a1, a2, dt, at] + game.payoff(1, player)[
                y, c1, c2, dt, at
            ]
            expected += prob * pay
        got = cumulative_utility(game, (s1, s2), belief, 0, t, player=player)
        assert got == approx(expected, abs=1e-9)


@settings(deadline=None)
@given(st.floats(0, 1), st.integers(0, 50))
def test_cumulative_utility_affine(alpha, seed):
    game = random_game(seed)
    rng = np.random.default_rng(seed)
    strats = random_strategies(game, rng)
    b = rng.dirichlet([1.0, 1.0])
    c = rng.dirichlet([1.0, 1.0])
    mix = alpha * b + (1 - alpha) * c
    for player in range(2):
        u = cumulative_utility(game, strats, mix, 0, 1, player=player)
        ub = cumulative_utility(game, strats, b, 0, 1, player=player)
        uc = cumulative_utility(game, strats, c, 0, 1, player=player)
        assert u == approx(alpha * ub + (1 - alpha) * uc, abs=1e-9)


def test_profile_values_match_cumulative():
    game = random_game(3, successors=3)
    strats = random_strategies(game, np.random.default_rng(3))
    beliefs = consistent_beliefs(game, strats)
    values = profile_values(game, strats, beliefs)
    pairs = type_pair_values(game, strats)
    for p, t in it.product(range(2), range(2)):
        b = beliefs.tables[p][0][0, t]
        assert values[p][0][0, t] == approx(cumulative_utility(game, strats, b, 0, t, player=p))
        for u in range(2):
            sure = np.eye(2)[u]
            pair = (t, u) if p == 0 else (u, t)
            got = cumulative_utility(game, strats, sure, 0, t, player=p)
            assert pairs[p][0][(0, *pair)] == approx(got, abs=1e-9)


def test_history_update_arithmetic():
    rng = np.random.default_rng(2024)
    for _i in range(1000):
        own = BehavioralStrategy([rng.dirichlet(np.ones(3), (1, 2))])
        opp = BehavioralStrategy([rng.dirichlet(np.ones(3), (1, 2))])
        b = rng.dirichlet([1.0, 1.0])
        t = int(rng.integers(0, 2))
        a = int(rng.integers(0, 3))
        c = int(rng.integers(0, 3))
        nb = update_belief_history(Belief(0, 0, t, ProbabilityVector(b)), own, opp, a, c, 0, b)
        num = b * own.tables[0][0, t, a] * opp.tables[0][0, :, c]
        assert nb.distribution.weights == approx(num / np.sum(num), abs=1e-12)


def test_markov_update_arithmetic():
    rng = np.random.default_rng(2025)
    for _i in range(1000):
        kern = rng.dirichlet(np.ones(3), 2)
        b = rng.dirichlet([1.0, 1.0])
        nx = int(rng.integers(0, 3))
        nb = update_belief_markov(Belief(0, 0, 0, ProbabilityVector(b)), kern, nx, b)
        num = b * kern[:, nx]
        assert nb.distribution.weights == approx(num / np.sum(num), abs=1e-12)


def test_type_independent_updates():
    rng = np.random.default_rng(9)
    for _i in range(100):
        b = rng.dirichlet([1.0, 1.0])
        row = rng.dirichlet(np.ones(3))
        own = BehavioralStrategy([rng.dirichlet(np.ones(3), (1, 2))])
        opp = BehavioralStrategy([np.stack([row, row])[None]])
        nb = update_belief_history(Belief(0, 0, 0, ProbabilityVector(b)), own, opp, 1, 2, 0, b)
        assert nb.distribution.weights == approx(b, abs=1e-12)
        kern = np.stack([row, row])
        nb = update_belief_markov(Belief(0, 0, 0, ProbabilityVector(b)), kern, 0, b)
        assert nb.distribution.weights == approx(b, abs=1e-12)


@given(
    arrays(np.float64, 3, elements=st.floats(0.01, 1)),
    arrays(np.float64, 3, elements=st.floats(0.01, 1)),
    st.floats(1e-3, 1e3),
)
def test_posterior_rescaling(raw, lik, scale):
    b = raw / raw.sum()
    scaled = posterior(b, lik * scale, b).weights
    assert scaled == approx(posterior(b, lik, b).weights, abs=1e-12)


def test_episode_action_frequencies(deception: MultistageGame):
    d = np.array([[[0.3, 0.7], [0.5, 0.5]]])
    a = np.array([[[0.5, 0.5], [0.6, 0.4]]])
    strats = (
        BehavioralStrategy([d, BehavioralStrategy.uniform(deception, 0).tables[1]]),
        BehavioralStrategy([a, BehavioralStrategy.uniform(deception, 1).tables[1]]),
    )
    profile = EquilibriumProfile(strats, consistent_beliefs(deception, strats))
    rng = random_source(17)
    n = 10_000
    counts = np.zeros((2, 2))
    for _i in range(n):
        ep = simulate_episode(deception, profile, 0, 1, rng)
        counts[0, ep.defender_actions[0]] += 1
        counts[1, ep.attacker_actions[0]] += 1
    assert counts[0] / n == approx([0.3, 0.7], abs=0.02)
    assert counts[1] / n == approx([0.6, 0.4], abs=0.02)


def test_off_path_beliefs_follow_opponent(deception: MultistageGame):
    recall = with_perfect_recall(deception)
    # both defender types monitor; attackers reveal their type
    d0 = np.array([[[1.0, 0.0], [1.0, 0.0]]])
    a0 = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    strats = (
        BehavioralStrategy([d0, BehavioralStrategy.uniform(recall, 0).tables[1]]),
        BehavioralStrategy([a0, BehavioralStrategy.uniform(recall, 1).tables[1]]),
    )
    beliefs = consistent_beliefs(recall, strats)
    states = recall.model.states[1]
    for t in range(2):
        revealed_g = beliefs.at(0, 1, states.index("x0/idle,access"), t)
        revealed_b = beliefs.at(0, 1, states.index("x0/idle,probe"), t)
        assert revealed_g.distribution.weights == approx([1.0, 0.0])
        assert revealed_b.distribution.weights == approx([0.0, 1.0])
    # no defender type idles, so the attacker keeps its prior there
    for u in range(2):
        b = beliefs.at(1, 1, states.index("x0/idle,access"), u)
        assert b.distribution.weights == approx(recall.priors[1][u])
