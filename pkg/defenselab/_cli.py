# pyright: basic
"""
DefenseLab CLI internals.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from textwrap import dedent
from typing import Any, Optional, Sequence

import numpy as np
import prettytable as pt

from ._util import format_float, human_size
from .bayes import solve_pbne, verify_pbne, with_perfect_recall
from .errors import ConfigError, DefenseLabError
from .experiment import (
    EXPORT_FORMATS,
    ExperimentPlan,
    TraceBundle,
    export_traces,
    resolve_settings,
    run_experiment,
)
from .format import pretty_codec
from .kernel import MatrixGame, solve_zero_sum
from .mtd import saddle_diagnostics
from .read import TraceFile
from .scenario import Engine, Scenario, parse_scenario, shipped_scenario
from .smdp import check_regularity, equivalent_mdp, policy_evaluation, value_iterate

_log = logging.getLogger(__name__)

EXIT_IO = 3
EXIT_CONFIG = 4
EXIT_FAILURE = 5

_ENGINE_COMMANDS = {"solve-pbne": Engine.BAYES, "run-mtd": Engine.MTD, "run-smdp": Engine.SMDP}


def parse_cli(args: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        "defenselab",
        "python -m defenselab [options] COMMAND ...",
        dedent(
            """
Solve and simulate strategic-learning cyber defense scenarios.
            """
        ),
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="enable verbose logging")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    scenario_opts = argparse.ArgumentParser(add_help=False)
    scenario_opts.add_argument(
        "-s",
        "--scenario",
        required=True,
        help="scenario file, or the name of a shipped scenario",
    )

    run_opts = argparse.ArgumentParser(add_help=False)
    run_opts.add_argument("--seed", type=int, default=0, help="base random seed")
    run_opts.add_argument(
        "-r", "--replications", type=int, default=1, help="number of replications"
    )
    run_opts.add_argument("-o", "--out", type=Path, help="output directory")
    run_opts.add_argument(
        "--format", choices=EXPORT_FORMATS, default="csv", help="trace export format"
    )
    run_opts.add_argument(
        "-j", "--jobs", type=int, default=1, help="worker processes for replications"
    )

    pbne = commands.add_parser(
        "solve-pbne", parents=[scenario_opts, run_opts], help="solve a Bayesian deception game"
    )
    pbne.add_argument("--epsilon", type=float, help="permitted deviation gain")
    pbne.add_argument("--max-iter", type=int, help="maximum belief sweeps")
    pbne.add_argument(
        "--information", choices=["markov", "history"], help="information structure"
    )

    mtd = commands.add_parser(
        "run-mtd", parents=[scenario_opts, run_opts], help="run moving-target defense learning"
    )
    mtd.add_argument("--steps", type=int, help="learning steps per replication")
    mtd.add_argument("--noise", type=float, help="payoff observation noise half-width")

    smdp = commands.add_parser(
        "run-smdp", parents=[scenario_opts, run_opts], help="run honeypot Q-learning"
    )
    smdp.add_argument("--epochs", type=int, help="decision epochs per replication")
    smdp.add_argument("--epsilon", type=float, help="exploration probability")
    smdp.add_argument("--kc", type=float, help="learning-rate constant")

    plan = commands.add_parser(
        "plan", parents=[scenario_opts], help="solve a honeypot model by value iteration"
    )
    plan.add_argument("--tol", type=float, default=1e-10, help="Bellman residual target")

    verify = commands.add_parser(
        "verify", parents=[scenario_opts], help="check a scenario against its oracles"
    )
    verify.add_argument(
        "--delta", type=float, default=0.01, help="sojourn regularity window (smdp)"
    )
    verify.add_argument(
        "--theta", type=float, default=0.01, help="sojourn regularity margin (smdp)"
    )

    inspect = commands.add_parser("inspect", help="describe a trace archive")
    inspect.add_argument("FILE", help="the trace archive to read")
    inspect.add_argument("-l", "--list", action="store_true", help="list the columns")
    inspect.add_argument("-V", "--verify", action="store_true", help="verify column checksums")

    return parser.parse_args(args)


def init_cli(opts: argparse.Namespace, init_log: bool):
    "Initialize CLI environment (logging, etc.)"
    level = logging.DEBUG if opts.verbose else logging.INFO
    if init_log:
        logging.basicConfig(stream=sys.stderr, level=level)


def load_scenario(ref: str) -> Scenario:
    "Load a scenario from a path, falling back to the shipped scenarios."
    path = Path(ref)
    if not path.exists() and path.parent == Path("."):
        try:
            path = shipped_scenario(ref)
        except FileNotFoundError:
            pass
    return parse_scenario(path)


def _table(fields: list[str]) -> pt.PrettyTable:
    table = pt.PrettyTable()
    table.field_names = fields
    table.align = "r"
    table.vrules = pt.VRuleStyle.NONE
    return table


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def print_summary(bundle: TraceBundle, limit: int = 8):
    table = _table(["Metric", "Values"])
    table.align["Metric"] = "l"  # pyright: ignore
    for metric, values in bundle.summary.items():
        flat = np.ravel(values)
        if len(flat) > limit:
            continue
        table.add_row([metric, ", ".join(_fmt(v) for v in flat)])
    print(table)


def print_profile(bundle: TraceBundle):
    profile = bundle.profile
    assert profile is not None
    labels = bundle.labels
    types = (labels["defender_types"], labels["attacker_types"])
    table = _table(["Stage", "State", "Player", "Type", "Strategy"])
    for k, states in enumerate(labels["states"]):
        for x, state in enumerate(states):
            for p, player in enumerate(("defender", "attacker")):
                rows = profile.strategies[p].rows(k, x)
                acts = labels["actions"][k][p]
                for t, label in enumerate(types[p]):
                    mix = ", ".join(
                        f"{a}={_fmt(w)}" for a, w in zip(acts, rows[t]) if w > 0
                    )
                    table.add_row([k, state, player, label, mix])
    print(table)


def run_engine(engine: Engine, opts: argparse.Namespace) -> int:
    scenario = load_scenario(opts.scenario)
    match engine:
        case Engine.BAYES:
            params = {
                "epsilon": opts.epsilon,
                "max_iter": opts.max_iter,
                "information": opts.information,
            }
        case Engine.MTD:
            params = {"steps": opts.steps, "noise": opts.noise}
        case Engine.SMDP:
            params = {"epochs": opts.epochs, "epsilon": opts.epsilon, "kc": opts.kc}
    plan = ExperimentPlan(
        engine,
        scenario.source or Path(opts.scenario),
        replications=opts.replications,
        seed=opts.seed,
        params={k: v for k, v in params.items() if v is not None},
        jobs=opts.jobs,
    )
    if opts.out is not None:
        plan.out = opts.out
    bundle = run_experiment(plan, scenario)
    files = export_traces(bundle, opts.format)
    _log.info("wrote %d export files to %s", len(files), bundle.directory)
    if bundle.profile is not None:
        print_profile(bundle)
    print_summary(bundle)
    if bundle.failures:
        for r, msg in bundle.failures.items():
            _log.error("replication %d: %s", r, msg)
        return EXIT_FAILURE
    return 0


def plan_model(opts: argparse.Namespace) -> int:
    scenario = load_scenario(opts.scenario)
    if scenario.engine != Engine.SMDP:
        raise ConfigError("planning requires an smdp scenario", "engine")
    equiv = equivalent_mdp(scenario.smdp)
    result = value_iterate(equiv, opts.tol)
    _log.info(
        "%s: %d iterations, residual %.3g, modulus %.4f",
        scenario.name,
        result.iterations,
        result.residual,
        equiv.contraction_modulus,
    )
    table = _table(["State", "Value", "Action"])
    for i, (s, v) in enumerate(zip(equiv.states, result.values)):
        table.add_row([s, format_float(float(v)), equiv.actions[i][result.policy[i]]])
    print(table)
    return 0


def _check(table: pt.PrettyTable, name: str, value: float, passed: bool) -> bool:
    table.add_row([name, _fmt(value), "ok" if passed else "FAIL"])
    if not passed:
        _log.error("check %s failed (%g)", name, value)
    return passed


def verify_scenario(opts: argparse.Namespace) -> int:
    scenario = load_scenario(opts.scenario)
    table = _table(["Check", "Value", "Result"])
    table.align["Check"] = "l"  # pyright: ignore
    ok = True
    match scenario.engine:
        case Engine.BAYES:
            settings: Any = resolve_settings(Engine.BAYES, scenario.settings)
            game = scenario.game
            if settings.information == "history":
                game = with_perfect_recall(game)
            profile = solve_pbne(
                game, settings.epsilon, settings.max_iter, damping=settings.damping
            )
            report = verify_pbne(game, profile, settings.epsilon)
            ok &= _check(
                table, "belief consistency", report.consistency_residual, report.passed
            )
            ok &= _check(
                table,
                "sequential rationality",
                report.max_gain,
                report.max_gain <= settings.epsilon + 1e-8,
            )
        case Engine.MTD:
            for layer in scenario.layers:
                x, y, value = solve_zero_sum(MatrixGame(layer.cost_matrix))
                diag = saddle_diagnostics(layer, x.weights, y.weights)
                gap = diag["saddle_gap"]
                ok &= _check(table, f"{layer.name}: saddle gap", gap, gap <= 1e-8)
                _log.info("%s: game value %s", layer.name, format_float(value))
        case Engine.SMDP:
            model = scenario.smdp
            equiv = equivalent_mdp(model)
            beta = equiv.contraction_modulus
            ok &= _check(table, "contraction modulus", beta, beta < 1)
            reg = check_regularity(model, opts.delta, opts.theta)
            for s, a, mass in reg.violations:
                _log.warning("regularity: %s/%s transitions early with mass %.4f", s, a, mass)
            ok &= _check(table, "sojourn regularity", float(len(reg.violations)), reg.passed)
            result = value_iterate(equiv)
            ok &= _check(table, "Bellman residual", result.residual, result.residual <= 1e-9)
            exact = policy_evaluation(equiv, result.policy)
            err = float(np.max(np.abs(exact - result.values)))
            ok &= _check(table, "greedy policy evaluation", err, err <= 1e-8)
    print(table)
    return 0 if ok else EXIT_FAILURE


def inspect_archive(opts: argparse.Namespace) -> int:
    _log.info("opening %s", opts.FILE)
    failed = False
    with TraceFile(opts.FILE, verify=False) as tf:
        _log.info("%s: opened file with version %s", opts.FILE, tf.header.version)
        _log.info("%s: flags: %d (%s)", opts.FILE, tf.header.flags.value, tf.header.flags)
        _log.info("%s: length: %s", opts.FILE, human_size(tf.header.length))
        _log.info("%s: columns: %d", opts.FILE, len(tf.entries))
        for key in ("engine", "scenario", "replication", "seed"):
            if key in tf.metadata:
                _log.info("%s: %s: %s", opts.FILE, key, tf.metadata[key])

        if opts.list:
            table = _table(["#", "Name", "Offset", "Length", "Enc. Len.", "Type", "Shape", "Codec"])
            table.align["Name"] = "l"  # pyright: ignore
            table.align["Type"] = "c"  # pyright: ignore
            table.align["Shape"] = "c"  # pyright: ignore
            table.align["Codec"] = "c"  # pyright: ignore
            for i, e in enumerate(tf.entries):
                shape = ", ".join(str(d) for d in e.shape)
                row = [i, e.name, e.offset, e.dec_length, e.enc_length, e.dtype, shape]
                table.add_row(row + [pretty_codec(e.codecs)])
            print(table)

        if opts.verify:
            errors = tf.find_errors()
            for err in errors:
                _log.error("%s: %s", opts.FILE, err)
            if errors:
                failed = True
            else:
                _log.info("%s: all %d columns verified", opts.FILE, len(tf.entries))

    return EXIT_FAILURE if failed else 0


def dispatch(opts: argparse.Namespace) -> int:
    if opts.command in _ENGINE_COMMANDS:
        return run_engine(_ENGINE_COMMANDS[opts.command], opts)
    elif opts.command == "plan":
        return plan_model(opts)
    elif opts.command == "verify":
        return verify_scenario(opts)
    else:
        return inspect_archive(opts)


def main(args: Optional[Sequence[str]] = None, init_log=False) -> int:
    opts = parse_cli(args)
    init_cli(opts, init_log)

    try:
        return dispatch(opts)
    except ConfigError as e:
        _log.error("configuration error: %s", e)
        return EXIT_CONFIG
    except OSError as e:
        _log.error("I/O error: %s", e)
        return EXIT_IO
    except DefenseLabError as e:
        _log.error("%s: %s", type(e).__name__, e)
        return EXIT_FAILURE
