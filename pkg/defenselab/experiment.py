# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Experiment orchestration: seeded replications of any engine, per-replication
trace archives, aggregate summaries, and CSV / JSON-lines export.

Replication ``r`` of a plan uses seed ``seed + r``.  Traces and summaries are
functions of the scenario, the settings, and the seeds only, so rerunning a
plan reproduces every output byte.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

import numpy as np

from ._util import atomic_path, format_float
from .bayes import (
    EquilibriumProfile,
    MultistageGame,
    equilibrium_values,
    simulate_episode,
    solve_pbne,
    verify_pbne,
    with_perfect_recall,
)
from .errors import ConfigError, ContractError, DefenseLabError
from .kernel import MAX_SEED, ProbabilityVector, RateSchedule, random_source, sample_categorical
from .mtd import EntropySchedule, LearnerState, run_coupled_learning
from .read import TraceFile
from .scenario import Engine, Scenario, parse_scenario
from .smdp import (
    equivalent_mdp,
    late_variance,
    q_star,
    settle_time,
    simulate_engagement,
    value_iterate,
)
from .write import write_traces

_log = logging.getLogger(__name__)

OUT_ENV = "DEFENSE_LAB_OUT"
"Environment variable naming the default output directory."
SUMMARY_FILE = "summary.dltr"
EXPORT_FORMATS = ("csv", "jsonl")


def default_output_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "traces"))


@dataclass(frozen=True)
class BayesSettings:
    epsilon: float = 0.0
    max_iter: int = 100
    information: str = "markov"
    "Information structure: ``markov`` (current state) or ``history`` (perfect recall)."
    damping: float = 0.5


@dataclass(frozen=True)
class MtdSettings:
    steps: int = 20_000
    noise: float = 0.0
    entropy: EntropySchedule = field(default_factory=EntropySchedule)
    policy_rate: RateSchedule = field(default_factory=lambda: RateSchedule.harmonic(1.0))
    risk_rate: RateSchedule = field(default_factory=lambda: RateSchedule.power(0.6))
    record_every: int = 1


@dataclass(frozen=True)
class SmdpSettings:
    epochs: int = 5000
    epsilon: float = 0.2
    kc: float = 1.0
    decay_after: int | None = None
    watch: tuple[str, str] | None = None


Settings = BayesSettings | MtdSettings | SmdpSettings


def _number(value: Any, key: str, kind: type, low: float | None = None) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key)
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"expected an integer, got {value!r}", key)
        value = int(value)
    else:
        value = float(value)
    if low is not None and value < low:
        raise ConfigError(f"value {value} is below the minimum {low}", key)
    return value


def _schedule(value: Any, key: str) -> RateSchedule:
    try:
        sched = RateSchedule.parse(str(value))
    except DefenseLabError as e:
        raise ConfigError(str(e), key)
    if not sched.satisfies_convergency:
        _log.warning("%s: schedule %s does not satisfy the convergence conditions", key, sched)
    return sched


def resolve_settings(engine: Engine, *layers: Mapping[str, Any]) -> Settings:
    """
    Build validated engine settings from layered mappings (later layers
    override earlier ones), e.g. scenario run settings then CLI options.

    Raises:
        ConfigError: naming the offending setting.
    """
    merged: dict[str, Any] = {}
    for layer in layers:
        merged.update({k: v for k, v in layer.items() if v is not None})

    def key(name: str) -> str:
        return f"run.{name}"

    match engine:
        case Engine.BAYES:
            s = BayesSettings()
            if "epsilon" in merged:
                s = replace(s, epsilon=_number(merged["epsilon"], key("epsilon"), float, 0.0))
            if "max_iter" in merged:
                s = replace(s, max_iter=_number(merged["max_iter"], key("max_iter"), int, 1))
            if "damping" in merged:
                d = _number(merged["damping"], key("damping"), float, 0.0)
                if not 0 < d <= 1:
                    raise ConfigError("damping must be in (0, 1]", key("damping"))
                s = replace(s, damping=d)
            if "information" in merged:
                info = merged["information"]
                if info not in ("markov", "history"):
                    raise ConfigError(
                        f"unknown information structure {info!r}", key("information")
                    )
                s = replace(s, information=info)
            return s
        case Engine.MTD:
            m = MtdSettings()
            if "steps" in merged:
                m = replace(m, steps=_number(merged["steps"], key("steps"), int, 0))
            if "noise" in merged:
                m = replace(m, noise=_number(merged["noise"], key("noise"), float, 0.0))
            if "record_every" in merged:
                m = replace(
                    m, record_every=_number(merged["record_every"], key("record_every"), int, 1)
                )
            for name in ("policy_rate", "risk_rate"):
                if name in merged:
                    m = replace(m, **{name: _schedule(merged[name], key(name))})
            if "entropy" in merged:
                edoc = merged["entropy"]
                if not isinstance(edoc, Mapping):
                    raise ConfigError("expected a mapping", key("entropy"))
                unknown = set(edoc) - {"initial", "decay", "floor"}  # type: ignore
                if unknown:
                    raise ConfigError(f"unknown keys {sorted(unknown)}", key("entropy"))
                params = {
                    k: _number(v, f"{key('entropy')}.{k}", float)
                    for k, v in edoc.items()  # type: ignore
                }
                try:
                    m = replace(m, entropy=EntropySchedule(**params))
                except DefenseLabError as e:
                    raise ConfigError(str(e), key("entropy"))
            return m
        case Engine.SMDP:
            q = SmdpSettings()
            if "epochs" in merged:
                q = replace(q, epochs=_number(merged["epochs"], key("epochs"), int, 0))
            if "epsilon" in merged:
                eps = _number(merged["epsilon"], key("epsilon"), float, 0.0)
                if eps > 1:
                    raise ConfigError("exploration probability must be at most 1", key("epsilon"))
                q = replace(q, epsilon=eps)
            if "kc" in merged:
                kc = _number(merged["kc"], key("kc"), float)
                if kc <= 0:
                    raise ConfigError("rate constant must be positive", key("kc"))
                q = replace(q, kc=kc)
            if "decay_after" in merged:
                q = replace(
                    q, decay_after=_number(merged["decay_after"], key("decay_after"), int, 0)
                )
            if "watch" in merged:
                w = merged["watch"]
                if not isinstance(w, (list, tuple)) or len(w) != 2:  # type: ignore
                    raise ConfigError("expected a [state, action] pair", key("watch"))
                q = replace(q, watch=(str(w[0]), str(w[1])))  # type: ignore
            return q


@dataclass
class ExperimentPlan:
    """
    A validated description of an experiment.

    Args:
        engine: the engine to run.
        scenario: path to the scenario file.
        replications: number of replications.
        seed: base seed; replication ``r`` uses ``seed + r``.
        params: engine settings overriding the scenario's run settings.
        out: output directory.
        jobs: number of worker processes.
    """

    engine: Engine
    scenario: Path
    replications: int = 1
    seed: int = 0
    params: dict[str, Any] = field(default_factory=dict)
    out: Path = field(default_factory=default_output_dir)
    jobs: int = 1

    def validate(self):
        if self.replications < 1:
            raise ConfigError("at least one replication is required", "replications")
        if self.seed < 0 or self.seed + self.replications > MAX_SEED:
            raise ConfigError(f"seeds must lie in [0, 2^64), got base {self.seed}", "seed")
        if self.jobs < 1:
            raise ConfigError("job count must be positive", "jobs")

    def seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.replications)]


@dataclass
class Replication:
    index: int
    seed: int
    path: Path | None
    error: str | None = None


@dataclass
class TraceBundle:
    """
    The output of an experiment: one trace archive per replication and an
    aggregate summary keyed by metric name.
    """

    directory: Path
    engine: Engine
    scenario: str
    replications: list[Replication]
    summary: dict[str, np.ndarray]
    labels: dict[str, Any] = field(default_factory=dict)
    "Labels needed to render traces (states, actions, types)."
    profile: EquilibriumProfile | None = None
    "The equilibrium played by Bayesian replications."

    @property
    def failures(self) -> dict[int, str]:
        return {r.index: r.error for r in self.replications if r.error is not None}

    def traces(self) -> Iterator[tuple[int, dict[str, np.ndarray], dict[str, Any]]]:
        "Load each successful replication's columns and metadata, in order."
        for rep in self.replications:
            if rep.path is None:
                continue
            with TraceFile(rep.path) as tf:
                yield rep.index, tf.columns(), tf.metadata


@dataclass(frozen=True)
class _Task:
    engine: Engine
    scenario: Scenario
    settings: Any
    prepared: Any
    index: int
    seed: int
    path: Path


def _rep_path(out: Path, index: int) -> Path:
    return out / f"rep-{index:04d}.dltr"


def _prepare(scenario: Scenario, settings: Settings) -> Any:
    "Shared, deterministic per-plan work (equilibria, oracles)."
    match scenario.engine:
        case Engine.BAYES:
            assert isinstance(settings, BayesSettings)
            game = scenario.game
            if settings.information == "history":
                game = with_perfect_recall(game)
            profile = solve_pbne(
                game, settings.epsilon, settings.max_iter, damping=settings.damping
            )
            return game, profile
        case Engine.SMDP:
            assert isinstance(settings, SmdpSettings)
            model = scenario.smdp
            equiv = equivalent_mdp(model)
            plan = value_iterate(equiv)
            watch = settings.watch
            if watch is None:
                start = max(model.initial, key=lambda s: model.initial[s])
                si = model.state_index(start)
                watch = (start, equiv.actions[si][int(plan.policy[si])])
            qs = q_star(equiv, plan.values)
            oracle = float(qs[model.state_index(watch[0]), model.action_index(*watch)])
            return watch, oracle, plan.values
        case Engine.MTD:
            return None


def _replicate(task: _Task) -> Replication:
    rng = random_source(task.seed)
    meta: dict[str, Any] = {
        "engine": task.engine.value,
        "scenario": task.scenario.name,
        "replication": task.index,
        "seed": task.seed,
    }
    try:
        match task.engine:
            case Engine.BAYES:
                columns = _bayes_replication(task, rng, meta)
            case Engine.MTD:
                columns = _mtd_replication(task, rng, meta)
            case Engine.SMDP:
                columns = _smdp_replication(task, rng, meta)
    except DefenseLabError as e:
        _log.error("replication %d (seed %d) failed: %s", task.index, task.seed, e)
        return Replication(task.index, task.seed, None, str(e))
    write_traces(task.path, columns, metadata=meta)
    return Replication(task.index, task.seed, task.path)


def _bayes_replication(task: _Task, rng: Any, meta: dict[str, Any]) -> dict[str, np.ndarray]:
    game, profile = task.prepared
    assert isinstance(game, MultistageGame) and isinstance(profile, EquilibriumProfile)
    t1, _t2 = game.types.sizes
    dtype = sample_categorical(ProbabilityVector.uniform(t1), rng)
    atype = sample_categorical(game.priors[0][dtype], rng)
    ep = simulate_episode(game, profile, dtype, atype, rng, noisy=True)
    meta["defender_type"] = game.types.defender[dtype]
    meta["attacker_type"] = game.types.attacker[atype]
    return {
        "stage": np.arange(len(ep.states), dtype=np.int64),
        "state": ep.states,
        "defender_action": ep.defender_actions,
        "attacker_action": ep.attacker_actions,
        "defender_payoff": ep.defender_payoffs,
        "attacker_payoff": ep.attacker_payoffs,
        "defender_belief": ep.defender_beliefs,
        "attacker_belief": ep.attacker_beliefs,
    }


def _mtd_replication(task: _Task, rng: Any, meta: dict[str, Any]) -> dict[str, np.ndarray]:
    settings = task.settings
    assert isinstance(settings, MtdSettings)
    columns: dict[str, np.ndarray] = {}
    diags: dict[str, dict[str, float]] = {}
    for layer in task.scenario.layers:
        m, n = layer.cost_matrix.shape
        kwargs: dict[str, Any] = dict(
            entropy=settings.entropy,
            policy_rate=settings.policy_rate,
            risk_rate=settings.risk_rate,
        )
        traj = run_coupled_learning(
            layer,
            LearnerState.initial(m, **kwargs),
            LearnerState.initial(n, **kwargs),
            settings.steps,
            rng,
            noise=settings.noise,
            record_every=settings.record_every,
        )
        pre = f"{layer.name}/"
        columns[pre + "step"] = traj.steps
        columns[pre + "defender_action"] = traj.defender_actions
        columns[pre + "attacker_action"] = traj.attacker_actions
        columns[pre + "payoff"] = traj.payoffs
        columns[pre + "defender_policy"] = traj.defender_policy
        columns[pre + "attacker_policy"] = traj.attacker_policy
        columns[pre + "defender_risk"] = traj.defender_risks
        columns[pre + "attacker_risk"] = traj.attacker_risks
        columns[pre + "defender_final"] = traj.defender.policy.weights
        columns[pre + "attacker_final"] = traj.attacker.policy.weights
        diags[layer.name] = {k: float(v) for k, v in traj.diagnostics.items()}
    meta["diagnostics"] = diags
    return columns


def _smdp_replication(task: _Task, rng: Any, meta: dict[str, Any]) -> dict[str, np.ndarray]:
    settings = task.settings
    assert isinstance(settings, SmdpSettings)
    watch, oracle, _values = task.prepared
    model = task.scenario.smdp
    run = simulate_engagement(
        model,
        settings.epochs,
        rng,
        epsilon=settings.epsilon,
        kc=settings.kc,
        decay_after=settings.decay_after,
        watch=watch,
    )
    assert run.q is not None and run.watched is not None
    log = run.log
    meta["watch"] = list(watch)
    meta["oracle"] = oracle
    meta["settle_time"] = settle_time(run.watched, oracle)
    meta["late_variance"] = late_variance(run.watched) if len(run.watched) else math.nan
    return {
        "epoch": np.arange(1, len(log) + 1, dtype=np.int64),
        "episode": log.episode,
        "state": log.state,
        "action": log.action,
        "sojourn": log.sojourn,
        "reward": log.realized_rewards(model.discount),
        "rate": log.rate,
        "next_state": log.next_state,
        "q_value": log.q_value,
        "watched": run.watched,
        "q_final": np.where(run.q.mask, run.q.q, np.nan),
        "visits": run.q.counts,
    }


def _labels(scenario: Scenario, prepared: Any) -> dict[str, Any]:
    match scenario.engine:
        case Engine.BAYES:
            game = prepared[0]
            return {
                "states": [list(xs) for xs in game.model.states],
                "actions": [[list(a1), list(a2)] for a1, a2 in game.model.actions],
                "defender_types": list(game.types.defender),
                "attacker_types": list(game.types.attacker),
            }
        case Engine.MTD:
            return {
                "layers": {
                    layer.name: {
                        "defender": list(layer.configurations),
                        "attacker": list(layer.attacks),
                    }
                    for layer in scenario.layers
                }
            }
        case Engine.SMDP:
            model = scenario.smdp
            return {
                "states": model.state_names,
                "actions": [[a.name for a in s.actions] for s in model.states],
            }


def summarize(
    engine: Engine, traces: Sequence[tuple[int, dict[str, np.ndarray], dict[str, Any]]]
) -> dict[str, np.ndarray]:
    """
    Aggregate statistics computed from per-replication traces only.  Scalar
    per-replication metrics are indexed by position in ``traces``.
    """
    out: dict[str, np.ndarray] = {}
    if not traces:
        return out
    match engine:
        case Engine.BAYES:
            out["defender_payoff.total"] = np.array(
                [np.sum(c["defender_payoff"]) for _i, c, _m in traces]
            )
            out["attacker_payoff.total"] = np.array(
                [np.sum(c["attacker_payoff"]) for _i, c, _m in traces]
            )
        case Engine.MTD:
            layers = list(traces[0][2]["diagnostics"])
            for name in layers:
                for metric in ("spe_distance", "saddle_gap"):
                    vals = np.array([m["diagnostics"][name][metric] for _i, _c, m in traces])
                    out[f"{name}.{metric}"] = vals
                    out[f"{name}.{metric}.mean"] = np.array([np.mean(vals)])
                for side in ("defender", "attacker"):
                    finals = np.stack([c[f"{name}/{side}_final"] for _i, c, _m in traces])
                    out[f"{name}.{side}_policy.mean"] = finals.mean(axis=0)
        case Engine.SMDP:
            watched = np.stack([c["watched"] for _i, c, _m in traces])
            out["watch.mean"] = watched.mean(axis=0)
            if len(traces) > 1:
                out["watch.var"] = watched.var(axis=0, ddof=1)
            else:
                out["watch.var"] = np.zeros(watched.shape[1])
            out["oracle"] = np.array([traces[0][2]["oracle"]])
            settle = np.array([m["settle_time"] for _i, _c, m in traces])
            out["settle_time"] = settle
            out["settle_time.median"] = np.array([np.median(settle)])
            late = np.array([m["late_variance"] for _i, _c, m in traces])
            out["late_variance"] = late
            out["late_variance.mean"] = np.array([np.mean(late)])
    return out


def run_experiment(plan: ExperimentPlan, scenario: Scenario | None = None) -> TraceBundle:
    """
    Run every replication of a plan, writing one trace archive per
    replication and a summary archive.

    Args:
        plan: the experiment plan.
        scenario: the parsed scenario (parsed from ``plan.scenario`` if omitted).

    Returns:
        The trace bundle.  Failed replications are listed in
        :attr:`TraceBundle.failures`.
    """
    plan.validate()
    if scenario is None:
        scenario = parse_scenario(plan.scenario)
    if scenario.engine != plan.engine:
        raise ConfigError(
            f"scenario is for engine {scenario.engine.value}, not {plan.engine.value}", "engine"
        )
    settings = resolve_settings(plan.engine, scenario.settings, plan.params)
    _log.info(
        "running %d %s replications of %s from seed %d",
        plan.replications,
        plan.engine.value,
        scenario.name,
        plan.seed,
    )
    prepared = _prepare(scenario, settings)
    out = Path(plan.out)
    out.mkdir(parents=True, exist_ok=True)

    tasks = [
        _Task(plan.engine, scenario, settings, prepared, r, s, _rep_path(out, r))
        for r, s in enumerate(plan.seeds())
    ]
    if plan.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            reps = list(pool.map(_replicate, tasks))
    else:
        reps = [_replicate(t) for t in tasks]

    bundle = TraceBundle(out, plan.engine, scenario.name, reps, {}, _labels(scenario, prepared))
    bundle.summary = summarize(plan.engine, list(bundle.traces()))
    if plan.engine == Engine.BAYES:
        game, profile = prepared
        bundle.profile = profile
        dv, av = equilibrium_values(game, profile)
        report = verify_pbne(game, profile, profile.slack)
        bundle.summary["defender_value"] = np.asarray(dv)
        bundle.summary["attacker_value"] = np.asarray(av)
        bundle.summary["max_gain"] = np.array([report.max_gain])
        bundle.summary["consistency_residual"] = np.array([report.consistency_residual])
    write_traces(
        out / SUMMARY_FILE,
        bundle.summary,
        metadata={
            "engine": plan.engine.value,
            "scenario": scenario.name,
            "seeds": plan.seeds(),
            "failures": {str(k): v for k, v in bundle.failures.items()},
            "labels": bundle.labels,
        },
    )
    if bundle.failures:
        _log.error("%d of %d replications failed", len(bundle.failures), len(reps))
    return bundle


def _fmt(x: Any) -> str:
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else format_float(float(x))
    return str(x)


def _json_value(x: Any) -> Any:
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _trace_rows(bundle: TraceBundle) -> dict[str, tuple[list[str], list[list[Any]]]]:
    "Tables to export, keyed by file stem."
    tables: dict[str, tuple[list[str], list[list[Any]]]] = {}
    labels = bundle.labels
    match bundle.engine:
        case Engine.SMDP:
            header = ["replication", "epoch", "state", "action", "sojourn", "reward", "q_value"]
            rows: list[list[Any]] = []
            for r, c, _m in bundle.traces():
                for k in range(len(c["epoch"])):
                    s = int(c["state"][k])
                    rows.append(
                        [
                            r,
                            int(c["epoch"][k]),
                            labels["states"][s],
                            labels["actions"][s][int(c["action"][k])],
                            float(c["sojourn"][k]),
                            float(c["reward"][k]),
                            float(c["q_value"][k]),
                        ]
                    )
            tables["traces"] = (header, rows)
        case Engine.MTD:
            for name, sides in labels["layers"].items():
                width = max(len(sides["defender"]), len(sides["attacker"]))
                header = ["replication", "step", "side", "action", "payoff"]
                header += [f"policy_{i}" for i in range(width)]
                header += [f"risk_{i}" for i in range(width)]
                rows = []
                pre = f"{name}/"
                for r, c, _m in bundle.traces():
                    for k in range(len(c[pre + "step"])):
                        for side in ("defender", "attacker"):
                            pol = c[f"{pre}{side}_policy"][k]
                            risk = c[f"{pre}{side}_risk"][k]
                            pad = [""] * (width - len(pol))
                            rows.append(
                                [
                                    r,
                                    int(c[pre + "step"][k]),
                                    side,
                                    sides[side][int(c[f"{pre}{side}_action"][k])],
                                    float(c[pre + "payoff"][k]),
                                    *[float(x) for x in pol],
                                    *pad,
                                    *[float(x) for x in risk],
                                    *pad,
                                ]
                            )
                tables[f"traces-{name}"] = (header, rows)
        case Engine.BAYES:
            dt = labels["defender_types"]
            at = labels["attacker_types"]
            header = ["replication", "stage", "state", "defender_action", "attacker_action"]
            header += ["defender_payoff", "attacker_payoff"]
            header += [f"defender_belief_{t}" for t in at]
            header += [f"attacker_belief_{t}" for t in dt]
            rows = []
            for r, c, _m in bundle.traces():
                for k in range(len(c["stage"])):
                    x = int(c["state"][k])
                    acts = labels["actions"][k]
                    rows.append(
                        [
                            r,
                            k,
                            labels["states"][k][x],
                            acts[0][int(c["defender_action"][k])],
                            acts[1][int(c["attacker_action"][k])],
                            float(c["defender_payoff"][k]),
                            float(c["attacker_payoff"][k]),
                            *[float(b) for b in c["defender_belief"][k]],
                            *[float(b) for b in c["attacker_belief"][k]],
                        ]
                    )
            tables["traces"] = (header, rows)
    summary_rows: list[list[Any]] = []
    for metric, values in bundle.summary.items():
        for i, v in enumerate(np.ravel(values)):
            summary_rows.append([metric, i, float(v)])
    tables["summary"] = (["metric", "index", "value"], summary_rows)
    return tables


def export_traces(bundle: TraceBundle, format: str = "csv") -> list[Path]:
    """
    Export a bundle's traces and summary as CSV or JSON-lines files in the
    bundle directory.

    Returns:
        The written files.
    """
    if format not in EXPORT_FORMATS:
        raise ContractError(f"unknown export format {format!r}")
    written: list[Path] = []
    for stem, (header, rows) in _trace_rows(bundle).items():
        path = bundle.directory / f"{stem}.{format}"
        with atomic_path(path) as tmp:
            with tmp.open("w", newline="", encoding="utf-8") as f:
                if format == "csv":
                    w = csv.writer(f, lineterminator="\n")
                    w.writerow(header)
                    for row in rows:
                        w.writerow([_fmt(x) for x in row])
                else:
                    for row in rows:
                        rec = {h: _json_value(x) for h, x in zip(header, row) if x != ""}
                        f.write(json.dumps(rec, allow_nan=False) + "\n")
        written.append(path)
        _log.info("exported %d rows to %s", len(rows), path)
    return written


def load_bundle(directory: str | os.PathLike[str]) -> TraceBundle:
    """
    Reload a bundle from its directory, recomputing the summary from the
    replication archives.
    """
    directory = Path(directory)
    with TraceFile(directory / SUMMARY_FILE) as tf:
        meta = tf.metadata
        stored = tf.columns()
    engine = Engine(meta["engine"])
    failures = {int(k): v for k, v in meta.get("failures", {}).items()}
    reps: list[Replication] = []
    for r, seed in enumerate(meta["seeds"]):
        if r in failures:
            reps.append(Replication(r, seed, None, failures[r]))
        else:
            reps.append(Replication(r, seed, _rep_path(directory, r)))
    bundle = TraceBundle(directory, engine, meta["scenario"], reps, {}, meta.get("labels", {}))
    bundle.summary = summarize(engine, list(bundle.traces()))
    for k, v in stored.items():
        bundle.summary.setdefault(k, v)
    return bundle
