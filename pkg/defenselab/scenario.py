# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Scenario files: YAML documents describing a deception game, a set of
moving-target layers, or a honeynet SMDP, along with optional run settings.
"""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path
from typing import Any, Mapping, Sequence, TypeAlias

import numpy as np
import yaml

from .bayes import MultistageGame, NoiseSpec, StageUtility, StateModel, TypeSpace
from .errors import ConfigError, DefenseLabError
from .kernel import SIMPLEX_REJECT
from .mtd import LayerGame
from .smdp import ActionSpec, Outcome, SmdpModel, SojournSpec, StateSpec

_log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

RUN_KEYS: Mapping[str, frozenset[str]] = {
    "bayes": frozenset(["epsilon", "max_iter", "information", "damping"]),
    "mtd": frozenset(
        ["steps", "noise", "entropy", "policy_rate", "risk_rate", "record_every"]
    ),
    "smdp": frozenset(["epochs", "epsilon", "kc", "decay_after", "watch"]),
}
"Run settings a scenario may carry for each engine."


class Engine(enum.Enum):
    BAYES = "bayes"
    MTD = "mtd"
    SMDP = "smdp"


Model: TypeAlias = MultistageGame | tuple[LayerGame, ...] | SmdpModel


@dataclass(eq=False)
class Scenario:
    """
    A parsed scenario.
    """

    name: str
    engine: Engine
    model: Model
    settings: dict[str, Any] = field(default_factory=dict)
    "Run settings from the scenario's ``run`` section."
    source: Path | None = None

    @property
    def game(self) -> MultistageGame:
        assert isinstance(self.model, MultistageGame)
        return self.model

    @property
    def layers(self) -> tuple[LayerGame, ...]:
        assert isinstance(self.model, tuple)
        return self.model

    @property
    def smdp(self) -> SmdpModel:
        assert isinstance(self.model, SmdpModel)
        return self.model


def shipped_scenario(name: str) -> Path:
    """
    Path to a scenario shipped with DefenseLab (e.g. ``honeynet``).
    """
    if not name.endswith(".yaml"):
        name += ".yaml"
    path = Path(str(files("defenselab") / "scenarios" / name))
    if not path.exists():
        raise FileNotFoundError(f"no shipped scenario {name}")
    return path


def parse_scenario(path: str | os.PathLike[str]) -> Scenario:
    """
    Load and validate a scenario file.

    Raises:
        OSError: if the file cannot be read.
        ConfigError: if the document is malformed; the error names the key.
    """
    path = Path(path)
    _log.debug("reading scenario %s", path)
    text = path.read_text(encoding="utf-8")
    scenario = parse_scenario_text(text)
    scenario.source = path
    return scenario


def parse_scenario_text(text: str) -> Scenario:
    "Parse a scenario from YAML text."
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}" if mark is not None else ""
        raise ConfigError(f"invalid YAML{where}: {getattr(e, 'problem', e)}")
    return parse_scenario_doc(doc)


def parse_scenario_doc(doc: Any) -> Scenario:
    "Build a scenario from a decoded YAML document."
    doc = _mapping(doc, "")
    schema = _get(doc, "schema", "", int)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {schema}", "schema")
    engine_name = _get(doc, "engine", "", str)
    try:
        engine = Engine(engine_name)
    except ValueError:
        valid = ", ".join(e.value for e in Engine)
        raise ConfigError(f"unknown engine {engine_name!r} (valid engines: {valid})", "engine")
    name = _get(doc, "name", "", str)

    settings = dict(_mapping(doc.get("run", {}), "run"))
    unknown = set(settings) - RUN_KEYS[engine.value]
    if unknown:
        raise ConfigError(f"unknown run settings {sorted(unknown)}", "run")

    match engine:
        case Engine.BAYES:
            model: Model = _parse_bayes(doc, name)
        case Engine.MTD:
            model = _parse_mtd(doc)
        case Engine.SMDP:
            model = _parse_smdp(doc)
    _log.info("loaded %s scenario %s", engine.value, name)
    return Scenario(name, engine, model, settings)


def serialize_scenario(scenario: Scenario) -> str:
    "Render a scenario as YAML; parsing the result yields an equivalent scenario."
    doc: dict[str, Any] = {
        "schema": SCHEMA_VERSION,
        "engine": scenario.engine.value,
        "name": scenario.name,
    }
    match scenario.engine:
        case Engine.BAYES:
            doc.update(_dump_bayes(scenario.game))
        case Engine.MTD:
            doc["layers"] = [_dump_layer(layer) for layer in scenario.layers]
        case Engine.SMDP:
            doc.update(_dump_smdp(scenario.smdp))
    if scenario.settings:
        doc["run"] = dict(scenario.settings)
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None)


def write_scenario(scenario: Scenario, path: str | os.PathLike[str]):
    Path(path).write_text(serialize_scenario(scenario), encoding="utf-8")


def _key(path: str, key: str | int) -> str:
    if isinstance(key, int):
        return f"{path}[{key}]"
    return f"{path}.{key}" if path else key


_MISSING = object()


def _get(doc: Mapping[str, Any], key: str, path: str, kind: type, default: Any = _MISSING) -> Any:
    where = _key(path, key)
    if key not in doc:
        if default is _MISSING:
            raise ConfigError("required key is missing", where)
        return default
    value = doc[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind is not bool and isinstance(value, bool)):
        raise ConfigError(f"expected {kind.__name__}, got {type(value).__name__}", where)
    return value


def _mapping(value: Any, path: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise ConfigError("expected a mapping", path or None)
    return value  # type: ignore


def _list(value: Any, path: str) -> Sequence[Any]:
    if not isinstance(value, list):
        raise ConfigError("expected a list", path)
    return value  # type: ignore


def _labels(value: Any, path: str) -> tuple[str, ...]:
    items = _list(value, path)
    if not items:
        raise ConfigError("list is empty", path)
    for i, x in enumerate(items):
        if not isinstance(x, str):
            raise ConfigError("labels must be strings", _key(path, i))
    if len(set(items)) != len(items):
        raise ConfigError("labels are not unique", path)
    return tuple(items)


def _array(value: Any, path: str, shape: tuple[int, ...]) -> np.ndarray:
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ConfigError("expected a numeric array", path)
    if arr.shape != shape:
        raise ConfigError(f"array has shape {arr.shape}, expected {shape}", path)
    if not np.all(np.isfinite(arr)):
        raise ConfigError("array has non-finite entries", path)
    return arr


def _probabilities(value: Any, path: str, n: int) -> np.ndarray:
    arr = _array(value, path, (n,))
    if np.min(arr) < 0 or abs(arr.sum() - 1) > SIMPLEX_REJECT:
        raise ConfigError(f"probabilities sum to {arr.sum():g}, not 1", path)
    return arr


def _build(path: str, factory: Any, *args: Any) -> Any:
    try:
        return factory(*args)
    except ConfigError:
        raise
    except DefenseLabError as e:
        raise ConfigError(str(e), path or None) from e


def _parse_bayes(doc: Mapping[str, Any], name: str) -> MultistageGame:
    tdoc = _mapping(_get(doc, "types", "", dict), "types")
    types = TypeSpace(
        _labels(_get(tdoc, "defender", "types", list), "types.defender"),
        _labels(_get(tdoc, "attacker", "types", list), "types.attacker"),
    )
    t1, t2 = types.sizes
    pdoc = _mapping(_get(doc, "priors", "", dict), "priors")
    priors: list[np.ndarray] = []
    for player, (rows, cols) in [("defender", (t1, t2)), ("attacker", (t2, t1))]:
        where = _key("priors", player)
        table = _list(_get(pdoc, player, "priors", list), where)
        if len(table) != rows:
            raise ConfigError(f"expected {rows} rows, got {len(table)}", where)
        rows_p = [_probabilities(r, _key(where, i), cols) for i, r in enumerate(table)]
        priors.append(np.stack(rows_p))

    ndoc = _mapping(doc.get("noise", {}), "noise")
    noise = _build(
        "noise",
        NoiseSpec,
        _get(ndoc, "family", "noise", str, "uniform"),
        _get(ndoc, "half_width", "noise", float, 0.0),
    )

    stages = _list(_get(doc, "stages", "", list), "stages")
    if not stages:
        raise ConfigError("at least one stage is required", "stages")
    states: list[tuple[str, ...]] = []
    actions: list[tuple[tuple[str, ...], tuple[str, ...]]] = []
    for k, sdoc in enumerate(stages):
        where = _key("stages", k)
        sdoc = _mapping(sdoc, where)
        states.append(_labels(_get(sdoc, "states", where, list), _key(where, "states")))
        adoc = _mapping(_get(sdoc, "actions", where, dict), _key(where, "actions"))
        aw = _key(where, "actions")
        actions.append(
            (
                _labels(_get(adoc, "defender", aw, list), _key(aw, "defender")),
                _labels(_get(adoc, "attacker", aw, list), _key(aw, "attacker")),
            )
        )

    transitions: list[np.ndarray] = []
    payoffs: list[tuple[np.ndarray, np.ndarray]] = []
    for k, sdoc in enumerate(stages):
        where = _key("stages", k)
        shape = (len(states[k]), len(actions[k][0]), len(actions[k][1]))
        if k < len(stages) - 1:
            tw = _key(where, "transitions")
            raw = _get(sdoc, "transitions", where, list)
            labels = np.array(raw, dtype=object)
            if labels.shape != shape:
                raise ConfigError(f"table has shape {labels.shape}, expected {shape}", tw)
            table = np.zeros(shape, dtype=np.int64)
            for idx, label in np.ndenumerate(labels):
                if label not in states[k + 1]:
                    raise ConfigError(f"unknown next-stage state {label!r}", tw)
                table[idx] = states[k + 1].index(label)
            transitions.append(table)
        elif "transitions" in sdoc:
            raise ConfigError("the final stage has no transitions", _key(where, "transitions"))
        pw = _key(where, "payoffs")
        pdoc = _mapping(_get(sdoc, "payoffs", where, dict), pw)
        payoffs.append(
            (
                _array(_get(pdoc, "defender", pw, list), _key(pw, "defender"), (*shape, t1, t2)),
                _array(_get(pdoc, "attacker", pw, list), _key(pw, "attacker"), (*shape, t1, t2)),
            )
        )

    initial = _get(doc, "initial", "", str, states[0][0])
    if initial not in states[0]:
        raise ConfigError(f"unknown initial state {initial!r}", "initial")
    model = _build(
        "stages",
        StateModel,
        tuple(states),
        tuple(actions),
        tuple(transitions),
        states[0].index(initial),
    )
    utility = StageUtility(tuple(payoffs), noise)
    return _build("", MultistageGame, types, (priors[0], priors[1]), model, utility, name)


def _dump_bayes(game: MultistageGame) -> dict[str, Any]:
    m = game.model
    stages: list[dict[str, Any]] = []
    for k, xs in enumerate(m.states):
        stage: dict[str, Any] = {
            "states": list(xs),
            "actions": {"defender": list(m.actions[k][0]), "attacker": list(m.actions[k][1])},
        }
        if k < m.horizon:
            nxt = np.array(m.states[k + 1], dtype=object)
            stage["transitions"] = nxt[m.transitions[k]].tolist()
        stage["payoffs"] = {
            "defender": game.payoff(k, 0).tolist(),
            "attacker": game.payoff(k, 1).tolist(),
        }
        stages.append(stage)
    return {
        "types": {"defender": list(game.types.defender), "attacker": list(game.types.attacker)},
        "priors": {"defender": game.priors[0].tolist(), "attacker": game.priors[1].tolist()},
        "noise": {
            "family": game.utility.noise.family,
            "half_width": game.utility.noise.half_width,
        },
        "initial": m.states[0][m.initial],
        "stages": stages,
    }


def _parse_layer(ldoc: Any, where: str) -> LayerGame:
    ldoc = _mapping(ldoc, where)
    name = _get(ldoc, "name", where, str)
    configs = _labels(_get(ldoc, "configurations", where, list), _key(where, "configurations"))
    vulns = _labels(_get(ldoc, "vulnerabilities", where, list), _key(where, "vulnerabilities"))
    attacks = _labels(
        _get(ldoc, "attacks", where, list, [f"attack:{v}" for v in vulns]), _key(where, "attacks")
    )
    sw = _key(where, "surface")
    sdoc = _mapping(_get(ldoc, "surface", where, dict), sw)
    surface: dict[str, frozenset[str]] = {}
    for c, exposed in sdoc.items():
        if c not in configs:
            raise ConfigError(f"unknown configuration {c!r}", sw)
        items = _list(exposed, _key(sw, c))
        for v in items:
            if v not in vulns:
                raise ConfigError(f"unknown vulnerability {v!r}", _key(sw, c))
        surface[c] = frozenset(items)
    dmg = _array(
        _get(ldoc, "damage", where, list), _key(where, "damage"), (len(vulns), len(configs))
    )
    return _build(where, LayerGame, name, configs, vulns, attacks, surface, dmg)


def _parse_mtd(doc: Mapping[str, Any]) -> tuple[LayerGame, ...]:
    layers = _list(_get(doc, "layers", "", list), "layers")
    if not layers:
        raise ConfigError("at least one layer is required", "layers")
    parsed = tuple(_parse_layer(ld, _key("layers", i)) for i, ld in enumerate(layers))
    names = [layer.name for layer in parsed]
    if len(set(names)) != len(names):
        raise ConfigError("layer names are not unique", "layers")
    return parsed


def _dump_layer(layer: LayerGame) -> dict[str, Any]:
    return {
        "name": layer.name,
        "configurations": list(layer.configurations),
        "vulnerabilities": list(layer.vulnerabilities),
        "attacks": list(layer.attacks),
        "surface": {
            c: [v for v in layer.vulnerabilities if v in layer.surface[c]]
            for c in layer.configurations
        },
        "damage": layer.damage.tolist(),
    }


def _parse_sojourn(value: Any, where: str) -> SojournSpec:
    sdoc = _mapping(value, where)
    family = _get(sdoc, "family", where, str)
    params = _list(_get(sdoc, "params", where, list), _key(where, "params"))
    if not all(isinstance(p, (int, float)) and not isinstance(p, bool) for p in params):
        raise ConfigError("sojourn parameters must be numbers", _key(where, "params"))
    return _build(where, SojournSpec, family, tuple(float(p) for p in params))


def _parse_smdp(doc: Mapping[str, Any]) -> SmdpModel:
    states_doc = _list(_get(doc, "states", "", list), "states")
    if not states_doc:
        raise ConfigError("at least one state is required", "states")
    names: list[str] = []
    for i, sd in enumerate(states_doc):
        names.append(_get(_mapping(sd, _key("states", i)), "name", _key("states", i), str))
    if len(set(names)) != len(names):
        raise ConfigError("state names are not unique", "states")

    states: list[StateSpec] = []
    for i, sd in enumerate(states_doc):
        sw = _key("states", i)
        absorbing = _get(sd, "absorbing", sw, bool, False)
        actions: list[ActionSpec] = []
        for j, ad in enumerate(_list(_get(sd, "actions", sw, list), _key(sw, "actions"))):
            aw = _key(_key(sw, "actions"), j)
            ad = _mapping(ad, aw)
            tw = _key(aw, "transitions")
            outcomes: list[Outcome] = []
            for t, od in enumerate(_list(_get(ad, "transitions", aw, list), tw)):
                ow = _key(tw, t)
                od = _mapping(od, ow)
                target = _get(od, "to", ow, str)
                if target not in names:
                    raise ConfigError(f"unknown state {target!r}", _key(ow, "to"))
                prob = _get(od, "prob", ow, float)
                if prob < 0:
                    raise ConfigError("negative probability", _key(ow, "prob"))
                outcomes.append(
                    Outcome(
                        target,
                        prob,
                        _get(od, "reward", ow, float, 0.0),
                        _parse_sojourn(_get(od, "sojourn", ow, dict), _key(ow, "sojourn")),
                    )
                )
            total = sum(o.prob for o in outcomes)
            if abs(total - 1) > SIMPLEX_REJECT:
                raise ConfigError(f"transition probabilities sum to {total:g}, not 1", tw)
            actions.append(
                ActionSpec(
                    _get(ad, "name", aw, str),
                    tuple(outcomes),
                    _get(ad, "rate", aw, float, 0.0),
                    _get(ad, "known", aw, bool, False),
                )
            )
        states.append(_build(sw, StateSpec, names[i], tuple(actions), absorbing))

    idoc = _mapping(_get(doc, "initial", "", dict), "initial")
    initial: dict[str, float] = {}
    for k in idoc:
        initial[str(k)] = _get(idoc, k, "initial", float)
    return _build(
        "",
        SmdpModel,
        tuple(states),
        _get(doc, "discount", "", float),
        _get(doc, "reward_bound", "", float),
        _get(doc, "noise", "", float, 0.1),
        initial,
    )


def _dump_smdp(m: SmdpModel) -> dict[str, Any]:
    states: list[dict[str, Any]] = []
    for s in m.states:
        sd: dict[str, Any] = {"name": s.name}
        if s.absorbing:
            sd["absorbing"] = True
        sd["actions"] = [
            {
                "name": a.name,
                "rate": a.rate,
                "known": a.known,
                "transitions": [
                    {
                        "to": o.target,
                        "prob": o.prob,
                        "reward": o.reward,
                        "sojourn": {"family": o.sojourn.family, "params": list(o.sojourn.params)},
                    }
                    for o in a.outcomes
                ],
            }
            for a in s.actions
        ]
        states.append(sd)
    return {
        "discount": m.discount,
        "reward_bound": m.reward_bound,
        "noise": m.noise,
        "initial": dict(m.initial),
        "states": states,
    }
