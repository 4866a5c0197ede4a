# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Strategic-learning cyber defense: Bayesian deception games, moving-target
defense learning, and honeypot engagement with reinforcement learning.
"""

from importlib.metadata import PackageNotFoundError, version

from .bayes import MultistageGame, simulate_episode, solve_pbne, verify_pbne
from .experiment import ExperimentPlan, TraceBundle, export_traces, run_experiment
from .kernel import MatrixGame, ProbabilityVector, RateSchedule, solve_bimatrix, solve_zero_sum
from .mtd import LayerGame, integrate_ode, run_coupled_learning
from .read import TraceFile, file_info, read_traces
from .scenario import Scenario, parse_scenario, serialize_scenario
from .smdp import SmdpModel, equivalent_mdp, simulate_engagement, value_iterate
from .write import TraceWriter, write_traces

try:
    __version__ = version("defenselab")
except PackageNotFoundError:
    # package is not installed
    pass

__all__ = [
    "ProbabilityVector",
    "MatrixGame",
    "RateSchedule",
    "solve_zero_sum",
    "solve_bimatrix",
    "MultistageGame",
    "solve_pbne",
    "verify_pbne",
    "simulate_episode",
    "LayerGame",
    "run_coupled_learning",
    "integrate_ode",
    "SmdpModel",
    "equivalent_mdp",
    "value_iterate",
    "simulate_engagement",
    "Scenario",
    "parse_scenario",
    "serialize_scenario",
    "ExperimentPlan",
    "TraceBundle",
    "run_experiment",
    "export_traces",
    "TraceWriter",
    "write_traces",
    "TraceFile",
    "read_traces",
    "file_info",
]
