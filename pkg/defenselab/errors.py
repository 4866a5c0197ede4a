# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

"""
Exception and warning classes for DefenseLab.
"""

from __future__ import annotations

from typing import Any


class DefenseLabError(Exception):
    """
    Base class for DefenseLab errors.
    """


class ContractError(DefenseLabError, ValueError):
    """
    An argument violated an operation's contract (invalid simplex, zero visit
    count, out-of-range rate, and so on).
    """


class DomainError(DefenseLabError, ValueError):
    """
    A mathematical domain restriction was violated (non-positive temperature,
    support violation, invalid sojourn parameters).
    """


class ModelError(DefenseLabError):
    """
    A game or decision model is malformed, or refers to unknown labels.
    """


class CapacityError(DefenseLabError):
    """
    A problem exceeds a configured enumeration bound.
    """


class UnsupportedScheduleError(DefenseLabError):
    """
    The requested schedule family or model variant is not supported.
    """


class NoConvergenceError(DefenseLabError):
    """
    An iterative solver did not converge.  The last iterate and its measured
    quality are attached so callers can still inspect them.

    Args:
        message: the error message.
        result: the last iterate (e.g. an equilibrium profile).
        report: diagnostics for the last iterate.
    """

    result: Any
    report: Any

    def __init__(self, message: str, result: Any = None, report: Any = None):
        super().__init__(message)
        self.result = result
        self.report = report


class ConfigError(DefenseLabError):
    """
    A scenario or experiment configuration is invalid.

    Args:
        message: the error message.
        key: the path to the offending key (e.g. ``states[2].actions``).
    """

    key: str | None

    def __init__(self, message: str, key: str | None = None):
        if key:
            message = f"{key}: {message}"
        super().__init__(message)
        self.key = key


class FormatError(DefenseLabError):
    """
    A trace archive is invalid.
    """


class IntegrityError(DefenseLabError):
    """
    A trace archive failed an integrity check.
    """


class ConvergenceWarning(UserWarning):
    """
    A learning or solving procedure finished, but its diagnostics suggest the
    result has not settled.
    """
