# This file is part of DefenseLab.
# Copyright (C) 2024 DefenseLab contributors
# Licensed under the MIT license, see LICENSE.md for details.
# SPDX-License-Identifier: MIT

from hypothesis import settings
import pytest
import numpy as np


@pytest.fixture
def rng():
    return np.random.default_rng()


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    "An output directory, also exported through ``DEFENSE_LAB_OUT``."
    out = tmp_path / "out"
    monkeypatch.setenv("DEFENSE_LAB_OUT", str(out))
    return out


# set up profiles
settings.register_profile("default", deadline=1000)
settings.register_profile("large", max_examples=5000)
settings.register_profile("fast", max_examples=10)
settings.load_profile("default")
