"""Shared fixtures and hypothesis profiles."""

import os

import numpy as np
import pytest
from hypothesis import settings

from dmoe.hist_targets import TargetRange, build_bin_layout, build_multi_layout

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def unit_range():
    return TargetRange(0.0, 1.0)


@pytest.fixture
def uniform8(unit_range):
    """Uniform 8-bin layout on [0, 1]."""
    return build_bin_layout(unit_range, 8)


@pytest.fixture
def multi4(unit_range):
    """Four shifted heads over a uniform 16-bin base on [0, 1]."""
    return build_multi_layout(build_bin_layout(unit_range, 16), 4)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
