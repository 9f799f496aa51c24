"""Shared fixtures: the three continuous instances and the shipped problem files."""
from pathlib import Path

import numpy as np
import pytest

from distributions import Beta, Exponential, Instance, PowerLaw
from measures import TransformField

PROBLEMS_DIR = Path(__file__).resolve().parents[2] / 'problems'

GOLDEN_RATIO = (1.0 + 5.0 ** 0.5) / 2.0


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope='session')
def exp11_field():
    return TransformField(Instance((Exponential(1.0), Exponential(1.0))))


@pytest.fixture(scope='session')
def exp21_field():
    return TransformField(Instance((Exponential(2.0), Exponential(1.0))))


@pytest.fixture(scope='session')
def powerlaw_field():
    return TransformField(Instance((PowerLaw(6), PowerLaw(7))))


@pytest.fixture(scope='session')
def beta_field():
    return TransformField(Instance((Beta(3, 3), Beta(3, 4))))


@pytest.fixture(scope='session')
def problems_dir():
    return PROBLEMS_DIR
