"""Shared fixtures: the exactly-solvable game corpus and tiny helpers."""

from __future__ import annotations

import numpy as np
import pytest

from zsc_eval.fixtures import oracle_corpus


@pytest.fixture(scope="session")
def corpus():
    return oracle_corpus(0)


@pytest.fixture(scope="session")
def corpus_by_name(corpus):
    return {fx.name: fx for fx in corpus}


@pytest.fixture
def rng():
    return np.random.default_rng(0)
