# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import logging
from pathlib import Path

import numpy as np
import pytest

from synthetic import make_dataset

from sped_causal import dgp
from sped_causal.data import Dataset

FIXTURES = Path(__file__).parents[2] / "fixtures"


@pytest.fixture(autouse=True)
def detach_file_handlers():
    """Close run log handlers a failing command may have left on the root logger."""
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, logging.FileHandler):
            root.removeHandler(handler)
            handler.close()


@pytest.fixture
def policy_fixture() -> Path:
    """Directory of the policy scores, cost and spillover tables."""
    return FIXTURES / "stgallen_policy"


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def dataset() -> Dataset:
    return make_dataset()


@pytest.fixture
def small_spec() -> dgp.DgpSpec:
    """A simulation small enough to run every stage in a unit test."""
    return dgp.DgpSpec(
        n=300,
        p=4,
        arms=3,
        seed=3,
        outcome_covariates=3,
        n_diagnoses=4,
        vocab_per_diagnosis=8,
        common_vocab=30,
        doc_length=40,
        n_reference_docs=80,
        n_authors=3,
    )
