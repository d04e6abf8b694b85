# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import pytest
from click.testing import CliRunner

from sped_causal.cli.simulate import simulate

SMALL_RUN = """\
dgp.n = 300
dgp.p = 4
dgp.outcome-covariates = 3
dgp.text = false
run.threads = 1
fit.n-folds = 2
fit.inner-folds = 2
fit.learners = lasso
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def run_config(tmp_path):
    """Configuration of a small simulated run without text records."""
    path = tmp_path / "run.cfg"
    path.write_text(SMALL_RUN, encoding="utf-8")
    return path


@pytest.fixture
def simulated(runner, run_config, tmp_path):
    """Run directory holding a freshly simulated multi-arm population."""
    out = tmp_path / "run"
    result = runner.invoke(simulate, ["-c", str(run_config), "-o", str(out), "--seed", "2"])
    assert result.exit_code == 0, result.output
    return out
