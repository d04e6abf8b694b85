# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import click

from sped_causal.cli.estimate import effects, fit
from sped_causal.cli.featurize import featurize
from sped_causal.cli.iv import iv_late
from sped_causal.cli.log import setup_root_logging
from sped_causal.cli.policy import policy_tree, welfare
from sped_causal.cli.simulate import simulate

CONTEXT_SETTINGS = {"help_option_names": ["-h", "--help"]}


@click.group("sped-causal", context_settings=CONTEXT_SETTINGS)
@click.option("-v", "--verbose", is_flag=True, help="Increase output verbosity")
def cli(verbose: bool):
    """Multivalued treatment effects, policy trees and IV for special education data."""


def main():
    """Register commands and run the CLI."""
    setup_root_logging()
    cli.add_command(simulate)
    cli.add_command(featurize)
    cli.add_command(fit)
    cli.add_command(effects)
    cli.add_command(policy_tree)
    cli.add_command(iv_late)
    cli.add_command(welfare)

    cli()


if __name__ == "__main__":
    main()
