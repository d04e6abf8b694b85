# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

"""sped-causal - command-line stages of the estimation pipeline."""
