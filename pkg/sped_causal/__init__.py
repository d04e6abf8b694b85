# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

__version__ = "2026.1"
