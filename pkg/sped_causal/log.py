# SPDX-FileCopyrightText: 2026 - sped-causal contributors
# SPDX-License-Identifier: Apache-2.0

import logging
from pathlib import Path
from typing import Union

RUN_LOG_NAME = "sped-causal.log"
LOG_FORMAT = "%(asctime)s,%(msecs)d %(name)s %(levelname)s %(message)s"


def setup_logging(logfile: Union[Path, str]) -> logging.Handler:
    """Sets up logging of a pipeline stage to the specified logfile.

    The handler is attached to the root logger next to whatever console
    handler the command line configured, so a run directory keeps its own
    record of every stage executed in it.

    :param logfile: the file to record logging information to
    :type logfile: Path or str
    :return: the attached handler, to be passed to teardown_logging
    """
    logfile = Path(logfile)
    logfile.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(str(logfile), mode="a", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt="%H:%M:%S"))
    handler.setLevel(logging.DEBUG)
    logging.getLogger().addHandler(handler)
    return handler


def teardown_logging(handler: logging.Handler) -> None:
    """Detach and close a handler returned by setup_logging."""
    logging.getLogger().removeHandler(handler)
    handler.close()
