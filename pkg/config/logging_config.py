# Filename: config/logging_config.py
import logging
import sys
from typing import Optional

import colorlog

from .settings import LOG_LEVEL

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'


def setup_logging(level: Optional[str] = None, color: bool = True) -> None:
    """
    Configure the root logger once for command-line use.

    Library modules only ask for ``logging.getLogger(__name__)``; this is the
    single place where handlers are attached.
    """
    root = logging.getLogger()
    root.setLevel((level or LOG_LEVEL).upper())
    for handler in list(root.handlers):
        root.removeHandler(handler)

    if color and sys.stderr.isatty():
        handler = colorlog.StreamHandler(sys.stderr)
        handler.setFormatter(colorlog.ColoredFormatter(
            '%(log_color)s' + LOG_FORMAT,
            log_colors={
                'DEBUG': 'cyan',
                'INFO': 'green',
                'WARNING': 'yellow',
                'ERROR': 'red',
                'CRITICAL': 'bold_red',
            }))
    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    logging.captureWarnings(True)
