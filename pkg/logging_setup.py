#!/usr/bin/env python3
"""
Console logging for the command line tools
Uses colorlog when installed, plain logging otherwise
"""

import logging
import sys

try:
    import colorlog
    COLORLOG_AVAILABLE = True
except ImportError:
    COLORLOG_AVAILABLE = False

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(level: str = "WARNING") -> logging.Logger:
    """Route all log records to stderr so stdout stays machine-readable"""

    root = logging.getLogger()
    for handler in list(root.handlers):
        if getattr(handler, '_adapeft_console', False):
            root.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler._adapeft_console = True
    if COLORLOG_AVAILABLE:
        handler.setFormatter(colorlog.ColoredFormatter(
            '%(log_color)s' + LOG_FORMAT,
            log_colors={
                'DEBUG': 'cyan',
                'INFO': 'green',
                'WARNING': 'yellow',
                'ERROR': 'red',
                'CRITICAL': 'bold_red',
            }
        ))
    else:
        handler.setFormatter(logging.Formatter(LOG_FORMAT))

    root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.WARNING))
    return root
