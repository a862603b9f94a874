"""
Logging setup for MPVIC Lab.
"""

import logging
from typing import Optional

LOG_FORMAT = "[%(name)s:%(funcName)s:%(lineno)s] %(levelname)s: %(message)s"


def configure_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """Root logger with the console format; optionally mirror records to `log_file`."""
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()
    logging.basicConfig(level=getattr(logging, level.upper()), format=LOG_FORMAT)
    if log_file:
        file_handler = logging.FileHandler(log_file, mode="w", encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(file_handler)
    return root
