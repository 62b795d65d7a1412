"""
Logging setup shared by the API and the command line
"""
import logging
from typing import Optional

from app.core.config import settings

_configured = False


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """Configure the root handler once; later calls only adjust the level"""
    global _configured
    level = (level or settings.LOG_LEVEL).upper()
    root = logging.getLogger()
    if not _configured:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(fmt or settings.LOG_FORMAT))
        root.addHandler(handler)
        _configured = True
    root.setLevel(level)
