"""
Logging configuration for entry points
"""

import logging
from typing import Optional, Union

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[Union[str, int]] = None) -> None:
    """Configure root logging once per process"""
    if level is None:
        from threshold_ou.core.config import get_settings

        level = get_settings()["LOG_LEVEL"]
    if isinstance(level, str):
        level = getattr(logging, level.upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
