import logging
import sys
from pathlib import Path

from core.config import get_settings


def setup_logging():
    """Setup application logging"""
    settings = get_settings()

    handlers = [logging.StreamHandler(sys.stdout)]
    if settings.LOG_FILE:
        log_path = Path(settings.LOG_FILE)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_path, mode="a"))

    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper()),
        format=settings.LOG_FORMAT,
        handlers=handlers,
        force=True,
    )

    # Suppress verbose logs from external libraries
    logging.getLogger("numexpr").setLevel(logging.WARNING)
