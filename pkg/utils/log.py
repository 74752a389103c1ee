import logging

from utils.config import settings

_configured = False


def get_logger(name: str) -> logging.Logger:
    """Project logger; configures the root handler on first use."""
    global _configured
    if not _configured:
        logging.basicConfig(
            level=getattr(logging, settings.log_level, logging.INFO),
            format="%(asctime)s %(levelname)s %(name)s | %(message)s",
        )
        _configured = True
    return logging.getLogger(name)
