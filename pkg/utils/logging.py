import logging
import os

_CONTEXT_FIELDS = ("dataset", "cell", "seed", "epoch")


class _ContextFilter(logging.Filter):
    """Ensure log records always have dataset, cell, seed, epoch."""

    def filter(self, record: logging.LogRecord) -> bool:
        for attr in _CONTEXT_FIELDS:
            if not hasattr(record, attr):
                setattr(record, attr, None)
        return True


def get_logger() -> logging.Logger:
    """Configure and return the synthmix pipeline logger."""
    log_level = os.getenv("SYNTHMIX_LOG_LEVEL", "INFO").upper()
    level = getattr(logging, log_level, logging.INFO)

    logger = logging.getLogger("synthmix")
    if not logger.handlers:
        handler = logging.StreamHandler()
        formatter = logging.Formatter(
            "%(asctime)s %(name)s %(levelname)s %(message)s "
            "dataset=%(dataset)s cell=%(cell)s seed=%(seed)s epoch=%(epoch)s"
        )
        handler.setFormatter(formatter)
        handler.addFilter(_ContextFilter())
        logger.addHandler(handler)
        logger.setLevel(level)
        logger.addFilter(_ContextFilter())
        logger.propagate = False
    return logger


__all__ = ["get_logger"]
