"""
Logging configuration module with duplicate filtering.

This module provides a centralized logging configuration shared by the CLI,
the experiment harness and the numerical services.
"""

import logging
import logging.config
from typing import Dict, Optional, Tuple

from utils.settings import get_settings

DETAILED_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(process)d:%(thread)d - %(message)s"


class DuplicateFilter(logging.Filter):
    """
    Drop a record when the same logger emitted the same message at the same
    level less than ``window`` seconds earlier.
    """
    def __init__(self, window: float = 1.0):
        super().__init__()
        self.window = window
        self._seen: Dict[Tuple[str, int, str], float] = {}

    def filter(self, record: logging.LogRecord) -> bool:
        key = (record.name, record.levelno, record.getMessage())
        previous = self._seen.get(key)
        self._seen[key] = record.created
        if len(self._seen) > 4096:
            horizon = record.created - self.window
            self._seen = {k: t for k, t in self._seen.items() if t >= horizon}
        return previous is None or record.created - previous >= self.window


class LoggerManager:
    """
    Process-wide logging setup. The first ``get_logger`` call applies the
    environment settings; ``configure`` replaces them, rebuilding the handlers
    so they write to the current ``sys.stderr``.
    """
    _logger: Optional[logging.Logger] = None

    @classmethod
    def configure(cls, level: Optional[str] = None, log_file: Optional[str] = None) -> logging.Logger:
        """
        (Re)configure logging, overriding the environment settings.

        Args:
            level (str, optional): Log level name such as ``"DEBUG"``.
            log_file (str, optional): Path of a rotating log file.

        Returns:
            logging.Logger: The toolkit logger.
        """
        settings = get_settings()
        cls._logger = cls._configure_logging((level or settings.log_level).upper(),
                                             log_file or settings.log_file)
        return cls._logger

    @classmethod
    def get_logger(cls, name: str = None) -> logging.Logger:
        """
        Get or create the configured logger instance.

        Args:
            name (str, optional): Logger name. Defaults to the toolkit logger if None.

        Returns:
            logging.Logger: Configured logger instance
        """
        if cls._logger is None:
            cls.configure()
        return logging.getLogger(name) if name else cls._logger

    @staticmethod
    def _configure_logging(level: str, log_file: Optional[str]) -> logging.Logger:
        """
        Apply the dictionary configuration and return the toolkit logger.

        Falls back to ``logging.basicConfig`` when the configuration is rejected,
        for instance when the log file directory is not writable.
        """
        try:
            duplicate_filter = DuplicateFilter(window=1.0)
            handlers = {
                "console": {
                    "class": "logging.StreamHandler",
                    "formatter": "detailed",
                    "level": level,
                    "filters": ["duplicate_filter"]
                }
            }
            if log_file:
                handlers["file"] = {
                    "class": "logging.handlers.RotatingFileHandler",
                    "filename": log_file,
                    "maxBytes": 10 * 1024 * 1024,  # 10 MB
                    "backupCount": 5,
                    "formatter": "detailed",
                    "level": level,
                    "filters": ["duplicate_filter"]
                }

            logging.config.dictConfig({
                "version": 1,
                "disable_existing_loggers": False,
                "formatters": {"detailed": {"format": DETAILED_FORMAT}},
                "filters": {"duplicate_filter": {"()": lambda: duplicate_filter}},
                "handlers": handlers,
                "loggers": {
                    "": {"handlers": list(handlers), "level": level, "propagate": True},
                    "matplotlib": {"level": "WARNING"},
                },
            })
            logger = logging.getLogger("divnet")
            logger.debug("Logging system initialized at level %s", level)
            return logger

        except (ValueError, OSError) as exc:
            logging.basicConfig(level=logging.INFO, format=DETAILED_FORMAT)
            logger = logging.getLogger("divnet")
            logger.warning("Failed to configure logging from %s, falling back to basic logs: %s",
                           log_file or "console", exc)
            return logger


def get_logger(name: str = None) -> logging.Logger:
    """Get the configured logger instance."""
    return LoggerManager.get_logger(name)


def configure_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> logging.Logger:
    """Reconfigure logging from CLI flags."""
    return LoggerManager.configure(level, log_file)
