import logging
import os
import sys

from dotenv import load_dotenv

load_dotenv()

__version__ = "0.3.0"

logger = logging.getLogger(__name__)

_LOG_LEVELS = {"DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"}


class Settings:
    # Output Configuration
    OUT_DIR = os.getenv("ATTNSPEC_OUT", "./out")

    # Execution Configuration
    THREADS = int(os.getenv("ATTNSPEC_THREADS", os.cpu_count() or 1))
    SEED = int(os.getenv("ATTNSPEC_SEED", 0))

    # Logging
    LOG_LEVEL = os.getenv("ATTNSPEC_LOG_LEVEL", "WARNING").upper()

    def validate(self):
        """Validate runtime configuration, falling back to defaults"""
        if self.THREADS < 1:
            logger.warning(f"ATTNSPEC_THREADS={self.THREADS} is not positive, using 1")
            self.THREADS = 1
        if self.SEED < 0 or self.SEED >= 2**64:
            logger.warning(f"ATTNSPEC_SEED={self.SEED} is outside [0, 2^64), using 0")
            self.SEED = 0
        if self.LOG_LEVEL not in _LOG_LEVELS:
            logger.warning(f"ATTNSPEC_LOG_LEVEL={self.LOG_LEVEL} is unknown, using WARNING")
            self.LOG_LEVEL = "WARNING"


def configure_logging(level: str | None = None) -> None:
    """Route all package logging to stderr; data goes to stdout and files only."""
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


settings = Settings()
settings.validate()
