"""
Environment configuration module.

Reads the toolkit's environment variables (optionally from a ``.env`` file)
into a validated, cached settings object.
"""

import os
from functools import lru_cache
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# Load environment variables
load_dotenv()


class Settings(BaseModel):
    """Process-wide settings resolved from the environment."""
    data_root: str = Field(
        "data",
        description="Directory holding the MNIST, MNIST_ROT and CIFAR-10 files."
    )
    cache_dir: str = Field(
        ".divnet_cache",
        description="Directory where trained networks are cached between runs."
    )
    log_file: Optional[str] = Field(
        None,
        description="Rotating log file; console only when unset."
    )
    log_level: str = Field("INFO", description="Root log level.")


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Build the settings from the current environment.

    Returns:
        Settings: Cached settings instance. Call ``get_settings.cache_clear()``
        after changing the environment.
    """
    return Settings(
        data_root=os.getenv("DIVNET_DATA_ROOT", "data"),
        cache_dir=os.getenv("DIVNET_CACHE_DIR", ".divnet_cache"),
        log_file=os.getenv("DIVNET_LOG_FILE") or None,
        log_level=os.getenv("DIVNET_LOG_LEVEL", "INFO").upper(),
    )
