from __future__ import annotations

import logging
import os
from dataclasses import dataclass

from dotenv import load_dotenv

DEFAULT_LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
LOG_LEVELS = ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG")


@dataclass(slots=True)
class Config:
    log_level: str
    log_format: str

    @property
    def level(self) -> int:
        return getattr(logging, self.log_level)


def load_config() -> Config:
    """Diagnostics settings only; nothing here changes what a run computes or writes."""
    load_dotenv()

    log_level = os.getenv("KEEPRATE_LOG_LEVEL", "INFO").strip().upper() or "INFO"
    if log_level not in LOG_LEVELS:
        raise ValueError(f"KEEPRATE_LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}")

    log_format = os.getenv("KEEPRATE_LOG_FORMAT", "").strip() or DEFAULT_LOG_FORMAT

    return Config(log_level=log_level, log_format=log_format)
