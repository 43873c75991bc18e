from __future__ import annotations

import logging
import sys
from typing import Sequence

from keeprate.cli import EXIT_INVALID, dispatch
from keeprate.config import Config, load_config

logger = logging.getLogger(__name__)


def setup_logging(config: Config) -> None:
    logging.basicConfig(
        level=config.level,
        format=config.log_format,
        stream=sys.stderr,
    )


def main(argv: Sequence[str] | None = None) -> int:
    try:
        config = load_config()
    except ValueError as exc:
        print(f"keeprate: {exc}", file=sys.stderr)
        return EXIT_INVALID
    setup_logging(config)
    try:
        return dispatch(argv)
    except Exception:
        logger.exception("Unexpected failure")
        return EXIT_INVALID


def run() -> None:
    sys.exit(main())
