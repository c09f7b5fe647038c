import logging
import sys
from pathlib import Path

ROOT_LOGGER = "dvlbeam"

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s - %(message)s"
DATE_FORMAT = "%Y-%m-%d %H:%M:%S"


def _level(name: str) -> int:
    level = logging.getLevelName(name.upper())
    if not isinstance(level, int):
        raise ValueError(f"unknown log level: {name}")
    return level


def _handler(handler: logging.Handler) -> logging.Handler:
    handler.setFormatter(logging.Formatter(fmt=LOG_FORMAT, datefmt=DATE_FORMAT))
    return handler


def setup_root_logger(log_level: str = "INFO", log_file: Path | None = None) -> logging.Logger:
    """
    Configure the ``dvlbeam`` logger; every module logs through a child of it.

    Console output goes to stderr (stdout carries tables and paths). Handlers
    from an earlier call are replaced.
    """
    root = logging.getLogger(ROOT_LOGGER)
    for old in list(root.handlers):
        root.removeHandler(old)
        if isinstance(old, logging.FileHandler):
            old.close()

    root.setLevel(_level(log_level))
    root.addHandler(_handler(logging.StreamHandler(sys.stderr)))
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        root.addHandler(_handler(logging.FileHandler(log_file, encoding="utf-8")))

    root.propagate = False
    return root
