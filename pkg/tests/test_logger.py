import logging

import pytest

from utils.logger import ROOT_LOGGER, setup_root_logger


def test_repeated_setup_keeps_one_console_handler():
    setup_root_logger("INFO")
    root = setup_root_logger("DEBUG")
    assert len(root.handlers) == 1
    assert root.level == logging.DEBUG


def test_log_file(tmp_path):
    log_file = tmp_path / "logs" / "run.log"
    setup_root_logger("INFO", log_file=log_file)
    logging.getLogger(f"{ROOT_LOGGER}.trainer").info("epoch %d done", 3)
    for handler in logging.getLogger(ROOT_LOGGER).handlers:
        handler.flush()
    assert "[INFO] dvlbeam.trainer - epoch 3 done" in log_file.read_text(encoding="utf-8")


def test_unknown_level():
    with pytest.raises(ValueError):
        setup_root_logger("LOUD")
