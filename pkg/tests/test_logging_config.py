"""Tests for the logging setup."""

import logging

from utils.logging_config import DuplicateFilter, configure_logging, get_logger


def make_record(name, message, created, level=logging.INFO):
    record = logging.LogRecord(name, level, __file__, 1, message, None, None)
    record.created = created
    return record


class TestDuplicateFilter:

    def test_drops_repeats_inside_window(self):
        duplicates = DuplicateFilter(window=1.0)
        assert duplicates.filter(make_record("divnet", "same", 10.0))
        assert not duplicates.filter(make_record("divnet", "same", 10.5))
        assert duplicates.filter(make_record("divnet", "same", 11.6))

    def test_keys_on_logger_and_level(self):
        duplicates = DuplicateFilter(window=1.0)
        assert duplicates.filter(make_record("a", "same", 1.0))
        assert duplicates.filter(make_record("b", "same", 1.0))
        assert duplicates.filter(make_record("a", "same", 1.0, level=logging.WARNING))

    def test_forgets_old_entries(self):
        duplicates = DuplicateFilter(window=1.0)
        for index in range(5000):
            duplicates.filter(make_record("divnet", f"message {index}", float(index)))
        assert len(duplicates._seen) < 5000  # pylint: disable=protected-access


def test_configure_writes_rotating_file(tmp_path):
    log_file = tmp_path / "divnet.log"
    configure_logging("DEBUG", str(log_file))
    try:
        get_logger("services.test").info("written to %s", "file")
        for handler in logging.getLogger().handlers:
            handler.flush()
        assert "written to file" in log_file.read_text()
    finally:
        configure_logging("INFO", None)
    assert not any(isinstance(h, logging.FileHandler) for h in logging.getLogger().handlers)
