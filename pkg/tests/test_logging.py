"""Tests for structured logging and command spans"""

import json
import logging

import pytest

from src.core.logging import (
    CustomJsonFormatter,
    RunContextAdapter,
    TrainingEventLogger,
    configure_logging,
    get_logger,
)
from src.core.timing import command_span, new_run_id


def format_record(record):
    formatter = CustomJsonFormatter(
        "%(timestamp)s %(levelname)s %(name)s %(message)s",
        rename_fields={"levelname": "severity", "name": "logger"},
    )
    return json.loads(formatter.format(record))


@pytest.mark.unit
class TestJsonFormatter:
    def test_adds_app_fields_and_run_id(self):
        record = logging.LogRecord("softbraid.test", logging.INFO, __file__, 1, "hello", None, None)
        record.run_id = "run-1"
        payload = format_record(record)
        assert payload["message"] == "hello"
        assert payload["app_name"] == "softbraid-refiner"
        assert payload["run_id"] == "run-1"
        assert payload["logger"] == "softbraid.test"
        assert payload["severity"] == "INFO"
        assert "timestamp" in payload

    def test_configure_logging_writes_json_file(self, tmp_path, monkeypatch):
        from src.config.settings import reload_settings

        log_file = tmp_path / "run.log"
        monkeypatch.setenv("SBR_LOG_FILE_PATH", str(log_file))
        monkeypatch.setenv("SBR_LOG_LEVEL", "INFO")
        reload_settings()
        configure_logging()
        get_logger("softbraid.test").info("written", extra={"epoch": 3})
        for handler in logging.root.handlers:
            handler.flush()
        lines = [json.loads(line) for line in log_file.read_text(encoding="utf-8").splitlines()]
        assert any(entry["message"] == "written" and entry["epoch"] == 3 for entry in lines)


@pytest.mark.unit
class TestEvents:
    def test_training_events_carry_event_type(self, caplog):
        events = TrainingEventLogger(get_logger("training"))
        with caplog.at_level(logging.INFO, logger="training"):
            events.log_epoch(epoch=1, step=10, lr=1e-4, train_loss=0.5, val_metrics={"avg_min_fde": 1.2})
            events.log_checkpoint(path="out/checkpoint.sbr", step=10, tensors=42)
            events.log_ablation_point(axis="tau_a", value="30", seed=0, metrics={"avg_min_fde": 1.0})
            events.log_numeric_failure(step=11, reason="nan")
        kinds = [record.event_type for record in caplog.records]
        assert kinds == ["epoch_end", "checkpoint", "ablation_point", "numeric_failure"]
        assert caplog.records[0].val_avg_min_fde == 1.2
        assert caplog.records[-1].levelno == logging.ERROR

    def test_run_context_adapter(self, caplog):
        adapter = RunContextAdapter(get_logger("softbraid.test"), run_id="abc", command="train")
        with caplog.at_level(logging.INFO, logger="softbraid.test"):
            adapter.info("inside", extra={"k": 1})
        record = caplog.records[0]
        assert (record.run_id, record.command, record.k) == ("abc", "train", 1)


@pytest.mark.unit
class TestCommandSpan:
    def test_logs_start_and_completion(self, caplog):
        with caplog.at_level(logging.INFO, logger="softbraid.command"):
            with command_span("generate", "run-7", count=3) as span:
                span.info("working")
        messages = [r.getMessage() for r in caplog.records]
        assert messages == ["Command started: generate", "working", "Command completed: generate"]
        assert caplog.records[-1].duration_ms >= 0
        assert all(r.run_id == "run-7" for r in caplog.records)

    def test_failure_is_logged_and_reraised(self, caplog):
        with caplog.at_level(logging.INFO, logger="softbraid.command"):
            with pytest.raises(ValueError):
                with command_span("train", "run-8"):
                    raise ValueError("boom")
        failed = caplog.records[-1]
        assert failed.levelno == logging.ERROR
        assert failed.error_type == "ValueError"
        assert failed.error == "boom"

    def test_run_ids_are_unique(self):
        assert new_run_id() != new_run_id()
