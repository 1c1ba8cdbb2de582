"""Logging configuration for the application

Sets up structured JSON logging with run IDs and training event tracking.
Logs are diagnostics only; they never feed the deterministic artifacts a
command writes.
"""

import logging
import sys
from datetime import datetime, timezone
from typing import Any, Dict, Optional

from pythonjsonlogger import jsonlogger

from src.config.settings import get_settings


class RunContextAdapter(logging.LoggerAdapter):
    """Adds the run ID of the current command to log records"""

    def __init__(self, logger: logging.Logger, run_id: str, command: Optional[str] = None):
        super().__init__(logger, {})
        self.run_id = run_id
        self.command = command

    def process(self, msg, kwargs):
        """Add run ID and command name to the log record"""
        extra = kwargs.get("extra", {})
        extra["run_id"] = self.run_id
        if self.command:
            extra["command"] = self.command
        kwargs["extra"] = extra
        return msg, kwargs


class CustomJsonFormatter(jsonlogger.JsonFormatter):
    """Custom JSON formatter with additional fields"""

    def add_fields(self, log_record, record, message_dict):
        """Add custom fields to log record"""
        super().add_fields(log_record, record, message_dict)
        log_record["timestamp"] = datetime.now(timezone.utc).isoformat()
        settings = get_settings()
        log_record["app_name"] = settings.app_name
        log_record["app_version"] = settings.app_version

        if hasattr(record, "run_id"):
            log_record["run_id"] = record.run_id


class TrainingEventLogger:
    """Specialized logger for training and experiment events"""

    def __init__(self, logger: logging.Logger):
        self.logger = logger

    def log_epoch(
        self,
        epoch: int,
        step: int,
        lr: float,
        train_loss: float,
        val_loss: Optional[float] = None,
        val_metrics: Optional[Dict[str, Any]] = None,
    ):
        """Log the end of a training epoch"""
        event = {
            "event_type": "epoch_end",
            "epoch": epoch,
            "step": step,
            "lr": lr,
            "train_loss": train_loss,
        }
        if val_loss is not None:
            event["val_loss"] = val_loss
        if val_metrics:
            event["val_avg_min_fde"] = val_metrics.get("avg_min_fde")
            event["val_avg_min_ade"] = val_metrics.get("avg_min_ade")
        self.logger.info("Epoch finished", extra=event)

    def log_checkpoint(self, path: str, step: int, tensors: int):
        """Log a checkpoint write"""
        event = {
            "event_type": "checkpoint",
            "path": path,
            "step": step,
            "tensors": tensors,
        }
        self.logger.info("Checkpoint written", extra=event)

    def log_numeric_failure(self, step: int, reason: str):
        """Log a non-finite loss or gradient"""
        event = {
            "event_type": "numeric_failure",
            "step": step,
            "reason": reason,
        }
        self.logger.error("Numeric failure", extra=event)

    def log_ablation_point(self, axis: str, value: str, seed: int, metrics: Dict[str, Any]):
        """Log one finished run of an ablation sweep"""
        event = {
            "event_type": "ablation_point",
            "axis": axis,
            "value": value,
            "seed": seed,
            "avg_min_fde": metrics.get("avg_min_fde"),
            "avg_min_ade": metrics.get("avg_min_ade"),
        }
        self.logger.info("Ablation run finished", extra=event)


def configure_logging():
    """Configure application logging"""
    settings = get_settings()

    # Set log level
    log_level = getattr(logging, settings.log_level.upper(), logging.INFO)

    if settings.log_file_path:
        handler = logging.FileHandler(settings.log_file_path)
    else:
        # stdout carries command output; diagnostics go to stderr
        handler = logging.StreamHandler(sys.stderr)

    if settings.log_format == "json":
        formatter = CustomJsonFormatter(
            "%(timestamp)s %(levelname)s %(name)s %(message)s",
            rename_fields={"levelname": "severity", "name": "logger"},
        )
    else:
        formatter = logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")

    handler.setFormatter(formatter)

    # Configure root logger
    for previous in logging.root.handlers:
        previous.close()
    logging.root.setLevel(log_level)
    logging.root.handlers = [handler]

    logger = logging.getLogger(__name__)
    logger.debug(
        "Logging configured",
        extra={
            "log_level": settings.log_level,
            "log_format": settings.log_format,
            "log_file": settings.log_file_path or "stderr",
        },
    )

    configure_third_party_loggers()


def configure_third_party_loggers():
    """Configure logging levels for third-party libraries"""
    settings = get_settings()
    third_party_level = logging.DEBUG if settings.debug else logging.WARNING
    for logger_name in ["markdown_it"]:
        logging.getLogger(logger_name).setLevel(third_party_level)


def get_logger(name: str) -> logging.Logger:
    """Get a logger instance"""
    return logging.getLogger(name)


# Create training event logger instance
training_logger = TrainingEventLogger(get_logger("training"))
