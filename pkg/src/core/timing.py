"""Command timing and run identifiers"""

import time
import uuid
from contextlib import contextmanager
from typing import Any, Iterator

from src.core.logging import RunContextAdapter, get_logger


def new_run_id() -> str:
    return str(uuid.uuid4())


@contextmanager
def command_span(name: str, run_id: str, **fields: Any) -> Iterator[RunContextAdapter]:
    """Log start, completion and failure of a command with its duration

    Yields a logger stamped with the run ID for use inside the command.
    """
    logger = RunContextAdapter(get_logger("softbraid.command"), run_id=run_id, command=name)
    start_time = time.perf_counter()
    extra = dict(fields)
    logger.info(f"Command started: {name}", extra=dict(extra))
    try:
        yield logger
    except Exception as e:
        duration_ms = int((time.perf_counter() - start_time) * 1000)
        extra.update({
            "duration_ms": duration_ms,
            "error": str(e),
            "error_type": type(e).__name__,
        })
        logger.error(f"Command failed: {name} -> {type(e).__name__}", extra=extra)
        raise
    duration_ms = int((time.perf_counter() - start_time) * 1000)
    extra["duration_ms"] = duration_ms
    logger.info(f"Command completed: {name}", extra=extra)
