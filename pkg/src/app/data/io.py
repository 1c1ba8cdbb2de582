"""Line-delimited scenario and mode-set files

Both files are UTF-8 JSON Lines. Line 1 is a header record naming the format
version, the units and the number of records that follow; every further line
is one record. Floats are written with full round-trip precision.
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterator, List, Sequence, Tuple, Type, TypeVar, Union

from pydantic import BaseModel, ValidationError

from src.app.data.scenario import ModeSet, Scenario
from src.core.errors import FormatVersionError, ParseError

SCENARIO_FORMAT = "sbr-scn-v1"
MODE_FORMAT = "sbr-mode-v1"
SCENARIO_UNITS = {"position": "m", "sample_rate": "Hz", "time": "samples"}
MODE_UNITS = {"position": "m"}

PathLike = Union[str, Path]
RecordT = TypeVar("RecordT", bound=BaseModel)


def _dumps(record: Dict[str, Any]) -> str:
    try:
        return json.dumps(record, sort_keys=True, allow_nan=False, separators=(",", ":"))
    except ValueError as e:
        raise ParseError(f"cannot serialize record: {e}") from e


def _write(path: PathLike, fmt: str, units: Dict[str, str], records: Sequence[BaseModel]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"format": fmt, "units": units, "count": len(records)}
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dumps(header) + "\n")
        for record in records:
            f.write(_dumps(record.model_dump(mode="json")) + "\n")
    return path


def _read_lines(path: PathLike) -> Iterator[Tuple[int, str]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            for number, line in enumerate(f, start=1):
                yield number, line
    except OSError as e:
        raise ParseError(f"cannot read file: {e}", path=str(path)) from e
    except UnicodeDecodeError as e:
        raise ParseError(f"file is not UTF-8: {e}", path=str(path), offset=e.start) from e


def _parse(line: str, path: PathLike, number: int) -> Dict[str, Any]:
    try:
        value = json.loads(line)
    except json.JSONDecodeError as e:
        raise ParseError(f"malformed JSON: {e.msg}", path=str(path), line=number, offset=e.colno) from e
    if not isinstance(value, dict):
        raise ParseError("record must be a JSON object", path=str(path), line=number, offset=1)
    return value


def _validation_message(error: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(p) for p in err['loc']) or 'record'}: {err['msg']}" for err in error.errors()
    )


def _read(path: PathLike, fmt: str, model: Type[RecordT]) -> List[RecordT]:
    header = None
    records: List[RecordT] = []
    for number, line in _read_lines(path):
        if not line.strip():
            continue
        value = _parse(line, path, number)
        if header is None:
            header = value
            found = header.get("format")
            if found != fmt:
                raise FormatVersionError(
                    f"unsupported format {found!r}, expected {fmt!r}", path=str(path), line=number
                )
            if not isinstance(header.get("count"), int) or header["count"] < 0:
                raise ParseError("header needs a non-negative integer 'count'", path=str(path), line=number)
            continue
        try:
            records.append(model.model_validate(value))
        except ValidationError as e:
            raise ParseError(f"invalid record: {_validation_message(e)}", path=str(path), line=number) from e

    if header is None:
        raise ParseError("missing header record", path=str(path), line=1)
    if len(records) != header["count"]:
        raise ParseError(
            f"header announces {header['count']} records but the file holds {len(records)} (truncated?)",
            path=str(path),
        )
    return records


def write_scenarios(path: PathLike, scenarios: Sequence[Scenario]) -> Path:
    return _write(path, SCENARIO_FORMAT, SCENARIO_UNITS, scenarios)


def read_scenarios(path: PathLike) -> List[Scenario]:
    return _read(path, SCENARIO_FORMAT, Scenario)


def write_modes(path: PathLike, modesets: Sequence[ModeSet]) -> Path:
    return _write(path, MODE_FORMAT, MODE_UNITS, modesets)


def read_modes(path: PathLike) -> List[ModeSet]:
    return _read(path, MODE_FORMAT, ModeSet)
