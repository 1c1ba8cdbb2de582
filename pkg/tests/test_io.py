"""Tests for scenario and mode-set files"""

import json

import numpy as np
import pytest
from pydantic import ValidationError

from src.app.data.io import MODE_FORMAT, SCENARIO_FORMAT, read_modes, read_scenarios, write_modes, write_scenarios
from src.app.data.scenario import ModeSet, pair_modes
from src.core.errors import FormatVersionError, InvalidInputError, ParseError


def lines(path):
    return path.read_text(encoding="utf-8").splitlines()


@pytest.mark.unit
class TestRoundTrip:
    def test_scenarios(self, small_scenarios, tmp_path):
        path = write_scenarios(tmp_path / "out" / "scenarios.jsonl", small_scenarios)
        loaded = read_scenarios(path)
        assert [s.scenario_id for s in loaded] == [s.scenario_id for s in small_scenarios]
        for original, copy in zip(small_scenarios, loaded):
            np.testing.assert_array_equal(copy.histories(), original.histories())
            np.testing.assert_array_equal(copy.futures(), original.futures())
            assert [lane.tag for lane in copy.lanes] == [lane.tag for lane in original.lanes]

    def test_modes(self, small_modes, tmp_path):
        path = write_modes(tmp_path / "coarse.jsonl", small_modes)
        for original, copy in zip(small_modes, read_modes(path)):
            np.testing.assert_array_equal(copy.modes, original.modes)

    def test_header(self, small_scenarios, tmp_path):
        path = write_scenarios(tmp_path / "scenarios.jsonl", small_scenarios)
        header = json.loads(lines(path)[0])
        assert header["format"] == SCENARIO_FORMAT
        assert header["count"] == len(small_scenarios)
        assert header["units"]["position"] == "m"
        assert len(lines(path)) == len(small_scenarios) + 1

    def test_byte_identical_rewrite(self, small_scenarios, tmp_path):
        first = write_scenarios(tmp_path / "a.jsonl", small_scenarios)
        second = write_scenarios(tmp_path / "b.jsonl", read_scenarios(first))
        assert first.read_bytes() == second.read_bytes()


@pytest.mark.unit
class TestMalformedFiles:
    def test_truncated(self, small_scenarios, tmp_path):
        path = write_scenarios(tmp_path / "scenarios.jsonl", small_scenarios)
        path.write_text("\n".join(lines(path)[:-1]) + "\n", encoding="utf-8")
        with pytest.raises(ParseError, match="truncated"):
            read_scenarios(path)

    def test_version_mismatch(self, small_modes, tmp_path):
        path = write_modes(tmp_path / "coarse.jsonl", small_modes)
        content = lines(path)
        content[0] = content[0].replace(MODE_FORMAT, "sbr-mode-v0")
        path.write_text("\n".join(content) + "\n", encoding="utf-8")
        with pytest.raises(FormatVersionError) as info:
            read_modes(path)
        assert info.value.line == 1

    def test_wrong_file_kind(self, small_modes, tmp_path):
        path = write_modes(tmp_path / "coarse.jsonl", small_modes)
        with pytest.raises(FormatVersionError):
            read_scenarios(path)

    def test_malformed_json_reports_position(self, small_scenarios, tmp_path):
        path = write_scenarios(tmp_path / "scenarios.jsonl", small_scenarios)
        content = lines(path)
        content[2] = '{"scenario_id": oops}'
        path.write_text("\n".join(content) + "\n", encoding="utf-8")
        with pytest.raises(ParseError) as info:
            read_scenarios(path)
        assert info.value.line == 3
        assert info.value.offset == 17
        assert info.value.path == str(path)

    def test_scenario_without_agents(self, small_scenarios, tmp_path):
        path = write_scenarios(tmp_path / "scenarios.jsonl", small_scenarios[:1])
        content = lines(path)
        record = json.loads(content[1])
        record["agents"] = []
        content[1] = json.dumps(record)
        path.write_text("\n".join(content) + "\n", encoding="utf-8")
        with pytest.raises(ParseError, match="agents") as info:
            read_scenarios(path)
        assert info.value.line == 2

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(ParseError, match="header"):
            read_scenarios(path)

    def test_not_utf8(self, tmp_path):
        path = tmp_path / "binary.jsonl"
        path.write_bytes(b"\xff\xfe\x00garbage\n")
        with pytest.raises(ParseError):
            read_modes(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ParseError):
            read_modes(tmp_path / "absent.jsonl")

    def test_non_finite_modes_rejected(self, tmp_path):
        path = tmp_path / "coarse.jsonl"
        header = json.dumps({"format": MODE_FORMAT, "units": {"position": "m"}, "count": 1})
        record = '{"modes": [[[[NaN, 0.0], [1.0, 0.0], [2.0, 0.0]]]], "scenario_id": "s"}'
        path.write_text(header + "\n" + record + "\n", encoding="utf-8")
        with pytest.raises(ParseError, match="finite"):
            read_modes(path)


@pytest.mark.unit
class TestPairing:
    def test_orders_by_scenario(self, small_scenarios, small_modes):
        paired = pair_modes(small_scenarios, list(reversed(small_modes)))
        assert [m.scenario_id for m in paired] == [s.scenario_id for s in small_scenarios]

    def test_missing_mode_set(self, small_scenarios, small_modes):
        with pytest.raises(InvalidInputError, match="no mode set"):
            pair_modes(small_scenarios, small_modes[1:])

    def test_wrong_shape(self, small_scenarios):
        scene = small_scenarios[0]
        bad = ModeSet(scenario_id=scene.scenario_id, modes=np.zeros((1, scene.num_agents + 1, scene.future_len, 2)))
        with pytest.raises(InvalidInputError):
            pair_modes([scene], [bad])

    @pytest.mark.parametrize("shape", [(2, 0, 10, 2), (0, 1, 10, 2), (2, 1, 0, 2)])
    def test_empty_axis_rejected(self, shape):
        with pytest.raises(ValidationError, match="K>=1, N>=1"):
            ModeSet(scenario_id="s", modes=np.zeros(shape))

    def test_agentless_mode_file_rejected(self, tmp_path):
        path = tmp_path / "coarse.jsonl"
        header = json.dumps({"format": MODE_FORMAT, "units": {"position": "m"}, "count": 1})
        path.write_text(header + "\n" + '{"modes": [[], []], "scenario_id": "s"}\n', encoding="utf-8")
        with pytest.raises(ParseError):
            read_modes(path)
