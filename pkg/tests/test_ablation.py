"""Tests for ablation sweeps"""

import csv

import pytest

from src.app.ablation import (
    AXIS_PRESETS,
    CSV_HEADER,
    apply_axis_value,
    axis_overrides,
    run_ablation,
    write_ablation,
)
from src.core.errors import ConfigError


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


@pytest.mark.unit
class TestAxisValues:
    @pytest.mark.parametrize(
        "axis,value,expected",
        [
            ("tau_a", "30", {"tau_a": 30.0}),
            ("tau_l", " 2.5 ", {"tau_l": 2.5}),
            ("iterations", "4", {"iterations": 4}),
            ("topology_mode", "braid", {"topology_mode": "braid"}),
            ("topology_update", "off", {"topology_update": False}),
            ("topology_update", "TRUE", {"topology_update": True}),
            ("components", "tl_only", {"use_tt_attention": False, "use_tl_attention": True, "topology_update": True}),
        ],
    )
    def test_overrides(self, axis, value, expected):
        assert axis_overrides(axis, value) == expected

    @pytest.mark.parametrize(
        "axis,value",
        [("tau_a", "far"), ("iterations", "2.5"), ("topology_update", "maybe"), ("components", "everything"), ("width", "1")],
    )
    def test_bad_values(self, axis, value):
        with pytest.raises(ConfigError):
            axis_overrides(axis, value)

    def test_every_preset_applies(self, tiny_config):
        for axis, values in AXIS_PRESETS.items():
            for value in values:
                apply_axis_value(tiny_config, axis, value)

    def test_apply_sets_value_and_seed(self, tiny_config):
        config = apply_axis_value(tiny_config, "iterations", "3", seed=8)
        assert config.refiner.iterations == 3
        assert config.seed == 8 and config.train.seed == 8
        assert config.refiner.embed_dim == tiny_config.refiner.embed_dim
        assert tiny_config.refiner.iterations == 2

    def test_apply_revalidates(self, tiny_config):
        with pytest.raises(ConfigError, match="iterations=0"):
            apply_axis_value(tiny_config, "iterations", "0")
        with pytest.raises(ConfigError):
            apply_axis_value(tiny_config, "tau_a", "-5")


@pytest.mark.integration
class TestRunAblation:
    def test_iteration_sweep(self, tiny_config, small_scenarios, small_modes, tmp_path, mocker):
        events = mocker.Mock()
        result = run_ablation(
            tiny_config, "iterations", ["1", "2", "3"], [0],
            small_scenarios[:3], small_modes[:3], small_scenarios[3:], small_modes[3:],
            events=events,
        )
        assert [row.value for row in result.rows] == ["1", "2", "3"]
        assert events.log_ablation_point.call_count == 3
        assert result.baseline.scenario_count == 1

        ablation_csv, baseline_csv = write_ablation(result, tmp_path)
        rows = read_csv(ablation_csv)
        assert rows[0] == CSV_HEADER
        assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
        assert all(float(x) >= 0 for r in rows[1:] for x in r[1:])
        baseline = read_csv(baseline_csv)
        assert baseline[0] == CSV_HEADER and baseline[1][0] == "coarse"

    def test_seeds_are_averaged(self, tiny_config, small_scenarios, small_modes, mocker):
        result = run_ablation(
            tiny_config, "tau_a", ["30"], [0, 1],
            small_scenarios[:3], small_modes[:3], small_scenarios[3:], small_modes[3:],
            events=mocker.Mock(),
        )
        row = result.rows[0]
        assert len(row.per_seed) == 2
        expected = sum(r.avg_min_fde for r in row.per_seed) / 2
        assert row.report.avg_min_fde == pytest.approx(expected)
        assert row.report.scenarios == []

    def test_preset_grid_when_values_omitted(self, tiny_config, small_scenarios, small_modes, mocker):
        result = run_ablation(
            tiny_config, "topology_update", None, [0],
            small_scenarios[:3], small_modes[:3], small_scenarios[3:], small_modes[3:],
            events=mocker.Mock(),
        )
        assert [row.value for row in result.rows] == list(AXIS_PRESETS["topology_update"])

    def test_needs_seeds(self, tiny_config, small_scenarios, small_modes):
        with pytest.raises(ConfigError):
            run_ablation(tiny_config, "tau_a", ["30"], [], small_scenarios, small_modes, small_scenarios, small_modes)
