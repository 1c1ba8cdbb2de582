"""Ablation sweeps

One training run per (value, seed) on a fixed train set, each evaluated on a
fixed test set. Rows average the metrics over seeds and keep the order in
which the values were given.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

from src.app.data.scenario import ModeSet, Scenario
from src.app.metrics.evaluation import MetricReport, evaluate, to_csv_row
from src.app.training.trainer import Trainer, predict_modes
from src.config.run_config import RunConfig, deep_merge
from src.core.errors import ConfigError
from src.core.logging import TrainingEventLogger, get_logger, training_logger

logger = get_logger(__name__)

CSV_HEADER = ["value", "avg_min_fde", "avg_min_ade", "actor_mr", "min_joint_mr"]

AXIS_PRESETS: Dict[str, Tuple[str, ...]] = {
    "tau_a": ("10", "30", "50", "100"),
    "tau_l": ("2", "5", "10", "20"),
    "iterations": ("1", "2", "3", "4", "5"),
    "topology_mode": ("soft_braid", "braid", "none"),
    "topology_update": ("true", "false"),
    "components": ("full", "tt_only", "tl_only", "no_update"),
}

COMPONENTS: Dict[str, Dict[str, Any]] = {
    "full": {"use_tt_attention": True, "use_tl_attention": True, "topology_update": True},
    "tt_only": {"use_tt_attention": True, "use_tl_attention": False, "topology_update": True},
    "tl_only": {"use_tt_attention": False, "use_tl_attention": True, "topology_update": True},
    "no_update": {"use_tt_attention": True, "use_tl_attention": True, "topology_update": False},
}

_BOOLEANS = {"true": True, "1": True, "on": True, "false": False, "0": False, "off": False}


def _parse_bool(value: str) -> bool:
    try:
        return _BOOLEANS[value.strip().lower()]
    except KeyError:
        raise ConfigError(f"topology_update: expected true/false, got {value!r}") from None


def _parse_number(axis: str, value: str, kind: Callable[[str], Any]) -> Any:
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"{axis}: cannot parse {value!r} as {kind.__name__}") from None


def axis_overrides(axis: str, value: str) -> Dict[str, Any]:
    """Refiner fields an axis value sets"""
    if axis not in AXIS_PRESETS:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {', '.join(AXIS_PRESETS)}")
    value = value.strip()
    if axis in ("tau_a", "tau_l"):
        return {axis: _parse_number(axis, value, float)}
    if axis == "iterations":
        return {axis: _parse_number(axis, value, int)}
    if axis == "topology_update":
        return {axis: _parse_bool(value)}
    if axis == "components":
        if value not in COMPONENTS:
            raise ConfigError(f"components: unknown value {value!r}; choose from {', '.join(COMPONENTS)}")
        return dict(COMPONENTS[value])
    return {axis: value}


def apply_axis_value(config: RunConfig, axis: str, value: str, seed: Optional[int] = None) -> RunConfig:
    """Copy of ``config`` with the axis value (and optionally the seed) applied

    The result is re-validated, so out-of-range values raise ConfigError.
    """
    overrides: Dict[str, Any] = {"refiner": axis_overrides(axis, value)}
    if seed is not None:
        overrides["seed"] = seed
        overrides["train"] = {"seed": seed}
    raw = deep_merge(config.model_dump(mode="json"), overrides)
    try:
        return RunConfig.model_validate(raw)
    except ValueError as e:
        raise ConfigError(f"{axis}={value}: {e}") from e


@dataclass
class AblationRow:
    value: str
    report: MetricReport
    per_seed: List[MetricReport] = field(default_factory=list)


@dataclass
class AblationResult:
    axis: str
    seeds: List[int]
    rows: List[AblationRow]
    baseline: MetricReport

    def table(self, digits: Optional[int] = 6) -> List[List[str]]:
        return [CSV_HEADER] + [to_csv_row(row.value, row.report, digits) for row in self.rows]


def _mean_report(reports: Sequence[MetricReport]) -> MetricReport:
    """Seed average; the per-scenario breakdown is dropped"""
    if len(reports) == 1:
        return reports[0].model_copy(update={"scenarios": []})
    fields = ["avg_min_fde", "avg_min_ade", "actor_mr", "min_joint_fde", "min_joint_ade", "min_joint_mr"]
    values = {f: sum(getattr(r, f) for r in reports) / len(reports) for f in fields}
    return MetricReport(scenario_count=reports[0].scenario_count, **values)


def run_ablation(
    config: RunConfig,
    axis: str,
    values: Optional[Sequence[str]],
    seeds: Sequence[int],
    train_scenarios: Sequence[Scenario],
    train_modes: Sequence[ModeSet],
    test_scenarios: Sequence[Scenario],
    test_modes: Sequence[ModeSet],
    events: Optional[TrainingEventLogger] = None,
) -> AblationResult:
    """Train and evaluate one refiner per value and seed

    ``values`` falls back to the preset grid of the axis.
    """
    events = events or training_logger
    if axis not in AXIS_PRESETS:
        raise ConfigError(f"unknown ablation axis {axis!r}; choose from {', '.join(AXIS_PRESETS)}")
    values = list(values) if values else list(AXIS_PRESETS[axis])
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("ablation needs at least one seed")

    baseline = evaluate(test_scenarios, test_modes, include_scenarios=False)
    logger.info("Ablation started", extra={"axis": axis, "values": values, "seeds": seeds, **baseline.summary()})

    rows: List[AblationRow] = []
    for value in values:
        reports: List[MetricReport] = []
        for seed in seeds:
            run_config = apply_axis_value(config, axis, value, seed=seed)
            result = Trainer(run_config, events=events).fit(train_scenarios, train_modes)
            refined = predict_modes(
                result.model,
                test_scenarios,
                test_modes,
                batch_size=run_config.train.batch_size,
                threads=run_config.threads,
            )
            report = evaluate(test_scenarios, refined, include_scenarios=False)
            events.log_ablation_point(axis=axis, value=value, seed=seed, metrics=report.summary())
            reports.append(report)
        rows.append(AblationRow(value=value, report=_mean_report(reports), per_seed=reports))

    return AblationResult(axis=axis, seeds=seeds, rows=rows, baseline=baseline)


def write_csv(rows: Sequence[Sequence[str]], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerows(rows)
    return path


def write_ablation(result: AblationResult, out_dir: Path) -> List[Path]:
    """``ablation.csv`` with one row per value and ``baseline.csv`` with the coarse metrics"""
    out_dir = Path(out_dir)
    table = write_csv(result.table(), out_dir / "ablation.csv")
    baseline = write_csv([CSV_HEADER, to_csv_row("coarse", result.baseline)], out_dir / "baseline.csv")
    return [table, baseline]
