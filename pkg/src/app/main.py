"""Command-line entry point

Run with ``python -m src.app.main <command>``. Every command reads its inputs
from files and writes its artifacts under an output directory together with
the effective configuration (``config.yaml``) and a ``manifest.json`` listing
the produced files. Commands share no state beyond those files.

Exit codes: 0 success, 2 usage error, 3 parse or validation error,
4 numeric failure.
"""

import functools
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import click
import yaml
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table

from src.app.ablation import AXIS_PRESETS, run_ablation, write_ablation
from src.app.data.coarse import coarse_predict_all
from src.app.data.generator import generate as generate_scenarios
from src.app.data.io import read_modes, read_scenarios, write_modes, write_scenarios
from src.app.data.scenario import pair_modes
from src.app.metrics.evaluation import MetricReport, evaluate
from src.app.nn.archive import ParameterArchive
from src.app.refiner.model import SoftBraidRefiner
from src.app.training.trainer import Trainer, predict_modes, write_training_log
from src.config.run_config import RunConfig, deep_merge, load_run_config
from src.config.settings import get_settings
from src.config.validation import validate_and_print
from src.core.errors import RefinerError
from src.core.logging import configure_logging, get_logger, training_logger
from src.core.timing import command_span, new_run_id

logger = get_logger(__name__)

SCENARIO_FILE = "scenarios.jsonl"
COARSE_FILE = "coarse.jsonl"
REFINED_FILE = "refined.jsonl"
CHECKPOINT_FILE = "checkpoint.sbr"
TRAINING_LOG_FILE = "training_log.jsonl"
REPORT_FILE = "report.json"
CONFIG_FILE = "config.yaml"
MANIFEST_FILE = "manifest.json"


# ============================================================================
# Helpers
# ============================================================================

def handle_errors(func: Callable) -> Callable:
    """Map engine errors onto exit codes with a one-line message on stderr"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except RefinerError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)
        except ValidationError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(3)

    return wrapper


def parse_set_option(values: Sequence[str]) -> Dict[str, Any]:
    """``--set refiner.tau_a=30`` pairs as a nested override mapping"""
    overrides: Dict[str, Any] = {}
    for item in values:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise click.BadParameter(f"expected KEY=VALUE, got {item!r}", param_hint="--set")
        node: Dict[str, Any] = {}
        leaf = node
        parts = key.strip().split(".")
        for part in parts[:-1]:
            leaf[part] = {}
            leaf = leaf[part]
        leaf[parts[-1]] = yaml.safe_load(raw)
        overrides = deep_merge(overrides, node)
    return overrides


def effective_config(
    config_path: Optional[Path],
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> RunConfig:
    """Config file, then ``--set`` overrides, then flags

    A seed given by neither flag nor file falls back to ``SBR_SEED``; the same
    holds for threads and ``SBR_THREADS``. The resolved seed also seeds
    training unless the file sets ``train.seed`` itself.
    """
    settings = get_settings()
    merged = dict(overrides or {})
    config = load_run_config(config_path, merged)
    if seed is None and "seed" not in config.model_fields_set and settings.seed is not None:
        seed = settings.seed
    if threads is None and "threads" not in config.model_fields_set:
        threads = settings.threads

    flags: Dict[str, Any] = {}
    if seed is not None:
        flags["seed"] = seed
    if threads is not None:
        flags["threads"] = threads
    if "seed" in flags or "seed" in config.model_fields_set:
        if "seed" not in config.train.model_fields_set:
            flags["train"] = {"seed": flags.get("seed", config.seed)}
    if not flags:
        return config
    return load_run_config(config_path, deep_merge(merged, flags))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def finish_output(out_dir: Path, command: str, config: RunConfig, produced: List[Path]) -> Path:
    """Echo the effective config and write the manifest of ``out_dir``"""
    out_dir = Path(out_dir)
    config_path = out_dir / CONFIG_FILE
    config_path.write_text(config.to_yaml(), encoding="utf-8")
    files = []
    for path in list(produced) + [config_path]:
        path = Path(path)
        files.append({
            "path": path.relative_to(out_dir).as_posix(),
            "bytes": path.stat().st_size,
            "sha256": _sha256(path),
        })
    manifest = {
        "command": command,
        "app_version": get_settings().app_version,
        "seed": config.seed,
        "files": sorted(files, key=lambda f: f["path"]),
    }
    manifest_path = out_dir / MANIFEST_FILE
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest_path


def read_pairs(scenarios_path: Path, modes_path: Path):
    scenarios = read_scenarios(scenarios_path)
    modesets = pair_modes(scenarios, read_modes(modes_path))
    return scenarios, modesets


def load_archive(path: Path) -> ParameterArchive:
    path = Path(path)
    if path.is_dir():
        path = path / CHECKPOINT_FILE
    return ParameterArchive.load(path)


def load_checkpoint(path: Path) -> Tuple[ParameterArchive, SoftBraidRefiner]:
    archive = load_archive(path)
    return archive, SoftBraidRefiner.from_archive(archive)


def print_report(report: MetricReport, title: str) -> None:
    table = Table(title=title)
    table.add_column("metric")
    table.add_column("value", justify="right")
    for key, value in report.summary().items():
        table.add_row(key, f"{value:.6f}" if isinstance(value, float) else str(value))
    Console().print(table)


def _split_list(value: Optional[str]) -> Optional[List[str]]:
    if value is None:
        return None
    items = [v.strip() for v in value.split(",") if v.strip()]
    return items or None


config_option = click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None, help="YAML run configuration",
)
threads_option = click.option(
    "--threads", type=click.IntRange(min=1), default=None, help="Scenario-level worker threads",
)
seed_option = click.option("--seed", type=click.IntRange(min=0), default=None, help="Random seed")
set_option = click.option(
    "--set", "set_values", multiple=True, metavar="KEY=VALUE",
    help="Override a config key, e.g. --set refiner.tau_a=30",
)
out_option = click.option(
    "--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), required=True,
    help="Output directory",
)
input_file = click.Path(exists=True, dir_okay=False, path_type=Path)


# ============================================================================
# Commands
# ============================================================================

@click.group()
@click.option("--log-level", default=None, help="Override SBR_LOG_LEVEL")
@click.version_option(get_settings().app_version, prog_name="softbraid")
def cli(log_level: Optional[str]):
    """Soft-braid multi-agent trajectory refiner"""
    settings = get_settings()
    if log_level:
        settings.log_level = log_level.upper()
    configure_logging()


@cli.command()
@click.option("--count", type=click.IntRange(min=1), required=True, help="Number of scenarios")
@click.option("--archetypes", default=None, help="Comma-separated archetype mix")
@seed_option
@config_option
@threads_option
@out_option
@handle_errors
def generate(count, archetypes, seed, config_path, threads, out_dir):
    """Generate synthetic interaction scenarios"""
    mix = _split_list(archetypes)
    overrides = {"data": {"archetypes": mix}} if mix else None
    config = effective_config(config_path, seed=seed, threads=threads, overrides=overrides)
    with command_span("generate", new_run_id(), count=count, seed=config.seed):
        scenarios = generate_scenarios(
            config.data, count, config.seed, archetypes=config.data.archetypes, threads=config.threads
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        path = write_scenarios(out_dir / SCENARIO_FILE, scenarios)
        finish_output(out_dir, "generate", config, [path])
    click.echo(str(path))


@cli.command("predict-coarse")
@click.option("--scenarios", "scenarios_path", type=input_file, required=True)
@click.option("--k", type=click.IntRange(min=1), default=None, help="Modes per scenario")
@seed_option
@config_option
@threads_option
@out_option
@handle_errors
def predict_coarse(scenarios_path, k, seed, config_path, threads, out_dir):
    """Run the constant-velocity coarse predictor"""
    overrides = {"data": {"modes": k}} if k is not None else None
    config = effective_config(config_path, seed=seed, threads=threads, overrides=overrides)
    with command_span("predict-coarse", new_run_id(), k=config.data.modes):
        scenarios = read_scenarios(scenarios_path)
        modesets = coarse_predict_all(
            scenarios, config.data.modes, seed=config.seed, noise_std=config.data.noise_std, threads=config.threads
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        path = write_modes(out_dir / COARSE_FILE, modesets)
        finish_output(out_dir, "predict-coarse", config, [path])
    click.echo(str(path))


@cli.command()
@click.option("--scenarios", "scenarios_path", type=input_file, required=True)
@click.option("--coarse", "coarse_path", type=input_file, required=True)
@click.option("--epochs", type=click.IntRange(min=1), default=None)
@click.option(
    "--resume", "resume_path", type=click.Path(exists=True, path_type=Path), default=None,
    help="Checkpoint (file or run directory) to continue training from",
)
@seed_option
@config_option
@set_option
@threads_option
@out_option
@handle_errors
def train(scenarios_path, coarse_path, epochs, resume_path, seed, config_path, set_values, threads, out_dir):
    """Train a refiner on scenarios and their coarse modes"""
    overrides = parse_set_option(set_values)
    if epochs is not None:
        overrides = deep_merge(overrides, {"train": {"epochs": epochs}})
    config = effective_config(config_path, seed=seed, threads=threads, overrides=overrides)
    validate_and_print(config, reproducible=True)
    with command_span("train", new_run_id(), seed=config.seed) as span:
        scenarios, modesets = read_pairs(scenarios_path, coarse_path)
        resume = load_archive(resume_path) if resume_path is not None else None
        result = Trainer(config, events=training_logger).fit(scenarios, modesets, resume=resume)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = write_training_log(result.log, out_dir / TRAINING_LOG_FILE)
        archive = result.archive()
        checkpoint = archive.save(out_dir / CHECKPOINT_FILE)
        training_logger.log_checkpoint(path=str(checkpoint), step=archive.step, tensors=len(archive))
        finish_output(out_dir, "train", config, [checkpoint, log_path])
        span.info("Training finished", extra={"steps": result.steps})
    if result.final_metrics is not None:
        print_report(result.final_metrics, "validation")
    click.echo(str(checkpoint))


@cli.command()
@click.option("--scenarios", "scenarios_path", type=input_file, required=True)
@click.option("--coarse", "coarse_path", type=input_file, required=True)
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--batch-size", type=click.IntRange(min=1), default=16)
@threads_option
@out_option
@handle_errors
def refine(scenarios_path, coarse_path, checkpoint_path, batch_size, threads, out_dir):
    """Refine coarse modes with a trained checkpoint"""
    archive, model = load_checkpoint(checkpoint_path)
    config = RunConfig.model_validate({
        "refiner": model.config.model_dump(mode="json"),
        "data": {"future_len": model.future_len},
        "seed": model.seed,
        "threads": threads or get_settings().threads,
    })
    with command_span("refine", new_run_id(), checkpoint=str(checkpoint_path), step=archive.step):
        scenarios, modesets = read_pairs(scenarios_path, coarse_path)
        refined = predict_modes(model, scenarios, modesets, batch_size=batch_size, threads=config.threads)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = write_modes(out_dir / REFINED_FILE, refined)
        finish_output(out_dir, "refine", config, [path])
    click.echo(str(path))


@cli.command("eval")
@click.option("--scenarios", "scenarios_path", type=input_file, required=True)
@click.option("--modes", "modes_path", type=input_file, required=True)
@click.option("--report", "report_dir", type=click.Path(file_okay=False, path_type=Path), required=True,
              help="Report output directory")
@click.option("--per-scenario/--summary-only", default=True, help="Include the per-scenario breakdown")
@handle_errors
def evaluate_command(scenarios_path, modes_path, report_dir, per_scenario):
    """Score predicted modes against ground truth"""
    config = RunConfig()
    with command_span("eval", new_run_id(), modes=str(modes_path)):
        scenarios, modesets = read_pairs(scenarios_path, modes_path)
        report = evaluate(scenarios, modesets, include_scenarios=per_scenario)
        report_dir.mkdir(parents=True, exist_ok=True)
        path = report_dir / REPORT_FILE
        path.write_text(json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        finish_output(report_dir, "eval", config, [path])
    print_report(report, str(modes_path))


@cli.command()
@click.option("--scenarios", "scenarios_path", type=input_file, required=True, help="Training scenarios")
@click.option("--coarse", "coarse_path", type=input_file, required=True, help="Training coarse modes")
@click.option("--test-scenarios", "test_scenarios_path", type=input_file, required=True)
@click.option("--test-coarse", "test_coarse_path", type=input_file, required=True)
@click.option("--axis", type=click.Choice(sorted(AXIS_PRESETS)), required=True)
@click.option("--values", default=None, help="Comma-separated values; preset grid when omitted")
@click.option("--seeds", default=None, help="Comma-separated training seeds; the run seed when omitted")
@seed_option
@config_option
@set_option
@threads_option
@out_option
@handle_errors
def ablate(
    scenarios_path, coarse_path, test_scenarios_path, test_coarse_path,
    axis, values, seeds, seed, config_path, set_values, threads, out_dir,
):
    """Train and evaluate one refiner per axis value"""
    config = effective_config(config_path, seed=seed, threads=threads, overrides=parse_set_option(set_values))
    try:
        seed_list = [int(s) for s in _split_list(seeds) or [str(config.seed)]]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {seeds!r}", param_hint="--seeds")
    validate_and_print(config, reproducible=True)
    with command_span("ablate", new_run_id(), axis=axis, seeds=seed_list):
        train_s, train_m = read_pairs(scenarios_path, coarse_path)
        test_s, test_m = read_pairs(test_scenarios_path, test_coarse_path)
        result = run_ablation(
            config, axis, _split_list(values), seed_list, train_s, train_m, test_s, test_m, events=training_logger
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        produced = write_ablation(result, out_dir)
        finish_output(out_dir, "ablate", config, produced)

    table = Table(title=f"ablation: {axis}")
    for column in result.table()[0]:
        table.add_column(column)
    for row in result.table(digits=4)[1:]:
        table.add_row(*row)
    Console().print(table)


if __name__ == "__main__":
    cli()
