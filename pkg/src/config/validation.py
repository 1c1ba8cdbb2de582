"""Configuration validation module

Checks a run configuration beyond what the pydantic models enforce and
provides helpful warnings for settings that are legal but unusual.
"""

import math
from typing import Any, Dict, List, Optional

from rich.console import Console

from src.config.run_config import RunConfig
from src.config.settings import get_settings
from src.core.errors import ConfigError

MIN_PE_WAVELENGTH_M = 1e-3


def validate_run_config(config: RunConfig, reproducible: bool = False) -> Dict[str, Any]:
    """
    Validate a run configuration and return validation results

    Args:
        config: effective configuration of the command
        reproducible: the command's artifacts must be byte-identical across runs

    Returns:
        Dict containing validation status, errors, warnings, and info
    """
    settings = get_settings()
    refiner, train, data = config.refiner, config.train, config.data

    errors: List[str] = []
    warnings: List[str] = []
    info: List[str] = []

    info.append("✓ Schema validation passed")

    # Refiner architecture
    info.append(
        f"✓ Refiner: I={refiner.iterations}, D={refiner.embed_dim}, H={refiner.heads}, "
        f"topology={refiner.topology_mode}, update={'on' if refiner.topology_update else 'off'}"
    )
    if refiner.iterations > 5:
        warnings.append(f"iterations={refiner.iterations} is beyond the usual 1-5 range")
    if refiner.tau_l > refiner.tau_a:
        warnings.append(
            f"tau_l={refiner.tau_l} m exceeds tau_a={refiner.tau_a} m; lanes reach further than agents"
        )
    if not refiner.use_tt_attention and not refiner.use_tl_attention:
        warnings.append("both attention blocks are disabled; refinement only sees its own trajectory")
    if not refiner.use_tt_attention and refiner.topology_mode not in ("soft_braid", "none"):
        warnings.append(f"topology_mode={refiner.topology_mode} has no effect without trajectory attention")
    if not refiner.residual_norm:
        warnings.append("residual_norm is off; attention blocks run in their bare form")
    if refiner.pe_mode == "sinusoidal":
        finest_m = 2.0 * math.pi * refiner.pe_scale_m / 2.0 ** (refiner.pe_bands - 1)
        if finest_m < MIN_PE_WAVELENGTH_M:
            errors.append(
                f"pe_bands={refiner.pe_bands} with pe_scale_m={refiner.pe_scale_m} gives a finest "
                f"wavelength of {finest_m:.2e} m; lower pe_bands or raise pe_scale_m"
            )

    # Training
    if train.lr is not None:
        info.append(f"✓ Learning rate: {train.lr} (explicit)")
    else:
        info.append(f"✓ Learning rate: {train.base_lr} (preset {train.lr_preset})")
    if train.val_fraction == 0:
        warnings.append("val_fraction is 0; no validation metrics will be logged")

    # Data
    if data.modes < 2:
        warnings.append("K=1 leaves winner-takes-all selection with a single world")

    # Reproducibility
    if reproducible and config.threads > 1:
        info.append("✓ Threads only parallelize inference; results stay deterministic")
    if not settings.check_finite:
        warnings.append("SBR_CHECK_FINITE is off; NaN/Inf will not be caught per operation")

    return {
        "valid": len(errors) == 0,
        "errors": errors,
        "warnings": warnings,
        "info": info,
        "summary": {
            "seed": config.seed,
            "threads": config.threads,
            "iterations": refiner.iterations,
            "topology_mode": refiner.topology_mode,
            "tau_a": refiner.tau_a,
            "tau_l": refiner.tau_l,
            "epochs": train.epochs,
            "batch_size": train.batch_size,
        },
    }


def validate_and_print(
    config: RunConfig,
    console: Optional[Console] = None,
    reproducible: bool = False,
) -> Dict[str, Any]:
    """Validate a run configuration and print results to the console

    Raises:
        ConfigError: when validation finds errors
    """
    results = validate_run_config(config, reproducible=reproducible)
    console = console or Console(stderr=True)

    console.rule("Configuration Validation Results")
    console.print("Summary:")
    for key, value in results["summary"].items():
        console.print(f"  {key}: {value}")

    if results["info"]:
        console.print("\nConfiguration Info:")
        for msg in results["info"]:
            console.print(f"  {msg}")

    if results["warnings"]:
        console.print("\n[yellow]Warnings:[/yellow]")
        for warning in results["warnings"]:
            console.print(f"  - {warning}")

    if results["errors"]:
        console.print("\n[red]Errors:[/red]")
        for error in results["errors"]:
            console.print(f"  - {error}")
        console.rule()
        raise ConfigError("; ".join(results["errors"]))

    console.print("\n[green]Configuration validation passed[/green]")
    console.rule()
    return results
