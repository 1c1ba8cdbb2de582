"""Joint winner-takes-all Huber loss

For every iteration output the world (mode) with the lowest mean per-agent
displacement error is selected, and only that world is supervised. The total
loss averages the per-iteration losses.
"""

from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.app.nn.autodiff import Tensor, as_tensor, huber
from src.core.errors import ShapeError


class LossReport(BaseModel):
    """Per-iteration losses, their mean and the selected world per scenario"""

    iteration_losses: List[float]
    total: float = Field(ge=0)
    selected_modes: List[List[int]] = Field(description="[iteration][scenario] -> k")


def _batched(modes: np.ndarray, truth: np.ndarray, agent_mask: Optional[np.ndarray]):
    if modes.ndim == 4:
        modes, truth = modes[None], truth[None]
        if agent_mask is not None:
            agent_mask = np.asarray(agent_mask)[None]
    if modes.ndim != 5 or truth.shape != modes.shape[:1] + modes.shape[2:]:
        raise ShapeError(f"modes {modes.shape} and ground truth {truth.shape} do not agree")
    if agent_mask is None:
        agent_mask = np.ones(truth.shape[:2], dtype=bool)
    return modes, truth, np.asarray(agent_mask, dtype=bool)


def joint_ade(modes: np.ndarray, truth: np.ndarray, agent_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean over real agents of mean displacement, per world: (B, K)"""
    modes, truth, agent_mask = _batched(np.asarray(modes), np.asarray(truth), agent_mask)
    err = np.hypot(*np.moveaxis(modes - truth[:, None], -1, 0)).mean(axis=-1)
    weights = agent_mask[:, None, :].astype(np.float64)
    return (err * weights).sum(axis=-1) / np.maximum(weights.sum(axis=-1), 1.0)


def wta_mode(modes: np.ndarray, truth: np.ndarray, agent_mask: Optional[np.ndarray] = None):
    """Index of the best world; ties go to the smallest k

    Accepts (K, N, T, 2) with (N, T, 2) truth, returning an int, or a batch
    (B, K, N, T, 2) with (B, N, T, 2), returning (B,) indices.
    """
    single = np.asarray(modes).ndim == 4
    selected = np.argmin(joint_ade(modes, truth, agent_mask), axis=-1)
    return int(selected[0]) if single else selected


def iteration_loss(
    modes: Tensor,
    truth: np.ndarray,
    agent_mask: Optional[np.ndarray] = None,
    delta: float = 1.0,
) -> Tuple[Tensor, np.ndarray]:
    """Huber loss of the selected world; returns (scalar loss, selected k per scenario)

    Per scenario the elementwise Huber penalty is averaged over timesteps and
    coordinates, then over real agents; scenarios are then averaged.
    """
    modes = as_tensor(modes)
    if modes.ndim == 4:
        modes = modes.reshape((1,) + modes.shape)
        truth = np.asarray(truth)[None]
        if agent_mask is not None:
            agent_mask = np.asarray(agent_mask)[None]
    _, truth, agent_mask = _batched(modes.data, np.asarray(truth, dtype=np.float64), agent_mask)
    selected = np.argmin(joint_ade(modes.data, truth, agent_mask), axis=-1)
    chosen = modes[np.arange(modes.shape[0]), selected]
    per_agent = huber(chosen - truth, delta).mean(axis=(2, 3))
    weights = agent_mask.astype(np.float64)
    per_scene = (per_agent * weights).sum(axis=1) / np.maximum(weights.sum(axis=1), 1.0)
    return per_scene.mean(), selected


def total_loss(
    outputs: Sequence[Tensor],
    truth: np.ndarray,
    agent_mask: Optional[np.ndarray] = None,
    delta: float = 1.0,
) -> Tuple[Tensor, LossReport]:
    """Mean of the iteration losses, each with its own world selection"""
    if not outputs:
        raise ShapeError("total_loss needs at least one iteration output")
    losses = []
    selections = []
    for output in outputs:
        loss, selected = iteration_loss(output, truth, agent_mask, delta)
        losses.append(loss)
        selections.append([int(k) for k in np.atleast_1d(selected)])
    total = losses[0]
    for loss in losses[1:]:
        total = total + loss
    total = total * (1.0 / len(losses))
    report = LossReport(
        iteration_losses=[loss.item() for loss in losses],
        total=max(total.item(), 0.0),
        selected_modes=selections,
    )
    return total, report
