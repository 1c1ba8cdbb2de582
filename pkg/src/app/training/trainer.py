"""Training loop

Shuffled mini-batches from a seeded generator, AdamW with a cosine schedule
over the total number of steps, and one validation pass per epoch. The
training log is a list of plain records without wall-clock fields so that two
runs with the same seed write identical files.
"""

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.app.data.scenario import ModeSet, Scenario
from src.app.metrics.evaluation import MetricReport, evaluate
from src.app.nn.archive import ParameterArchive
from src.app.nn.autodiff import no_grad
from src.app.refiner.batching import SceneBatch, iter_batches
from src.app.refiner.model import SoftBraidRefiner
from src.app.training.loss import total_loss
from src.app.training.optimizer import AdamW, clip_grad_norm, cosine_lr
from src.config.run_config import RunConfig
from src.core.errors import ConfigError, NumericError, ShapeError
from src.core.logging import TrainingEventLogger, get_logger

logger = get_logger(__name__)


def split_dataset(
    scenarios: Sequence[Scenario],
    modesets: Sequence[ModeSet],
    val_fraction: float,
) -> Tuple[List[Scenario], List[ModeSet], List[Scenario], List[ModeSet]]:
    """Last ``val_fraction`` of the data (in file order) becomes validation"""
    n_val = int(math.floor(len(scenarios) * val_fraction))
    n_val = min(n_val, len(scenarios) - 1)
    cut = len(scenarios) - n_val
    return list(scenarios[:cut]), list(modesets[:cut]), list(scenarios[cut:]), list(modesets[cut:])


def predict_modes(
    model: SoftBraidRefiner,
    scenarios: Sequence[Scenario],
    modesets: Sequence[ModeSet],
    batch_size: int = 16,
    threads: int = 1,
) -> List[ModeSet]:
    """Refined mode sets in input order

    Batches are independent; with ``threads > 1`` they run on a thread pool and
    are reassembled by index.
    """
    chunks = [list(range(i, min(i + batch_size, len(scenarios)))) for i in range(0, len(scenarios), batch_size)]

    def run(chunk: List[int]) -> List[np.ndarray]:
        batch = SceneBatch.from_scenarios(
            [scenarios[i] for i in chunk],
            [modesets[i] for i in chunk],
            lane_points=model.config.lane_points,
            with_future=False,
        )
        return batch.unpad_modes(model.predict(batch))

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunk) for chunk in chunks]

    refined: List[ModeSet] = []
    for chunk, arrays in zip(chunks, results):
        for index, modes in zip(chunk, arrays):
            refined.append(ModeSet(scenario_id=scenarios[index].scenario_id, modes=modes))
    return refined


@dataclass
class TrainResult:
    model: SoftBraidRefiner
    optimizer: AdamW
    log: List[Dict[str, Any]] = field(default_factory=list)
    steps: int = 0
    final_metrics: Optional[MetricReport] = None

    def archive(self) -> ParameterArchive:
        return self.model.to_archive(step=self.steps, extra=self.optimizer.state_arrays())


class Trainer:
    """Fits a SoftBraidRefiner to scenarios paired with coarse mode sets"""

    def __init__(self, config: RunConfig, events: Optional[TrainingEventLogger] = None):
        self.config = config
        self.events = events or TrainingEventLogger(get_logger("training"))

    def build_model(self, future_len: int) -> SoftBraidRefiner:
        return SoftBraidRefiner(self.config.refiner, future_len, seed=self.config.train.seed)

    def restore_model(self, archive: ParameterArchive, future_len: int) -> SoftBraidRefiner:
        """Model weights from a checkpoint written under the same refiner config"""
        model = SoftBraidRefiner.from_archive(archive)
        if model.config != self.config.refiner:
            raise ConfigError("checkpoint was trained with a different refiner config")
        if model.future_len != future_len:
            raise ShapeError(f"checkpoint expects T+={model.future_len}, scenarios have T+={future_len}")
        if not archive.optimizer_state():
            raise ConfigError("checkpoint carries no optimizer state to resume from")
        return model

    def validate(self, model: SoftBraidRefiner, scenarios, modesets) -> Optional[MetricReport]:
        if not scenarios:
            return None
        refined = predict_modes(
            model, scenarios, modesets, batch_size=self.config.train.batch_size, threads=self.config.threads
        )
        return evaluate(scenarios, refined, include_scenarios=False)

    def validation_loss(self, model: SoftBraidRefiner, scenarios, modesets, step: int) -> Optional[float]:
        """Training objective on the validation split, averaged over scenarios"""
        if not scenarios:
            return None
        total, count = 0.0, 0
        with no_grad():
            for batch in iter_batches(scenarios, modesets, self.config.train.batch_size, model.config.lane_points):
                loss, _ = total_loss(
                    model.refine(batch).outputs, batch.future, batch.agent_mask, self.config.refiner.huber_delta
                )
                total += loss.item() * batch.size
                count += batch.size
        value = total / count
        if not math.isfinite(value):
            self.events.log_numeric_failure(step=step, reason="validation loss is not finite")
            raise NumericError("validation loss is not finite", step=step)
        return value

    def fit(
        self,
        scenarios: Sequence[Scenario],
        modesets: Sequence[ModeSet],
        resume: Optional[ParameterArchive] = None,
    ) -> TrainResult:
        """Train from scratch, or continue the schedule of ``resume``

        A resumed run restores the weights, AdamW moments and step, skips the
        epochs the checkpoint already covers and replays their shuffles, so it
        ends where an uninterrupted run with the same config would.
        """
        if not scenarios:
            raise ConfigError("training needs at least one scenario")
        train_cfg = self.config.train
        train_s, train_m, val_s, val_m = split_dataset(scenarios, modesets, train_cfg.val_fraction)

        future_len = train_s[0].future_len
        model = self.build_model(future_len) if resume is None else self.restore_model(resume, future_len)
        params = model.parameters()
        optimizer = AdamW(
            params,
            betas=(train_cfg.beta1, train_cfg.beta2),
            eps=train_cfg.adam_eps,
            weight_decay=train_cfg.weight_decay,
        )
        rng = np.random.default_rng(train_cfg.seed)
        batches_per_epoch = math.ceil(len(train_s) / train_cfg.batch_size)
        total_steps = train_cfg.epochs * batches_per_epoch
        base_lr = train_cfg.base_lr
        delta = self.config.refiner.huber_delta

        start_step = 0
        if resume is not None:
            start_step = resume.step
            if start_step % batches_per_epoch:
                raise ConfigError(
                    f"checkpoint step {start_step} is not an epoch boundary "
                    f"({batches_per_epoch} batches per epoch on this data)"
                )
            if start_step >= total_steps:
                raise ConfigError(
                    f"checkpoint is at step {start_step} and the schedule ends at step {total_steps}; "
                    "raise train.epochs to continue"
                )
            optimizer.load_state_arrays(resume.optimizer_state(), step_count=start_step)
        start_epoch = start_step // batches_per_epoch

        logger.info(
            "Training started" if resume is None else "Training resumed",
            extra={
                "train_scenarios": len(train_s),
                "val_scenarios": len(val_s),
                "parameters": model.parameter_count(),
                "total_steps": total_steps,
                "start_step": start_step,
                "base_lr": base_lr,
            },
        )

        step = start_step
        lr = base_lr
        log: List[Dict[str, Any]] = []
        report: Optional[MetricReport] = None
        for epoch in range(train_cfg.epochs):
            order = rng.permutation(len(train_s))
            if epoch < start_epoch:
                continue
            losses: List[float] = []
            for batch in iter_batches(train_s, train_m, train_cfg.batch_size, model.config.lane_points, order):
                lr = cosine_lr(base_lr, step, total_steps)
                loss_value = self._step(model, optimizer, batch, lr, delta, step)
                losses.append(loss_value)
                step += 1

            val_loss = self.validation_loss(model, val_s, val_m, step)
            report = self.validate(model, val_s, val_m)
            record = {
                "epoch": epoch,
                "step": step,
                "lr": lr,
                "train_loss": float(np.mean(losses)),
                "val_loss": val_loss,
                "val_metrics": report.summary() if report is not None else None,
            }
            log.append(record)
            self.events.log_epoch(**record)

        return TrainResult(model=model, optimizer=optimizer, log=log, steps=step, final_metrics=report)

    def _step(self, model, optimizer, batch: SceneBatch, lr: float, delta: float, step: int) -> float:
        optimizer.zero_grad()
        try:
            result = model.refine(batch)
            loss, _ = total_loss(result.outputs, batch.future, batch.agent_mask, delta)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError("training loss is not finite")
            loss.backward()
        except NumericError as e:
            self.events.log_numeric_failure(step=step, reason=str(e))
            raise NumericError(str(e), step=step) from e
        if self.config.train.grad_clip is not None:
            clip_grad_norm(model.parameters(), self.config.train.grad_clip)
        optimizer.step(lr)
        return value


def write_training_log(records: Sequence[Dict[str, Any]], path: Path) -> Path:
    """One JSON object per line, keys sorted"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, allow_nan=False) + "\n")
    return path
