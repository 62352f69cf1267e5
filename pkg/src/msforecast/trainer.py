"""Optimization loop: squared-error objective, Adam, checkpointing, sweeps.

Fully seeded: model init, batch order and therefore the whole loss log are
reproducible from the config seed.  The rollout always feeds predictions
back after warm-up (no scheduled sampling), and the learning rate is
constant unless plateau decay is switched on.

The training log is JSON lines: one ``{"step", "loss", "wall_time"}`` record
per step and one ``{"step", "metrics"}`` record per evaluation.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import torch
from torch import Tensor

from . import metrics as metrics_mod
from .checkpoint import save_checkpoint
from .data import SequenceDataset, split_io
from .errors import ConfigError, DataError, TrainingDiverged
from .ioutil import atomic_write_text
from .model import ModelConfig, MultiSpacePredictor, RecursivePredictor, config_for_levels

log = logging.getLogger(__name__)

LOSS_SCOPES = ("horizon", "horizon+warmup")

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    """Optimization settings; ``out_dir`` receives the log and checkpoints."""

    lr: float = 5e-4
    batch_size: int = 4
    steps: int = 1000
    eval_interval: int = 200
    seed: int = 0
    loss_scope: str = "horizon"
    out_dir: str = "runs/run"
    grad_clip: Optional[float] = None
    plateau_patience: Optional[int] = None
    plateau_factor: float = 0.5

    def __post_init__(self):
        # lr == 0 is allowed for diagnostics (parameters must then stay put)
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.batch_size < 1 or self.steps < 1:
            raise ConfigError("batch_size and steps must be >= 1")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        scope = self.loss_scope.strip().lower().replace("-only", "").replace("warm-up", "warmup")
        if scope not in LOSS_SCOPES:
            raise ConfigError(
                f"loss_scope must be one of {LOSS_SCOPES}, got {self.loss_scope!r}"
            )
        self.loss_scope = scope
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive when set")
        if self.plateau_patience is not None and self.plateau_patience < 1:
            raise ConfigError("plateau_patience must be >= 1 when set")
        if not (0.0 < self.plateau_factor <= 1.0):
            raise ConfigError("plateau_factor must lie in (0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    losses: List[float]
    evals: List[Tuple[int, metrics_mod.MetricsReport]]
    best_step: int
    best_dir: str
    last_dir: str
    log_path: str


def loss_l2(pred: Tensor, target: Tensor) -> Tensor:
    """Mean squared error over all elements (the optimization objective)."""
    if pred.shape != target.shape:
        raise ConfigError(f"loss shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return ((pred - target) ** 2).mean()


def rollout_loss(
    model: RecursivePredictor, batch: Tensor, input_len: int, horizon: int, scope: str
) -> Tensor:
    """Objective for one batch [B, T+N, C, H, W] under the given loss scope.

    'horizon' scores only the N fed-back predictions; 'horizon+warmup' also
    scores the warm-up next-frame predictions against input frames 2..T.
    """
    inputs, targets = batch[:, :input_len], batch[:, input_len : input_len + horizon]
    preds, warmup = model.rollout(inputs, horizon, return_warmup=True)
    if scope == "horizon":
        return loss_l2(preds, targets)
    joined_pred = torch.cat([warmup, preds], dim=1)
    joined_target = torch.cat([inputs[:, 1:], targets], dim=1)
    return loss_l2(joined_pred, joined_target)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches; a fresh shuffle every pass."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def evaluate_model(
    model: RecursivePredictor,
    dataset: SequenceDataset,
    input_len: int,
    horizon: int,
    thresholds: Tuple[float, ...] = (),
    batch_size: int = 8,
) -> metrics_mod.MetricsReport:
    """Roll the model over a dataset and score predictions against targets."""
    seqs = dataset.sequences
    if seqs.shape[1] < input_len + horizon:
        raise DataError(
            f"dataset sequences have {seqs.shape[1]} frames, "
            f"evaluation needs {input_len + horizon}"
        )
    preds = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            chunk = torch.from_numpy(seqs[start : start + batch_size, :input_len])
            preds.append(model.rollout(chunk, horizon).numpy())
    pred = np.concatenate(preds, axis=0)
    target = seqs[:, input_len : input_len + horizon]
    return metrics_mod.evaluate(pred, target, thresholds)


def _grad_norms(model) -> dict:
    out = {}
    for name, p in model.named_parameters():
        out[name] = float(p.grad.norm()) if p.grad is not None else 0.0
    return out


def train(
    model_config: ModelConfig,
    config: TrainConfig,
    dataset: SequenceDataset,
    eval_dataset: Optional[SequenceDataset] = None,
) -> TrainResult:
    """Train a ladder predictor; returns checkpoints, log path and history."""
    if len(dataset) == 0:
        raise DataError("training dataset is empty")
    need = model_config.input_len + model_config.horizon
    if dataset.sequences.shape[1] < need:
        raise DataError(
            f"dataset sequences have {dataset.sequences.shape[1]} frames, "
            f"training needs input_len+horizon = {need}"
        )
    eval_dataset = eval_dataset if eval_dataset is not None else dataset

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = MultiSpacePredictor(model_config)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.lr, betas=ADAM_BETAS, eps=ADAM_EPS
    )

    os.makedirs(config.out_dir, exist_ok=True)
    log_path = os.path.join(config.out_dir, "train_log.jsonl")
    best_dir = os.path.join(config.out_dir, "best")
    last_dir = os.path.join(config.out_dir, "last")

    data = torch.from_numpy(dataset.sequences[:, :need])
    batches = _batches(len(dataset), config.batch_size, rng)

    losses: List[float] = []
    evals: List[Tuple[int, metrics_mod.MetricsReport]] = []
    best_step, best_mse = 0, float("inf")
    since_improve = 0
    lr = config.lr
    t0 = time.monotonic()

    with open(log_path, "w", encoding="utf-8") as logf:
        for step in range(1, config.steps + 1):
            batch = data[torch.from_numpy(np.ascontiguousarray(next(batches)))]
            loss = rollout_loss(
                model, batch, model_config.input_len, model_config.horizon, config.loss_scope
            )
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)

            loss_val = float(loss.detach())
            if not np.isfinite(loss_val):
                diagnostics = {"step": step, "lr": lr, "grad_norms": _grad_norms(model)}
                dump_path = os.path.join(config.out_dir, "divergence.json")
                atomic_write_text(dump_path, json.dumps(diagnostics, indent=2))
                raise TrainingDiverged(
                    f"non-finite loss at step {step}; diagnostics written to {dump_path}",
                    diagnostics,
                )
            optimizer.step()

            losses.append(loss_val)
            logf.write(
                json.dumps(
                    {"step": step, "loss": loss_val, "wall_time": time.monotonic() - t0}
                )
                + "\n"
            )

            if step % config.eval_interval == 0 or step == config.steps:
                report = evaluate_model(
                    model, eval_dataset, model_config.input_len, model_config.horizon
                )
                evals.append((step, report))
                logf.write(json.dumps({"step": step, "metrics": report.to_dict()}) + "\n")
                if report.mse_mean < best_mse:
                    best_mse, best_step = report.mse_mean, step
                    since_improve = 0
                    save_checkpoint(model, best_dir)
                else:
                    since_improve += 1
                    if (
                        config.plateau_patience is not None
                        and since_improve >= config.plateau_patience
                    ):
                        lr *= config.plateau_factor
                        since_improve = 0
                        for group in optimizer.param_groups:
                            group["lr"] = lr
                        log.info("plateau: lr decayed to %g at step %d", lr, step)

    save_checkpoint(model, last_dir)
    if not evals:
        save_checkpoint(model, best_dir)
    return TrainResult(
        losses=losses,
        evals=evals,
        best_step=best_step,
        best_dir=best_dir,
        last_dir=last_dir,
        log_path=log_path,
    )


SWEEP_AXES = {
    "levels": [1, 2, 3, 4],
    "fusion": ["sum", "attention", "concat", "max"],
    "cell": ["convgru", "stlstm", "convlstm"],
}

_ROW_LABELS = {
    "fusion": {"sum": "Sum", "attention": "Attention", "concat": "Concatenate", "max": "Max"},
    "cell": {"convgru": "ConvGRU", "stlstm": "ST-LSTM", "convlstm": "ConvLSTM"},
}


@dataclass
class SweepResult:
    axis: str
    rows: List[dict] = field(default_factory=list)

    def format_table(self) -> str:
        header = f"{'Model':<16} {'MSE':>10} {'MAE':>10} {'SSIM':>8}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            lines.append(
                f"{row['label']:<16} {row['mse']:>10.3f} {row['mae']:>10.3f} "
                f"{row['ssim']:>8.4f}"
            )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"axis": self.axis, "rows": self.rows}


def sweep(
    axis: str,
    model_config: ModelConfig,
    train_config: TrainConfig,
    dataset: SequenceDataset,
    eval_dataset: Optional[SequenceDataset] = None,
) -> SweepResult:
    """Train/evaluate one model per value of an ablation axis.

    Axes: 'levels' (1..4 prediction spaces), 'fusion' (the four fusion
    kinds) and 'cell' (the three recurrent cell kinds).  Every run shares
    the base seed and budget so rows are comparable.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}, expected one of {sorted(SWEEP_AXES)}")
    result = SweepResult(axis=axis)
    for value in SWEEP_AXES[axis]:
        if axis == "levels":
            mc = config_for_levels(model_config, value)
            label = f"Model-{value}"
        elif axis == "fusion":
            mc = dataclasses.replace(model_config, fusion=value)
            label = _ROW_LABELS["fusion"][value]
        else:
            mc = dataclasses.replace(model_config, cell=value)
            label = _ROW_LABELS["cell"][value]
        tc = dataclasses.replace(
            train_config, out_dir=os.path.join(train_config.out_dir, f"{axis}-{value}")
        )
        log.info("sweep %s=%s: training", axis, value)
        run = train(mc, tc, dataset, eval_dataset)
        final_report = run.evals[-1][1]
        result.rows.append(
            {
                "label": label,
                "value": value,
                "mse": final_report.mse_mean,
                "mae": final_report.mae_mean,
                "ssim": final_report.ssim_mean,
                "out_dir": tc.out_dir,
            }
        )
    return result
