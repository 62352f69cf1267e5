"""Multi-space recurrent video forecasting toolkit.

Predicts future frames in several feature spaces at once: a ladder of
convolutional recurrent cells runs at full resolution and at progressively
downsampled scales, and each level's prediction is fused with the upsampled
prediction from the level below before moving to the next time step.
Includes a bouncing-digits data generator, per-frame metrics (MSE, MAE,
SSIM, CSI), a seeded training harness with ablation sweeps, and a CLI.
"""

__version__ = "0.1.0"

from .cells import CELL_KINDS, CellState, ConvGRUCell, ConvLSTMCell, STLSTMCell, make_cell
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    MovingSpec,
    SequenceDataset,
    generate_moving_mnist,
    load_raw_sequences,
    save_raw_sequences,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    MsforecastError,
    TrainingDiverged,
)
from .fusion import (
    FUSION_KINDS,
    AttentionFusion,
    ConcatFusion,
    MaxFusion,
    SumFusion,
    make_fusion,
)
from .metrics import MetricsReport, csi_curve, evaluate, mse_mae, ssim_per_frame
from .model import (
    ModelConfig,
    MultiSpacePredictor,
    SingleSpacePredictor,
    config_for_levels,
)
from .trainer import TrainConfig, evaluate_model, loss_l2, sweep, train

__all__ = [
    "__version__",
    "CELL_KINDS",
    "CellState",
    "ConvLSTMCell",
    "ConvGRUCell",
    "STLSTMCell",
    "make_cell",
    "FUSION_KINDS",
    "SumFusion",
    "ConcatFusion",
    "MaxFusion",
    "AttentionFusion",
    "make_fusion",
    "ModelConfig",
    "MultiSpacePredictor",
    "SingleSpacePredictor",
    "config_for_levels",
    "save_checkpoint",
    "load_checkpoint",
    "MovingSpec",
    "SequenceDataset",
    "generate_moving_mnist",
    "save_raw_sequences",
    "load_raw_sequences",
    "MetricsReport",
    "evaluate",
    "mse_mae",
    "ssim_per_frame",
    "csi_curve",
    "TrainConfig",
    "train",
    "evaluate_model",
    "loss_l2",
    "sweep",
    "MsforecastError",
    "ConfigError",
    "ContractError",
    "DataError",
    "TrainingDiverged",
]
