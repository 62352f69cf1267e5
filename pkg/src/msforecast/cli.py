"""Command-line entry point.

Subcommands: gen-data, train, eval, predict, sweep, plot.  Config
precedence is CLI flags over config-file keys over built-in defaults, and
the effective config is printed before work starts.  Relative dataset
paths resolve against the MSF_DATA_DIR environment variable when it is
set.  All outputs are written atomically (temp file + rename) and the
process exits 0 only when no error path was taken; failures print
``error: <Kind>: <message>`` on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import os
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from . import metrics as metrics_mod
from . import trainer as trainer_mod
from .cells import CELL_KINDS
from .checkpoint import load_checkpoint
from .data import MovingSpec, generate_moving_mnist, load_raw_sequences, save_raw_sequences
from .errors import ConfigError, DataError, MsforecastError
from .fusion import FUSION_KINDS
from .ioutil import atomic_write_bytes, atomic_write_text
from .model import ModelConfig

log = logging.getLogger(__name__)

DATA_DIR_ENV = "MSF_DATA_DIR"


def resolve_data_path(path: str, for_write: bool = False) -> str:
    """Resolve a dataset path against MSF_DATA_DIR for relative paths.

    Existing relative paths win over the data root, so local files keep
    working when the env var is set.  Writes of relative paths always land
    under the root.
    """
    if os.path.isabs(path):
        return path
    root = os.environ.get(DATA_DIR_ENV)
    if not root:
        return path
    if for_write:
        return os.path.join(root, path)
    if os.path.exists(path):
        return path
    candidate = os.path.join(root, path)
    return candidate if os.path.exists(candidate) else path


def _parse_channels(text: str):
    parts = [p for p in text.replace(" ", "").split(",") if p]
    if not parts:
        raise ConfigError("--channels must name at least one width")
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ConfigError(f"--channels expects integers, got {text!r}")
    return values[0] if len(values) == 1 else tuple(values)


def _parse_thresholds(text: Optional[str]) -> Tuple[float, ...]:
    if not text:
        return ()
    try:
        return tuple(float(p) for p in text.replace(" ", "").split(",") if p)
    except ValueError:
        raise ConfigError(f"--thresholds expects comma-separated floats, got {text!r}")


def _load_config_file(path: Optional[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(cfg) - {"model", "train"}
    if unknown:
        raise ConfigError(
            f"config file {path} has unknown sections {sorted(unknown)}; "
            "expected 'model' and/or 'train'"
        )
    return cfg


def _cli_overrides(args: argparse.Namespace, names: Sequence[str]) -> dict:
    """Collect the flag values the user actually supplied (non-None)."""
    out = {}
    for name in names:
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            out[name.replace("-", "_")] = value
    return out


_MODEL_KEYS = (
    "levels", "channels", "cell", "fusion", "kernel-size",
    "img-channels", "input-len", "horizon",
)
_TRAIN_KEYS = (
    "lr", "batch-size", "steps", "eval-interval", "seed", "loss-scope",
    "grad-clip", "plateau-patience", "plateau-factor",
)


def _build_configs(args: argparse.Namespace) -> Tuple[ModelConfig, trainer_mod.TrainConfig]:
    """Merge defaults <- config file <- CLI flags into validated configs."""
    file_cfg = _load_config_file(getattr(args, "config", None))
    model_dict = ModelConfig().to_dict()
    model_dict.update(file_cfg.get("model", {}))
    model_dict.update(_cli_overrides(args, _MODEL_KEYS))
    train_dict = trainer_mod.TrainConfig().to_dict()
    train_dict.update(file_cfg.get("train", {}))
    train_dict.update(_cli_overrides(args, _TRAIN_KEYS))
    if getattr(args, "out", None) is not None:
        train_dict["out_dir"] = args.out
    model_config = ModelConfig.from_dict(model_dict)
    train_config = trainer_mod.TrainConfig.from_dict(train_dict)
    print("effective config:")
    print(json.dumps({"model": model_config.to_dict(), "train": train_config.to_dict()},
                     indent=2))
    return model_config, train_config


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file with 'model'/'train' sections")
    g = p.add_argument_group("model overrides")
    g.add_argument("--levels", type=int, help="number of prediction spaces (ladder depth)")
    g.add_argument("--channels", type=_parse_channels,
                   help="feature width, single int or comma list per level")
    g.add_argument("--cell", choices=CELL_KINDS, help="recurrent cell kind")
    g.add_argument("--fusion", choices=FUSION_KINDS + ("concatenate",),
                   help="fusion operator kind")
    g.add_argument("--kernel-size", type=int, help="conv kernel size (odd)")
    g.add_argument("--img-channels", type=int, help="frame channels")
    g.add_argument("--input-len", type=int, help="warm-up frames consumed per sequence")
    g.add_argument("--horizon", type=int, help="frames predicted after warm-up")
    t = p.add_argument_group("training overrides")
    t.add_argument("--lr", type=float, help="Adam learning rate")
    t.add_argument("--batch-size", type=int)
    t.add_argument("--steps", type=int, help="optimizer steps to run")
    t.add_argument("--eval-interval", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--loss-scope", choices=("horizon", "horizon+warmup"),
                   help="score only fed-back frames, or warm-up predictions too")
    t.add_argument("--grad-clip", type=float, help="global grad-norm clip (off by default)")
    t.add_argument("--plateau-patience", type=int,
                   help="evals without improvement before lr decay (off by default)")
    t.add_argument("--plateau-factor", type=float, help="lr decay factor on plateau")


def cmd_gen_data(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    spec = MovingSpec(num_digits=args.digits, seq_len=args.frames, seed=args.seed)
    print(f"generating {args.count} sequences: digits={args.digits} "
          f"frames={args.frames} size={spec.frame_size} seed={args.seed}")
    dataset = generate_moving_mnist(spec, args.count)
    out = resolve_data_path(args.out, for_write=True)
    save_raw_sequences(out, dataset.sequences)
    print(f"wrote {out}: shape {dataset.shape}, seed {args.seed}")
    return 0


def _load_model(ckpt: str):
    model, config = load_checkpoint(ckpt)
    model.eval()
    return model, config


def _predict_batches(model, seqs: np.ndarray, input_len: int, horizon: int,
                     batch_size: int = 8) -> np.ndarray:
    chunks = []
    with torch.no_grad():
        for start in range(0, seqs.shape[0], batch_size):
            chunk = torch.from_numpy(seqs[start : start + batch_size, :input_len])
            chunks.append(model.rollout(chunk, horizon).numpy())
    return np.concatenate(chunks, axis=0)


def cmd_eval(args: argparse.Namespace) -> int:
    dataset = load_raw_sequences(resolve_data_path(args.data))
    thresholds = _parse_thresholds(args.thresholds)
    if args.oracle:
        input_len = args.input_len or 10
        horizon = args.horizon or 10
        _require_frames(dataset, input_len + horizon)
        target = dataset.sequences[:, input_len : input_len + horizon]
        print(f"oracle mode: scoring targets against themselves "
              f"(input_len={input_len}, horizon={horizon})")
        report = metrics_mod.evaluate(target, target, thresholds)
    else:
        if not args.ckpt:
            raise ConfigError("eval needs --ckpt (or --oracle)")
        model, config = _load_model(args.ckpt)
        input_len = args.input_len or config.input_len
        horizon = args.horizon or config.horizon
        _require_frames(dataset, input_len + horizon)
        print(f"evaluating {args.ckpt} on {args.data}: "
              f"input_len={input_len} horizon={horizon} thresholds={list(thresholds)}")
        report = trainer_mod.evaluate_model(model, dataset, input_len, horizon, thresholds)
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.json")
    csv_path = os.path.join(args.out, "curves.csv")
    report.save(report_path)
    report.save_csv(csv_path)
    print(f"MSE {report.mse_mean:.4f}  MAE {report.mae_mean:.4f}  "
          f"SSIM {report.ssim_mean:.4f}")
    print(f"wrote {report_path} and {csv_path}")
    return 0


def _require_frames(dataset, need: int) -> None:
    have = dataset.sequences.shape[1]
    if have < need:
        raise DataError(f"dataset has {have} frames per sequence, need {need}")


def render_grid(inputs: np.ndarray, targets: np.ndarray, preds: np.ndarray) -> np.ndarray:
    """Tile sequences into one image: a row per sequence, T+2N tiles per row."""
    frames = np.concatenate([inputs, targets, preds], axis=1)
    n, k, c, h, w = frames.shape
    tiles = frames.transpose(0, 3, 1, 4, 2).reshape(n * h, k * w, c)
    img = np.clip(np.rint(tiles * 255.0), 0, 255).astype(np.uint8)
    return img[..., 0] if c == 1 else img


def _save_png(path: str, array: np.ndarray) -> None:
    from PIL import Image

    image = Image.fromarray(array, mode="L" if array.ndim == 2 else "RGB")
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def cmd_predict(args: argparse.Namespace) -> int:
    model, config = _load_model(args.ckpt)
    dataset = load_raw_sequences(resolve_data_path(args.data))
    input_len = args.input_len or config.input_len
    horizon = args.horizon or config.horizon
    _require_frames(dataset, input_len)
    preds = _predict_batches(model, dataset.sequences, input_len, horizon)
    save_raw_sequences(args.out_frames, preds)
    print(f"wrote {args.out_frames}: shape {preds.shape}")
    if args.grid:
        _require_frames(dataset, input_len + horizon)
        rows = min(len(dataset), args.grid_rows)
        grid = render_grid(
            dataset.sequences[:rows, :input_len],
            dataset.sequences[:rows, input_len : input_len + horizon],
            preds[:rows],
        )
        _save_png(args.grid, grid)
        print(f"wrote {args.grid}: {rows} rows x {input_len + 2 * horizon} tiles "
              "(inputs | targets | predictions)")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    model_config, train_config = _build_configs(args)
    dataset = load_raw_sequences(resolve_data_path(args.data))
    eval_dataset = (
        load_raw_sequences(resolve_data_path(args.eval_data)) if args.eval_data else None
    )
    result = trainer_mod.train(model_config, train_config, dataset, eval_dataset)
    print(f"trained {train_config.steps} steps: "
          f"first loss {result.losses[0]:.6f}, last loss {result.losses[-1]:.6f}")
    if result.evals:
        step, report = result.evals[-1]
        print(f"final eval at step {step}: MSE {report.mse_mean:.4f} "
              f"MAE {report.mae_mean:.4f} SSIM {report.ssim_mean:.4f}")
    print(f"best checkpoint (step {result.best_step}): {result.best_dir}")
    print(f"last checkpoint: {result.last_dir}")
    print(f"training log: {result.log_path}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    model_config, train_config = _build_configs(args)
    dataset = load_raw_sequences(resolve_data_path(args.data))
    eval_dataset = (
        load_raw_sequences(resolve_data_path(args.eval_data)) if args.eval_data else None
    )
    result = trainer_mod.sweep(args.axis, model_config, train_config, dataset, eval_dataset)
    table = result.format_table()
    print(table)
    os.makedirs(train_config.out_dir, exist_ok=True)
    table_path = os.path.join(train_config.out_dir, "table.txt")
    json_path = os.path.join(train_config.out_dir, "table.json")
    atomic_write_text(table_path, table + "\n")
    atomic_write_text(json_path, json.dumps(result.to_dict(), indent=2))
    print(f"wrote {table_path} and {json_path}")
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    reports = [metrics_mod.MetricsReport.load(p) for p in args.report]
    if args.labels:
        labels = [p.strip() for p in args.labels.split(",")]
        if len(labels) != len(reports):
            raise ConfigError(
                f"--labels names {len(labels)} entries for {len(reports)} reports"
            )
    else:
        labels = [os.path.splitext(os.path.basename(p))[0] for p in args.report]
    os.makedirs(args.out, exist_ok=True)

    def save_figure(fig, name: str) -> None:
        buf = io.BytesIO()
        fig.savefig(buf, format="png", dpi=120)
        plt.close(fig)
        atomic_write_bytes(os.path.join(args.out, name), buf.getvalue())
        print(f"wrote {os.path.join(args.out, name)}")

    for metric in ("mse", "mae", "ssim"):
        fig, ax = plt.subplots(figsize=(6, 4))
        for report, label in zip(reports, labels):
            curve = getattr(report, metric)
            ax.plot(range(1, len(curve) + 1), curve, marker="o", label=label)
        ax.set_xlabel("prediction frame")
        ax.set_ylabel(metric.upper() if metric != "ssim" else "SSIM")
        ax.legend()
        fig.tight_layout()
        save_figure(fig, f"{metric}.png")

    any_csi = any(report.csi for report in reports)
    if not any_csi:
        print("notice: no CSI thresholds in any report; skipping CSI plot")
        return 0
    fig, ax = plt.subplots(figsize=(6, 4))
    for report, label in zip(reports, labels):
        for threshold in sorted(report.csi):
            curve = report.csi[threshold]
            ax.plot(range(1, len(curve) + 1), curve, marker="o",
                    label=f"{label} @{threshold}")
    ax.set_xlabel("prediction frame")
    ax.set_ylabel("CSI")
    ax.legend()
    fig.tight_layout()
    save_figure(fig, "csi.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msforecast",
        description="Multi-space recurrent video forecasting toolkit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a bouncing-digits dataset file")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("--digits", type=int, default=2, choices=(2, 3),
                   help="digits per sequence")
    p.add_argument("--count", type=int, required=True, help="number of sequences")
    p.add_argument("--frames", type=int, default=20, help="frames per sequence")
    p.add_argument("--out", required=True, help="output path (raw sequence format)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a predictor")
    p.add_argument("--data", required=True, help="training dataset (raw sequence file)")
    p.add_argument("--eval-data", help="held-out dataset for periodic evaluation")
    p.add_argument("--out", help="run directory (checkpoints + log)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--ckpt", help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset (raw sequence file)")
    p.add_argument("--thresholds", help="comma-separated CSI thresholds, e.g. 0.3,0.5,0.7")
    p.add_argument("--input-len", type=int, help="warm-up frames (default: checkpoint's)")
    p.add_argument("--horizon", type=int, help="predicted frames (default: checkpoint's)")
    p.add_argument("--oracle", action="store_true",
                   help="score targets against themselves (ignores --ckpt)")
    p.add_argument("--out", default="eval", help="output directory for report + curves")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write predicted frames for a dataset")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, help="dataset (raw sequence file)")
    p.add_argument("--out-frames", required=True, help="output path (raw sequence format)")
    p.add_argument("--grid", help="optional PNG path for an input/target/prediction grid")
    p.add_argument("--grid-rows", type=int, default=8, help="max sequences in the grid")
    p.add_argument("--input-len", type=int, help="warm-up frames (default: checkpoint's)")
    p.add_argument("--horizon", type=int, help="predicted frames (default: checkpoint's)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="train one model per value of an ablation axis")
    p.add_argument("--axis", required=True, choices=sorted(trainer_mod.SWEEP_AXES),
                   help="ablation axis")
    p.add_argument("--data", required=True, help="training dataset (raw sequence file)")
    p.add_argument("--eval-data", help="held-out dataset for evaluation")
    p.add_argument("--out", help="sweep directory (one run subdir per value)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="render per-frame metric curves from reports")
    p.add_argument("--report", nargs="+", required=True, help="report JSON path(s)")
    p.add_argument("--labels", help="comma-separated legend labels (default: file names)")
    p.add_argument("--out", default="plots", help="output directory for PNGs")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MsforecastError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
