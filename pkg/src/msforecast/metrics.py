"""Per-frame evaluation: MSE, MAE, windowed structural similarity, CSI.

Convention, stated once and used everywhere: MSE/MAE are the per-frame SUM
of squared/absolute pixel errors, averaged over sequences (and over frames
for the aggregate).  On 64x64 frames in [0, 1] this puts MSE on a scale of
tens, not 1e-3.  The training objective uses a plain element mean instead;
only reporting uses the sum convention.

CSI (critical success index) binarizes both inputs at a threshold and scores
TP / (TP + FN + FP), pooled over all sequences and pixels of a frame; a
frame with no event and no alarm scores 1.0 (nothing missed, nothing false).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Tuple

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ContractError, DataError
from .ioutil import atomic_write_text

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_DYNAMIC_RANGE = 1.0


@dataclass
class MetricsReport:
    """Per-frame metric curves plus their means over the horizon."""

    sequences: int
    frames: int
    mse: List[float]
    mae: List[float]
    ssim: List[float]
    csi: Dict[str, List[float]] = field(default_factory=dict)
    mse_mean: float = 0.0
    mae_mean: float = 0.0
    ssim_mean: float = 0.0

    def to_dict(self) -> dict:
        return {
            "sequences": self.sequences,
            "frames": self.frames,
            "mse": self.mse,
            "mae": self.mae,
            "ssim": self.ssim,
            "csi": self.csi,
            "aggregates": {
                "mse": self.mse_mean,
                "mae": self.mae_mean,
                "ssim": self.ssim_mean,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        if not isinstance(d, dict):
            raise DataError(f"metrics report must be a JSON object, got {type(d).__name__}")
        try:
            agg = d.get("aggregates", {})
            return cls(
                sequences=int(d["sequences"]),
                frames=int(d["frames"]),
                mse=[float(v) for v in d["mse"]],
                mae=[float(v) for v in d["mae"]],
                ssim=[float(v) for v in d["ssim"]],
                csi={k: [float(v) for v in vs] for k, vs in d.get("csi", {}).items()},
                mse_mean=float(agg.get("mse", 0.0)),
                mae_mean=float(agg.get("mae", 0.0)),
                ssim_mean=float(agg.get("ssim", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed metrics report: {exc}")

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path: str) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: str) -> "MetricsReport":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"metrics report {path} is not valid JSON: {exc}")
        return cls.from_dict(payload)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        thresholds = sorted(self.csi)
        writer.writerow(["frame", "mse", "mae", "ssim"] + [f"csi@{t}" for t in thresholds])
        for t in range(self.frames):
            row = [t + 1, repr(self.mse[t]), repr(self.mae[t]), repr(self.ssim[t])]
            row += [repr(self.csi[key][t]) for key in thresholds]
            writer.writerow(row)
        return buf.getvalue()

    def save_csv(self, path: str) -> None:
        atomic_write_text(path, self.to_csv())


def _check_pair(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise ContractError(
            f"prediction shape {pred.shape} does not match target shape {target.shape}"
        )
    if pred.ndim != 5:
        raise ContractError(f"expected [S,N,C,H,W] arrays, got shape {pred.shape}")


def mse_mae(pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-frame MSE and MAE arrays of length N (sum over pixels, mean over sequences)."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    diff = pred - target
    mse = (diff**2).sum(axis=(2, 3, 4)).mean(axis=0)
    mae = np.abs(diff).sum(axis=(2, 3, 4)).mean(axis=0)
    return mse, mae


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _local_mean(batch: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Windowed means over the trailing two axes, valid positions only."""
    half = window.size // 2
    out = correlate1d(batch, window, axis=-2, mode="constant")
    out = correlate1d(out, window, axis=-1, mode="constant")
    return out[..., half:-half, half:-half]


def _ssim_maps(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Mean SSIM per leading index; a, b are [..., H, W] in [0, 1]."""
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise DataError(
            f"frames of size {a.shape[-2:]} are smaller than the "
            f"{SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    window = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE) ** 2
    mu_a = _local_mean(a, window)
    mu_b = _local_mean(b, window)
    var_a = _local_mean(a * a, window) - mu_a * mu_a
    var_b = _local_mean(b * b, window) - mu_b * mu_b
    cov = _local_mean(a * b, window) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return (num / den).mean(axis=(-2, -1))


def ssim_frame(a: np.ndarray, b: np.ndarray) -> float:
    """Structural similarity of two frames ([H, W] or [C, H, W], channel-averaged).

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, dynamic range 1.0,
    averaged over all valid window positions.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"frame shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ContractError(f"expected [H,W] or [C,H,W] frames, got shape {a.shape}")
    return float(_ssim_maps(a, b).mean())


def ssim_per_frame(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-frame SSIM of length N, averaged over sequences and channels."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    return _ssim_maps(pred, target).mean(axis=(0, 2))


def csi_curve(
    pred: np.ndarray, target: np.ndarray, thresholds: Iterable[float]
) -> Dict[str, np.ndarray]:
    """Critical success index per threshold and frame, pooled over sequences."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    curves: Dict[str, np.ndarray] = {}
    for tau in thresholds:
        p = pred >= tau
        t = target >= tau
        tp = (p & t).sum(axis=(0, 2, 3, 4)).astype(np.float64)
        fp = (p & ~t).sum(axis=(0, 2, 3, 4)).astype(np.float64)
        fn = (~p & t).sum(axis=(0, 2, 3, 4)).astype(np.float64)
        denom = tp + fn + fp
        curves[str(float(tau))] = np.where(denom > 0, tp / np.maximum(denom, 1.0), 1.0)
    return curves


def evaluate(
    pred: np.ndarray, target: np.ndarray, thresholds: Iterable[float] = ()
) -> MetricsReport:
    """Full report for predictions vs targets, both [S, N, C, H, W]."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    mse, mae = mse_mae(pred, target)
    ssim = ssim_per_frame(pred, target)
    csi = {k: v.tolist() for k, v in csi_curve(pred, target, thresholds).items()}
    return MetricsReport(
        sequences=int(pred.shape[0]),
        frames=int(pred.shape[1]),
        mse=mse.tolist(),
        mae=mae.tolist(),
        ssim=ssim.tolist(),
        csi=csi,
        mse_mean=float(mse.mean()),
        mae_mean=float(mae.mean()),
        ssim_mean=float(ssim.mean()),
    )
