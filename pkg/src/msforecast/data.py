"""Sequence data: bouncing-digit generation and a raw on-disk format.

The generator composes grayscale digit crops moving linearly inside a square
frame.  Positions are real-valued; on wall contact the position is clamped to
the wall for that step and the offending velocity component is negated for
the next, so speed magnitude is conserved for the whole sequence.
Overlapping digits composite by elementwise max.  Generation is deterministic:
every sequence draws from its own RNG seeded by (master seed, sequence
index), so serial and parallel generation agree byte for byte.

Raw sequence files carry a 56-byte header — 8 magic bytes, a version and the
five dims [n_seq, time, C, H, W], all unsigned 64-bit little-endian — followed
by the float32 little-endian payload.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .ioutil import atomic_write_bytes

log = logging.getLogger(__name__)

MAGIC = b"MSFRAMES"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sQQQQQQ")  # magic, version, n_seq, time, C, H, W


@dataclass
class MovingSpec:
    """Settings for the bouncing-digits generator.

    Digit top-left positions stay within [0, frame_size - digit_size] on both
    axes, so digits are never clipped by a frame edge.  Speed is drawn
    uniformly from [min_speed, max_speed] pixels/frame with a uniform random
    direction.
    """

    num_digits: int = 2
    frame_size: int = 64
    seq_len: int = 20
    digit_size: int = 28
    min_speed: float = 3.0
    max_speed: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.num_digits not in (2, 3):
            raise ConfigError(f"num_digits must be 2 or 3, got {self.num_digits}")
        if self.digit_size >= self.frame_size:
            raise ConfigError("digit_size must be smaller than frame_size")
        if self.seq_len < 1:
            raise ConfigError("seq_len must be >= 1")
        if not (0.0 < self.min_speed <= self.max_speed):
            raise ConfigError("need 0 < min_speed <= max_speed")

    @property
    def bound(self) -> float:
        """Largest valid top-left coordinate."""
        return float(self.frame_size - self.digit_size)


class SequenceDataset:
    """An in-memory stack of equally shaped sequences [n, time, C, H, W]."""

    def __init__(self, sequences: np.ndarray, path: Optional[str] = None, split: str = "train"):
        if sequences.ndim != 5:
            raise DataError(f"expected [n,time,C,H,W] array, got shape {sequences.shape}")
        self.sequences = np.ascontiguousarray(sequences, dtype=np.float32)
        self.path = path
        self.split = split

    def __len__(self) -> int:
        return self.sequences.shape[0]

    def __getitem__(self, idx) -> np.ndarray:
        return self.sequences[idx]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.sequences.shape


def builtin_digit_glyphs() -> np.ndarray:
    """Ten synthetic 28x28 digit glyphs in [0, 1], network-free.

    Seven-segment style: good enough to give sequences distinct, recognizable
    content without shipping or downloading a handwritten-digit corpus.
    """
    # segment -> (row slice, col slice) on a 28x28 canvas
    segs = {
        "A": (slice(2, 6), slice(4, 24)),
        "B": (slice(2, 16), slice(20, 24)),
        "C": (slice(12, 26), slice(20, 24)),
        "D": (slice(22, 26), slice(4, 24)),
        "E": (slice(12, 26), slice(4, 8)),
        "F": (slice(2, 16), slice(4, 8)),
        "G": (slice(12, 16), slice(4, 24)),
    }
    digit_segs = [
        "ABCDEF", "BC", "ABGED", "ABGCD", "FGBC",
        "AFGCD", "AFGEDC", "ABC", "ABCDEFG", "ABCDFG",
    ]
    glyphs = np.zeros((10, 28, 28), dtype=np.float32)
    for digit, names in enumerate(digit_segs):
        for name in names:
            rows, cols = segs[name]
            glyphs[digit, rows, cols] = 1.0
    return glyphs


def bounce_step(pos: np.ndarray, vel: np.ndarray, lo: float, hi: float):
    """Advance one step; clamp to the wall on contact and negate that component."""
    pos = pos + vel
    hit = (pos <= lo) | (pos >= hi)
    pos = np.clip(pos, lo, hi)
    vel = np.where(hit, -vel, vel)
    return pos, vel


def bounce_trajectory(pos0: np.ndarray, vel0: np.ndarray, steps: int, lo: float, hi: float):
    """Positions and velocities for ``steps`` frames starting at (pos0, vel0)."""
    pos = np.asarray(pos0, dtype=np.float64).copy()
    vel = np.asarray(vel0, dtype=np.float64).copy()
    positions = np.empty((steps,) + pos.shape, dtype=np.float64)
    velocities = np.empty_like(positions)
    for t in range(steps):
        positions[t] = pos
        velocities[t] = vel
        pos, vel = bounce_step(pos, vel, lo, hi)
    return positions, velocities


def _sequence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


def simulate_sequences(spec: MovingSpec, count: int, n_glyphs: int = 10):
    """Draw digit identities and bounce trajectories for ``count`` sequences.

    Returns ``(digit_idx [count, D], positions [count, D, T, 2],
    velocities [count, D, T, 2])`` with positions in (row, col) order.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    d = spec.num_digits
    digit_idx = np.empty((count, d), dtype=np.int64)
    positions = np.empty((count, d, spec.seq_len, 2), dtype=np.float64)
    velocities = np.empty_like(positions)
    for i in range(count):
        rng = _sequence_rng(spec.seed, i)
        digit_idx[i] = rng.integers(0, n_glyphs, size=d)
        pos0 = rng.uniform(0.0, spec.bound, size=(d, 2))
        speed = rng.uniform(spec.min_speed, spec.max_speed, size=d)
        angle = rng.uniform(0.0, 2.0 * np.pi, size=d)
        vel0 = np.stack([speed * np.sin(angle), speed * np.cos(angle)], axis=1)
        traj_pos, traj_vel = bounce_trajectory(pos0, vel0, spec.seq_len, 0.0, spec.bound)
        positions[i] = traj_pos.transpose(1, 0, 2)
        velocities[i] = traj_vel.transpose(1, 0, 2)
    return digit_idx, positions, velocities


def render_sequence(glyphs: np.ndarray, digit_idx: np.ndarray, positions: np.ndarray,
                    frame_size: int) -> np.ndarray:
    """Rasterize one sequence to [T, 1, H, W]; overlaps composite by max."""
    steps = positions.shape[1]
    frames = np.zeros((steps, 1, frame_size, frame_size), dtype=np.float32)
    size = glyphs.shape[-1]
    for d, g in enumerate(digit_idx):
        glyph = glyphs[g]
        for t in range(steps):
            r, c = np.rint(positions[d, t]).astype(int)
            patch = frames[t, 0, r : r + size, c : c + size]
            np.maximum(patch, glyph, out=patch)
    return frames


def generate_moving_mnist(
    spec: MovingSpec, count: int, digits: Optional[np.ndarray] = None
) -> SequenceDataset:
    """Generate ``count`` bouncing-digit sequences, [count, seq_len, 1, H, W]."""
    if digits is None:
        digits = builtin_digit_glyphs()
    digits = np.asarray(digits, dtype=np.float32)
    if digits.ndim != 3 or digits.shape[0] == 0:
        raise DataError("digit source must be a non-empty [n, h, w] array")
    if digits.shape[1:] != (spec.digit_size, spec.digit_size):
        raise DataError(
            f"digit source is {digits.shape[1:]}, spec wants "
            f"{(spec.digit_size, spec.digit_size)}"
        )
    if digits.min() < 0.0 or digits.max() > 1.0:
        raise DataError("digit intensities must lie in [0, 1]")
    digit_idx, positions, _ = simulate_sequences(spec, count, n_glyphs=digits.shape[0])
    out = np.empty((count, spec.seq_len, 1, spec.frame_size, spec.frame_size), dtype=np.float32)
    for i in range(count):
        out[i] = render_sequence(digits, digit_idx[i], positions[i], spec.frame_size)
    return SequenceDataset(out, split="generated")


def save_raw_sequences(path: str, sequences: np.ndarray) -> None:
    """Write sequences [n, time, C, H, W] in the raw format, atomically."""
    arr = np.ascontiguousarray(sequences, dtype="<f4")
    if arr.ndim != 5:
        raise DataError(f"expected [n,time,C,H,W] array, got shape {arr.shape}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, *arr.shape)
    atomic_write_bytes(path, header + arr.tobytes())


def load_raw_sequences(path: str, layout: Optional[Tuple[int, ...]] = None) -> SequenceDataset:
    """Read a raw sequence file back into a SequenceDataset.

    ``layout``, when given, is the expected per-sequence shape
    (time, C, H, W); a mismatch is a data error.  Values outside [0, 1] are
    clamped with a warning; NaNs are rejected.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read sequence file {path}: {exc}")
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, *dims = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format version {version}")
    if any(d < 1 for d in dims):
        raise DataError(f"{path}: non-positive dims {dims}")
    expected = int(np.prod(dims)) * 4
    payload = blob[_HEADER.size :]
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload holds {len(payload)} bytes, header declares {expected}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    if np.isnan(arr).any():
        raise DataError(f"{path}: payload contains NaN values")
    if layout is not None and tuple(dims[1:]) != tuple(layout):
        raise DataError(f"{path}: sequences are {tuple(dims[1:])}, expected {tuple(layout)}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        log.warning("%s: intensities outside [0, 1], clamping", path)
        np.clip(arr, 0.0, 1.0, out=arr)
    return SequenceDataset(arr, path=os.fspath(path), split="file")


def split_io(seq: np.ndarray, input_len: int, horizon: int):
    """Split along time into (first ``input_len``, next ``horizon``) frames.

    Accepts a single sequence [time, C, H, W] (time axis 0) or a batch
    [n, time, C, H, W] (time axis 1).  Slices are contiguous, disjoint and
    order-preserving.
    """
    if input_len < 1 or horizon < 1:
        raise ConfigError("input_len and horizon must be >= 1")
    axis = 0 if seq.ndim == 4 else 1
    if seq.ndim not in (4, 5):
        raise DataError(f"expected rank-4 or rank-5 sequence array, got shape {seq.shape}")
    steps = seq.shape[axis]
    if steps < input_len + horizon:
        raise DataError(
            f"sequence has {steps} frames, need input_len+horizon = {input_len + horizon}"
        )
    if axis == 0:
        return seq[:input_len], seq[input_len : input_len + horizon]
    return seq[:, :input_len], seq[:, input_len : input_len + horizon]


def downscale(frames: np.ndarray, factor: int) -> np.ndarray:
    """Mean-pool the trailing two (H, W) axes by an integer factor."""
    if factor < 1:
        raise ConfigError("factor must be >= 1")
    h, w = frames.shape[-2], frames.shape[-1]
    if h % factor or w % factor:
        raise DataError(f"spatial size {h}x{w} not divisible by {factor}")
    shape = frames.shape[:-2] + (h // factor, factor, w // factor, factor)
    return frames.reshape(shape).mean(axis=(-3, -1)).astype(frames.dtype)
