"""Acceptance gate: one test per release criterion, one printed line each.

Each test prints ``[PASS] <criterion>`` or ``[FAIL] <criterion>`` so the
suite output doubles as a checklist.  The directional comparison is the
only long-running criterion and is skipped unless MSF_RUN_DIRECTIONAL=1.
"""

import os
import time
from contextlib import contextmanager

import numpy as np
import pytest
import torch

from msforecast.cells import CELL_KINDS, make_cell
from msforecast.checkpoint import load_checkpoint, save_checkpoint
from msforecast.data import (
    MovingSpec,
    SequenceDataset,
    builtin_digit_glyphs,
    downscale,
    generate_moving_mnist,
    simulate_sequences,
)
from msforecast.fusion import FUSION_KINDS, make_fusion
from msforecast.metrics import csi_curve, mse_mae, ssim_frame
from msforecast.model import ModelConfig, MultiSpacePredictor, SingleSpacePredictor
from msforecast.trainer import TrainConfig, evaluate_model, train

from oracles import (
    csi_scalar,
    fd_param_gradients,
    ladder_step_flat,
    mse_mae_scalar,
    normwise_rel_error,
    ssim_scalar,
)


RESULTS = []


def _announce(line: str) -> None:
    RESULTS.append(line)
    print(line)


@contextmanager
def criterion(name: str):
    """Record one [PASS]/[FAIL] checklist line; conftest prints them all."""
    try:
        yield
    except Exception:
        _announce(f"[FAIL] {name}")
        raise
    _announce(f"[PASS] {name}")


def test_criterion_cell_gradients():
    with criterion("cell gradients match central finite differences (<60s)"):
        start = time.monotonic()
        for kind in CELL_KINDS:
            torch.manual_seed(11)
            cell = make_cell(kind, 4, 4).double()
            x = torch.randn(1, 4, 4, 4, dtype=torch.float64)
            state = cell.init_state(1, 4, 4)

            def loss_fn():
                y, _ = cell(x, state)
                return y.sum()

            loss_fn().backward()
            params = list(cell.parameters())
            fd = fd_param_gradients(loss_fn, params)
            for p, g in zip(params, fd):
                assert normwise_rel_error(p.grad.numpy(), g.numpy()) < 1e-4
        assert time.monotonic() - start < 60.0


def test_criterion_ladder_flat_oracle():
    with criterion("two-level ladder step matches a flat transcription (1e-6)"):
        torch.manual_seed(3)
        cfg = ModelConfig(levels=2, channels=(2, 3), cell="convlstm", fusion="sum",
                          input_len=2, horizon=1)
        model = MultiSpacePredictor(cfg).double()
        p = {
            "stem_w": model.stem.weight.detach().numpy(),
            "stem_b": model.stem.bias.detach().numpy(),
            "head_w": model.head.weight.detach().numpy(),
            "head_b": model.head.bias.detach().numpy(),
            "pre_w": model.pre_cells[0].conv.weight.detach().numpy(),
            "pre_b": model.pre_cells[0].conv.bias.detach().numpy(),
            "post_w": model.post_cells[0].conv.weight.detach().numpy(),
            "post_b": model.post_cells[0].conv.bias.detach().numpy(),
            "fuse_w": model.fuse_cells[0].conv.weight.detach().numpy(),
            "fuse_b": model.fuse_cells[0].conv.bias.detach().numpy(),
            "deep_w": model.deep_cell.conv.weight.detach().numpy(),
            "deep_b": model.deep_cell.conv.bias.detach().numpy(),
            "down_w": model.down[0].conv.weight.detach().numpy(),
            "down_b": model.down[0].conv.bias.detach().numpy(),
            "up_w": model.up[0].conv.weight.detach().numpy(),
            "up_b": model.up[0].conv.bias.detach().numpy(),
        }
        flat_state = {
            "h_pre": np.zeros((2, 4, 4)), "c_pre": np.zeros((2, 4, 4)),
            "h_post": np.zeros((2, 4, 4)), "c_post": np.zeros((2, 4, 4)),
            "h_fuse": np.zeros((2, 4, 4)), "c_fuse": np.zeros((2, 4, 4)),
            "h_deep": np.zeros((3, 2, 2)), "c_deep": np.zeros((3, 2, 2)),
        }
        frames = np.random.default_rng(4).uniform(0, 1, (2, 1, 1, 4, 4))
        state = model.init_state(1, 4, 4)
        with torch.no_grad():
            for t in range(2):
                y, state = model.step(torch.from_numpy(frames[t]), state)
                y_ref, flat_state = ladder_step_flat(frames[t, 0], p, flat_state)
                assert np.abs(y[0].numpy() - y_ref).max() < 1e-6


def test_criterion_degenerate_single_space():
    with criterion("one-level model is bitwise identical to the pixel-space baseline"):
        torch.manual_seed(16)
        cfg = ModelConfig(levels=1, channels=(6,), input_len=4, horizon=3)
        multi = MultiSpacePredictor(cfg)
        single = SingleSpacePredictor(cfg, depth=1)
        mapped = {k.replace("deep_cell.", "cell."): v
                  for k, v in multi.state_dict().items()}
        single.load_state_dict(mapped)
        seq = torch.rand(2, 4, 1, 16, 16)
        with torch.no_grad():
            assert torch.equal(multi.rollout(seq, 3), single.rollout(seq, 3))


def test_criterion_fusion_algebra():
    with criterion("fusion algebra holds for all four kinds on three shapes"):
        shapes = [(1, 4, 8, 8), (2, 16, 4, 4), (3, 2, 6, 10)]
        for shape in shapes:
            torch.manual_seed(sum(shape))
            a, b = torch.randn(*shape), torch.randn(*shape)
            for kind in FUSION_KINDS:
                fuse = make_fusion(kind, shape[1])
                out = fuse(a, b)
                assert out.shape == a.shape
            assert torch.equal(make_fusion("sum", shape[1])(a, b),
                               make_fusion("sum", shape[1])(b, a))
            fx = make_fusion("max", shape[1])
            assert torch.equal(fx(a, b), fx(b, a))
            assert torch.equal(fx(a, a), a)
            att = make_fusion("attention", shape[1])
            with torch.no_grad():
                w = att.weights(a, b)
            assert w.shape == (shape[0], 2, shape[2], shape[3])
            assert float((w.sum(dim=1) - 1.0).abs().max()) < 1e-6
            assert make_fusion("concat", shape[1])(a, b).shape[1] == shape[1]


def test_criterion_metric_oracles():
    with criterion("metrics reproduce scalar-loop and closed-form oracles"):
        rng = np.random.default_rng(9)
        pred = rng.uniform(0, 1, (3, 4, 1, 6, 6))
        target = rng.uniform(0, 1, (3, 4, 1, 6, 6))
        mse, mae = mse_mae(pred, target)
        ref_mse, ref_mae = mse_mae_scalar(pred, target)
        assert np.abs(mse - ref_mse).max() < 1e-9
        assert np.abs(mae - ref_mae).max() < 1e-9

        a = rng.uniform(0, 1, (16, 16))
        b = rng.uniform(0, 1, (16, 16))
        assert abs(ssim_frame(a, b) - ssim_scalar(a, b)) < 1e-6
        assert ssim_frame(a, a) == 1.0

        bp = rng.uniform(0, 1, (2, 3, 1, 5, 5))
        bt = rng.uniform(0, 1, (2, 3, 1, 5, 5))
        for tau in (0.3, 0.5, 0.7):
            got = csi_curve(bp, bt, [tau])[str(tau)]
            ref = csi_scalar(bp, bt, tau)
            assert np.abs(np.asarray(got) - ref).max() < 1e-9
        perfect = csi_curve(bt, bt, [0.5])["0.5"]
        assert all(v == 1.0 for v in perfect)


def test_criterion_generator_invariants():
    with criterion("generator invariants hold over 1000 sequences (<2 min)"):
        start = time.monotonic()
        spec = MovingSpec(seq_len=20, seed=0)
        first = generate_moving_mnist(spec, 1000)
        again = generate_moving_mnist(spec, 1000)
        assert np.array_equal(first.sequences, again.sequences)
        assert first.sequences.min() >= 0.0 and first.sequences.max() <= 1.0

        digit_idx, positions, velocities = simulate_sequences(spec, 1000)
        assert positions.min() >= 0.0 and positions.max() <= spec.bound
        speeds = np.linalg.norm(velocities, axis=-1)
        assert np.abs(speeds - speeds[..., :1]).max() < 1e-9

        glyphs = builtin_digit_glyphs()
        size = spec.digit_size
        for i in range(0, 1000, 200):
            for t in range(spec.seq_len):
                layers = []
                for d in range(spec.num_digits):
                    canvas = np.zeros((spec.frame_size, spec.frame_size), np.float32)
                    r, c = np.rint(positions[i, d, t]).astype(int)
                    canvas[r : r + size, c : c + size] = glyphs[digit_idx[i, d]]
                    layers.append(canvas)
                assert np.array_equal(first.sequences[i, t, 0],
                                      np.maximum.reduce(layers))
        assert time.monotonic() - start < 120.0


def test_criterion_overfit_smoke():
    with criterion("two-level model overfits two sequences within 500 steps (<15 min)"):
        start = time.monotonic()
        spec = MovingSpec(seq_len=20, seed=123)
        small = SequenceDataset(downscale(generate_moving_mnist(spec, 2).sequences, 4))
        assert small.shape == (2, 20, 1, 16, 16)
        model_config = ModelConfig(levels=2, channels=(32, 32), cell="stlstm",
                                   input_len=10, horizon=10)
        train_config = TrainConfig(lr=5e-4, batch_size=2, steps=500,
                                   eval_interval=500, seed=0,
                                   out_dir="/tmp/msforecast-accept/overfit")
        result = train(model_config, train_config, small)
        # Threshold frozen at the first green run of this configuration:
        # min loss 0.0150 vs first loss 0.2087 (ratio 0.072), 500 steps.
        assert min(result.losses) < 0.1 * result.losses[0]
        assert time.monotonic() - start < 900.0


@pytest.mark.skipif(not os.environ.get("MSF_RUN_DIRECTIONAL"),
                    reason="long-running; set MSF_RUN_DIRECTIONAL=1 to enable")
def test_criterion_multi_space_direction():
    with criterion("two-level model beats one-level model on held-out MSE"):
        train_set = SequenceDataset(downscale(
            generate_moving_mnist(MovingSpec(seq_len=20, seed=0), 512).sequences, 4))
        eval_set = SequenceDataset(downscale(
            generate_moving_mnist(MovingSpec(seq_len=20, seed=1), 64).sequences, 4))
        results = {}
        for levels, channels in ((1, (16,)), (2, (16, 16))):
            model_config = ModelConfig(levels=levels, channels=channels,
                                       input_len=10, horizon=10)
            train_config = TrainConfig(
                lr=5e-4, batch_size=8, steps=300, eval_interval=300, seed=0,
                out_dir=f"/tmp/msforecast-accept/direction-{levels}")
            result = train(model_config, train_config, train_set, eval_set)
            model, _ = load_checkpoint(result.last_dir)
            report = evaluate_model(model, eval_set, 10, 10)
            results[levels] = report.mse_mean
        assert results[2] < results[1], results


def test_criterion_checkpoint_round_trip(tmp_path):
    with criterion("checkpoint round trip reproduces evaluation bit-for-bit"):
        torch.manual_seed(21)
        cfg = ModelConfig(levels=2, channels=(4, 6), input_len=3, horizon=2)
        model = MultiSpacePredictor(cfg)
        data = SequenceDataset(np.random.default_rng(22).uniform(
            0, 1, (3, 5, 1, 16, 16)).astype(np.float32))
        before = evaluate_model(model, data, 3, 2, (0.5,))
        save_checkpoint(model, str(tmp_path / "ckpt"))
        restored, _ = load_checkpoint(str(tmp_path / "ckpt"))
        after = evaluate_model(restored, data, 3, 2, (0.5,))
        assert after == before
        assert after.to_json() == before.to_json()
