"""Fusion operator contracts: algebra, projections, attention weighting."""

import pytest
import torch

from msforecast.errors import ConfigError, ContractError
from msforecast.fusion import (
    FUSION_KINDS,
    AttentionFusion,
    ConcatFusion,
    MaxFusion,
    SumFusion,
    make_fusion,
    normalize_fusion_kind,
)

SHAPES = [(1, 4, 8, 8), (2, 16, 4, 4), (3, 2, 6, 10)]


@pytest.mark.parametrize("kind", FUSION_KINDS)
@pytest.mark.parametrize("shape", SHAPES)
def test_output_shape_preserved(kind, shape):
    torch.manual_seed(0)
    fuse = make_fusion(kind, shape[1])
    a, b = torch.randn(shape), torch.randn(shape)
    assert fuse(a, b).shape == shape


def test_sum_additive_identity():
    fuse = SumFusion(4)
    x = torch.randn(2, 4, 5, 5)
    assert torch.equal(fuse(x, torch.zeros_like(x)), x)


@pytest.mark.parametrize("shape", SHAPES)
def test_sum_and_max_commute_exactly(shape):
    torch.manual_seed(1)
    a, b = torch.randn(shape), torch.randn(shape)
    assert torch.equal(SumFusion(shape[1])(a, b), SumFusion(shape[1])(b, a))
    assert torch.equal(MaxFusion(shape[1])(a, b), MaxFusion(shape[1])(b, a))


def test_max_idempotent():
    x = torch.randn(2, 4, 5, 5)
    assert torch.equal(MaxFusion(4)(x, x), x)


@pytest.mark.parametrize("shape", SHAPES)
def test_concat_restores_channel_count(shape):
    fuse = ConcatFusion(shape[1])
    out = fuse(torch.randn(shape), torch.randn(shape))
    assert out.shape[1] == shape[1]


def test_concat_matches_manual_projection():
    torch.manual_seed(2)
    fuse = ConcatFusion(3).double()
    a, b = torch.randn(2, 3, 4, 4, dtype=torch.float64), torch.randn(2, 3, 4, 4, dtype=torch.float64)
    out = fuse(a, b)
    stacked = torch.cat([a, b], dim=1)
    w = fuse.proj.weight.detach()[:, :, 0, 0]
    manual = torch.einsum("oc,bchw->bohw", w, stacked) + fuse.proj.bias.detach().view(1, -1, 1, 1)
    assert float((out.detach() - manual).abs().max()) < 1e-12


def test_attention_zero_init_averages():
    fuse = AttentionFusion(4)
    a, b = torch.randn(2, 4, 6, 6), torch.randn(2, 4, 6, 6)
    out = fuse(a, b)
    assert float((out.detach() - (a + b) / 2).abs().max()) < 1e-7


def test_attention_weights_sum_to_one():
    torch.manual_seed(3)
    fuse = AttentionFusion(4)
    with torch.no_grad():
        fuse.score.weight.normal_()
        fuse.score.bias.normal_()
    a, b = torch.randn(2, 4, 6, 6), torch.randn(2, 4, 6, 6)
    w = fuse.weights(a, b).detach()
    assert w.shape == (2, 2, 6, 6)
    assert float((w.sum(dim=1) - 1.0).abs().max()) < 1e-6
    assert float(w.min()) >= 0.0


def test_attention_matches_manual_softmax():
    torch.manual_seed(4)
    fuse = AttentionFusion(3).double()
    with torch.no_grad():
        fuse.score.weight.normal_()
        fuse.score.bias.normal_()
    a = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    b = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    logits = fuse.score(torch.cat([a, b], dim=1)).detach()
    w = torch.softmax(logits, dim=1)
    manual = w[:, 0:1] * a + w[:, 1:2] * b
    assert float((fuse(a, b).detach() - manual).abs().max()) < 1e-12


def test_attention_gradient_reaches_both_branches():
    fuse = AttentionFusion(2)
    a = torch.randn(1, 2, 4, 4, requires_grad=True)
    b = torch.randn(1, 2, 4, 4, requires_grad=True)
    fuse(a, b).sum().backward()
    assert float(a.grad.abs().sum()) > 0
    assert float(b.grad.abs().sum()) > 0
    assert fuse.score.weight.grad is not None
    assert float(fuse.score.weight.grad.abs().sum()) > 0


@pytest.mark.parametrize("kind", FUSION_KINDS)
def test_shape_mismatch_rejected(kind):
    fuse = make_fusion(kind, 4)
    with pytest.raises(ContractError):
        fuse(torch.randn(1, 4, 4, 4), torch.randn(1, 4, 6, 6))
    with pytest.raises(ContractError):
        fuse(torch.randn(1, 3, 4, 4), torch.randn(1, 3, 4, 4))


def test_sum_and_max_are_parameter_free():
    assert list(SumFusion(4).parameters()) == []
    assert list(MaxFusion(4).parameters()) == []


def test_kind_normalization():
    assert normalize_fusion_kind("Concatenate") == "concat"
    assert normalize_fusion_kind("SUM") == "sum"
    assert isinstance(make_fusion("Attention", 2), AttentionFusion)
    with pytest.raises(ConfigError):
        make_fusion("bilinear", 2)
    with pytest.raises(ConfigError):
        make_fusion("sum", 0)
