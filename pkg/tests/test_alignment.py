import json
import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from ect.alignment import (
    InverseTransformNet,
    SamplerConfig,
    aggregate_max,
    alignment_loss,
    apply_transform,
    identity_theta,
    predict_theta,
    pretrain_inverse_net,
    similarity_theta,
    translation_theta,
)
from ect.data import union_of_causes
from ect.toy import render_scene


def test_aggregate_examples():
    m = torch.rand(1, 1, 5, 5)
    assert torch.equal(aggregate_max(m.repeat(1, 4, 1, 1)), m)
    maps = torch.rand(2, 4, 3, 3)
    maps[:, 2] = 1.0
    assert torch.all(aggregate_max(maps) == 1.0)
    scalars = torch.tensor([0.1, 0.4, 0.3, 0.2]).view(1, 4, 1, 1)
    assert aggregate_max(scalars).item() == pytest.approx(0.4)
    with pytest.raises(ValueError):
        aggregate_max(torch.rand(1, 3, 2, 2))


@given(st.integers(0, 2**31 - 1))
def test_aggregate_dominance(seed):
    g = torch.Generator().manual_seed(seed)
    maps = torch.rand(2, 4, 6, 6, generator=g)
    out = aggregate_max(maps)
    assert torch.all(out >= maps)
    assert torch.all((out == maps).any(dim=1))


def test_gradient_routes_to_argmax_only():
    maps = torch.tensor([0.1, 0.4, 0.3, 0.2], dtype=torch.float64).view(1, 4, 1, 1).requires_grad_(True)
    aggregate_max(maps).sum().backward()
    assert maps.grad.view(-1).tolist() == [0.0, 1.0, 0.0, 0.0]
    # a strictly smaller input can be nudged without changing the output
    nudged = maps.detach().clone()
    nudged[0, 2] += 0.05
    assert aggregate_max(nudged).item() == 0.4


def test_ties_go_to_first_cause():
    maps = torch.full((1, 4, 1, 1), 0.5, requires_grad=True)
    aggregate_max(maps).sum().backward()
    assert maps.grad.view(-1).tolist() == [1.0, 0.0, 0.0, 0.0]


def test_identity_warp():
    m = torch.rand(16, 16, dtype=torch.float64)
    torch.testing.assert_close(apply_transform(m, identity_theta(dtype=torch.float64)), m, rtol=0, atol=1e-12)


def test_translation_moves_delta_two_columns():
    m = torch.zeros(9, 9, dtype=torch.float64)
    m[4, 3] = 1.0
    out = apply_transform(m, translation_theta(2, 0, 9, 9))
    expected = torch.zeros_like(m)
    expected[4, 5] = 1.0
    torch.testing.assert_close(out, expected, rtol=0, atol=1e-9)


def test_warp_roundtrip_on_smooth_map():
    yy, xx = torch.meshgrid(torch.linspace(0, 1, 64), torch.linspace(0, 1, 64), indexing="ij")
    m = (torch.sin(3 * xx) * torch.cos(2 * yy)).double()
    theta = similarity_theta(3, -2, 7, 1.05, 64, 64)
    mat = torch.cat([theta, torch.tensor([[0.0, 0, 1]], dtype=theta.dtype)])
    back = apply_transform(apply_transform(m, theta), torch.linalg.inv(mat))
    assert (back - m)[12:-12, 12:-12].abs().max().item() < 0.05


def test_singular_transform_rejected():
    with pytest.raises(ValueError):
        apply_transform(torch.rand(8, 8), torch.zeros(2, 3))


def test_alignment_loss_examples():
    eye = identity_theta(dtype=torch.float64)
    assert alignment_loss(eye).item() == 0.0
    bumped = eye.clone()
    bumped[1, 1] = 1.3
    assert alignment_loss(bumped).item() == pytest.approx(0.3, abs=1e-12)
    assert alignment_loss(torch.zeros(2, 3, dtype=torch.float64)).item() == pytest.approx(math.sqrt(2), abs=1e-12)
    batch = torch.stack([eye, bumped])
    assert alignment_loss(batch).item() == pytest.approx(0.15, abs=1e-12)


@given(st.integers(0, 2**31 - 1))
def test_alignment_loss_nonnegative(seed):
    g = torch.Generator().manual_seed(seed)
    theta = torch.randn(2, 3, generator=g, dtype=torch.float64)
    assert alignment_loss(theta).item() > 0


def test_fresh_net_outputs_identity():
    net = InverseTransformNet()
    a, b = torch.rand(3, 1, 64, 64), torch.rand(3, 1, 64, 64)
    assert torch.equal(net(a, b), identity_theta().expand(3, 2, 3))
    homog = InverseTransformNet(mode="homography")
    out = homog(a, b)
    assert out.shape == (3, 3, 3)
    assert torch.equal(out[:, 2], torch.tensor([0.0, 0.0, 1.0]).expand(3, 3))


def _randomized_phi():
    phi = InverseTransformNet(width=8).double()
    torch.manual_seed(3)
    torch.nn.init.normal_(phi.regressor[-1].weight, std=0.1)
    return phi


def test_predict_theta_gradients_match_probe():
    phi = _randomized_phi()
    r = np.random.default_rng(0)
    e = torch.rand(1, 1, 64, 64, dtype=torch.float64, requires_grad=True)
    g = torch.rand(1, 1, 64, 64, dtype=torch.float64, requires_grad=True)
    theta = predict_theta(phi, e, g)
    assert theta.shape == (1, 2, 3)
    alignment_loss(theta).backward()
    assert all(not p.requires_grad for p in phi.parameters())
    h = 1e-6
    for inp in (e, g):
        assert inp.grad.abs().sum() > 0
        for _ in range(10):
            y, x = r.integers(64, size=2)
            plus, minus = inp.detach().clone(), inp.detach().clone()
            plus[0, 0, y, x] += h
            minus[0, 0, y, x] -= h
            args = lambda m: (m, g.detach()) if inp is e else (e.detach(), m)  # noqa: E731
            fd = (alignment_loss(predict_theta(phi, *args(plus))) - alignment_loss(predict_theta(phi, *args(minus)))) / (2 * h)
            an = inp.grad[0, 0, y, x]
            assert abs(fd.item() - an.item()) <= 1e-4 * max(abs(fd.item()), abs(an.item()), 1e-8)


def test_predict_theta_is_asymmetric_and_checks_shapes():
    phi = _randomized_phi()
    a, b = torch.rand(1, 1, 64, 64, dtype=torch.float64), torch.rand(1, 1, 64, 64, dtype=torch.float64)
    assert not torch.equal(predict_theta(phi, a, b), predict_theta(phi, b, a))
    with pytest.raises(ValueError):
        predict_theta(phi, a, torch.rand(1, 1, 32, 32, dtype=torch.float64))


def test_predict_theta_keeps_input_dtype():
    phi = InverseTransformNet(width=8)
    theta = predict_theta(phi, torch.rand(32, 32, dtype=torch.float64), torch.rand(32, 32, dtype=torch.float64))
    assert theta.dtype == torch.float64 and theta.shape == (1, 2, 3)


def test_pretrain_with_zero_sampler_learns_identity(toy_samples):
    corpus = [s.gt["e"].astype(np.float32) for s in toy_samples[:2]]
    zero = SamplerConfig(0.0, 0.0, 0.0, 0.0)
    _, report = pretrain_inverse_net(corpus, zero, steps=30, batch_size=4, val_pairs=8)
    assert report.final_mse < 1e-3


def test_pretrain_is_deterministic(toy_samples):
    corpus = [s.gt["e"].astype(np.float32) for s in toy_samples[:2]]
    runs = [pretrain_inverse_net(corpus, steps=5, batch_size=4, val_pairs=4, seed=11)[0] for _ in range(2)]
    for p, q in zip(runs[0].parameters(), runs[1].parameters()):
        assert torch.equal(p, q)


def test_pretrain_rejects_empty_corpus():
    with pytest.raises(ValueError):
        pretrain_inverse_net([])


def _separation_losses(phi, count=100, shift=4.0, seed=5):
    r = np.random.default_rng(seed)
    ident, shifted = [], []
    for k in range(count):
        # held-out scenes, never seen in pretraining
        m = torch.as_tensor(union_of_causes(render_scene(500 + k)["gt"]).astype(np.float32))
        a = r.uniform(0, 2 * math.pi)
        moved = apply_transform(m, translation_theta(shift * math.cos(a), shift * math.sin(a), 64, 64))
        with torch.no_grad():
            ident.append(alignment_loss(predict_theta(phi, m, m)).item())
            shifted.append(alignment_loss(predict_theta(phi, m, moved)).item())
    return np.array(ident), np.array(shifted)


def test_pretrained_phi_separates_identity_from_shift(pretrained_phi):
    phi, report, _ = pretrained_phi
    ident, shifted = _separation_losses(phi)
    assert (ident < shifted).sum() >= 95
    assert np.median(ident) < np.percentile(shifted, 10)
    assert report.final_mse < 0.01
    assert json.loads(json.dumps(report.to_dict()))["steps"] == report.steps
