import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from ect.config import TASKS, ConfigError, LossConfig
from ect.losses import GroundTruthEdgeMap, attention_loss, erind_loss, total_loss
from oracles import attention_loss_scalar

# frozen from attention_loss_scalar([[1, 0]], [[0.8, 0.2]], 4, 0.5)
TWO_PIXEL_LOSS = 0.4147952304599881


def t(x):
    return torch.tensor(x, dtype=torch.float64)


def test_all_zero_ground_truth_gives_zero_loss(rng):
    y = np.zeros((5, 7))
    e = rng.uniform(0.01, 0.99, size=(5, 7))
    assert float(attention_loss(y, t(e), 4.0, 0.5)) == 0.0


def test_perfect_prediction_vanishes():
    eps = 1e-6
    loss = attention_loss([[1, 0]], t([[1 - eps, eps]]), 4.0, 0.5, eps=eps)
    assert float(loss) <= 1e-4


def test_two_pixel_value_matches_oracle():
    assert float(attention_loss([[1, 0]], t([[0.8, 0.2]]), 4.0, 0.5)) == pytest.approx(TWO_PIXEL_LOSS, abs=1e-12)
    assert TWO_PIXEL_LOSS == pytest.approx(0.4147, abs=1e-4)


def test_shape_mismatch_and_bad_hyperparameters():
    with pytest.raises(ValueError):
        attention_loss(np.zeros((2, 2)), t(np.full((2, 3), 0.5)), 4.0, 0.5)
    with pytest.raises(ConfigError):
        attention_loss(np.zeros((2, 2)), t(np.full((2, 2), 0.5)), 0.0, 0.5)
    with pytest.raises(ConfigError):
        attention_loss(np.zeros((2, 2)), t(np.full((2, 2), 0.5)), 4.0, -1.0)


def test_batch_reduction_is_mean_of_per_sample_sums(rng):
    y = (rng.random((3, 4, 4)) < 0.3).astype(float)
    e = rng.uniform(0.05, 0.95, (3, 4, 4))
    per = [float(attention_loss(y[k], t(e[k]), 4.0, 0.5)) for k in range(3)]
    assert float(attention_loss(y, t(e), 4.0, 0.5)) == pytest.approx(np.mean(per), rel=1e-12)


def test_normalize_switch_divides_by_pixel_count(rng):
    y = (rng.random((4, 4)) < 0.3).astype(float)
    e = rng.uniform(0.05, 0.95, (4, 4))
    plain = float(attention_loss(y, t(e), 4.0, 0.5))
    assert float(attention_loss(y, t(e), 4.0, 0.5, normalize=True)) == pytest.approx(plain / 16, rel=1e-12)


@given(st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_nonnegative_and_class_balance_identity(h, w, seed):
    r = np.random.default_rng(seed)
    y = (r.random((h, w)) < 0.5).astype(np.uint8)
    e = r.uniform(0, 1, (h, w))
    assert float(attention_loss(y, t(e), r.uniform(0.5, 6), r.uniform(0.1, 3))) >= 0
    gt = GroundTruthEdgeMap(y)
    assert gt.alpha + gt.edge_count / y.size == 1
    assert gt.edge_count + gt.nonedge_count == y.size


@given(st.integers(0, 2**31 - 1))
def test_lowering_an_edge_pixel_never_lowers_loss(seed):
    r = np.random.default_rng(seed)
    y = (r.random((3, 3)) < 0.4).astype(float)
    y[1, 1] = 1
    e = r.uniform(0.05, 0.95, (3, 3))
    beta, gamma = r.uniform(1, 6), r.uniform(0.2, 2)
    base = float(attention_loss(y, t(e), beta, gamma))
    e2 = e.copy()
    e2[1, 1] = e[1, 1] * r.uniform(0.1, 1.0)
    assert float(attention_loss(y, t(e2), beta, gamma)) >= base - 1e-12


def test_gradient_matches_central_differences(rng):
    y = (rng.random((6, 6)) < 0.3).astype(float)
    y[0, 0] = 1
    e = t(rng.uniform(0.1, 0.9, (6, 6))).requires_grad_(True)
    attention_loss(y, e, 4.0, 0.5).backward()
    h = 1e-5
    flat = e.detach().reshape(-1)
    for idx in range(flat.numel()):
        plus, minus = flat.clone(), flat.clone()
        plus[idx] += h
        minus[idx] -= h
        fd = (float(attention_loss(y, plus.view(6, 6), 4.0, 0.5)) - float(attention_loss(y, minus.view(6, 6), 4.0, 0.5))) / (2 * h)
        an = float(e.grad.reshape(-1)[idx])
        assert abs(fd - an) / max(abs(fd), abs(an), 1e-12) < 1e-4


def _five_tasks(seed):
    r = np.random.default_rng(seed)
    gts = {k: (r.random((2, 2)) < 0.5).astype(float) for k in TASKS}
    preds = {k: r.uniform(0.05, 0.95, (2, 2)) for k in TASKS}
    return gts, preds


def test_erind_sums_five_oracle_values():
    gts, preds = _five_tasks(7)
    cfg = LossConfig()
    expected = sum(attention_loss_scalar(gts[k].tolist(), preds[k].tolist(), 4.0, 0.5) for k in TASKS)
    got = float(erind_loss(gts, {k: t(v) for k, v in preds.items()}, cfg))
    assert got == pytest.approx(expected, abs=1e-12)


def test_erind_weights():
    gts, preds = _five_tasks(8)
    preds = {k: t(v) for k, v in preds.items()}
    cfg = LossConfig()
    cfg.lam = {k: 0.0 for k in TASKS}
    assert float(erind_loss(gts, preds, cfg)) == 0.0
    cfg.lam["n"] = 2.5
    assert float(erind_loss(gts, preds, cfg)) == pytest.approx(2.5 * float(attention_loss(gts["n"], preds["n"], 4.0, 0.5)))
    del gts["d"]
    with pytest.raises(KeyError):
        erind_loss(gts, preds, cfg)


def test_total_loss():
    assert total_loss(1.0, 2.0, 0.0) == 1.0
    assert total_loss(1.0, 2.0, 0.5) == 2.0
    assert total_loss(0.0, 3.25, 1.0) == 3.25
