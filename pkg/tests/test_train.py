import numpy as np
import pytest
import torch

from ect import checkpoint as ckpt
from ect.alignment import InverseTransformNet, freeze
from ect.config import ConfigError, ModelConfig, RunConfig
from ect.losses import erind_loss
from ect.train import Trainer, compute_losses, load_model, task_predictions, train
from ect.data import to_tensors


def tiny_run(tmp_path=None, **optim):
    cfg = RunConfig()
    cfg.model = ModelConfig(embed_dim=16, stem_channels=8, encoder_heads=2, decoder_heads=2, decoder_stages=2)
    cfg.augment.enabled = False
    cfg.optim.batch_size = 4
    cfg.optim.steps = optim.pop("steps", 4)
    for k, v in optim.items():
        setattr(cfg.optim, k, v)
    cfg.checkpoint_every = 0
    if tmp_path is not None:
        cfg.output_dir = str(tmp_path)
    return cfg


def test_alignment_weight_needs_inverse_net(toy_samples):
    with pytest.raises(ConfigError):
        Trainer(tiny_run(), toy_samples)


def test_zero_alignment_weight_reduces_to_edge_loss(toy_samples):
    cfg = tiny_run()
    cfg.loss.lambda_a = 0.0
    trainer = Trainer(cfg, toy_samples)
    images, gts = to_tensors(toy_samples[:2])
    l_erind, l_align, l_total = compute_losses(trainer.model, images, gts, cfg, None)
    assert l_align.item() == 0 and torch.equal(l_total, l_erind)
    direct = erind_loss(gts, task_predictions(trainer.model(images)), cfg.loss)
    assert torch.equal(direct, l_erind)


def test_inverse_net_stays_frozen_through_training(toy_samples):
    cfg = tiny_run(steps=2)
    phi = InverseTransformNet(64)
    torch.nn.init.normal_(phi.regressor[-1].weight, std=0.01)
    before = {k: v.clone() for k, v in phi.state_dict().items()}
    trainer = Trainer(cfg, toy_samples, freeze(phi))
    for _ in range(2):
        entry = trainer.train_step()
        assert np.isfinite(entry.l_total) and entry.l_alignment > 0
    assert all(torch.equal(before[k], v) for k, v in phi.state_dict().items())
    assert all(p.grad is None for p in phi.parameters())


@pytest.mark.parametrize("name", ["sgd", "adam"])
def test_resume_reproduces_next_loss(toy_samples, tmp_path, name):
    cfg = tiny_run(steps=4, name=name, lr=1e-3)
    cfg.loss.lambda_a = 0.0
    full = Trainer(cfg, toy_samples)
    for _ in range(4):
        full.train_step()
    part = Trainer(cfg, toy_samples)
    for _ in range(2):
        part.train_step()
    part.save(tmp_path / "mid")
    resumed = Trainer(cfg, toy_samples)
    resumed.restore(tmp_path / "mid")
    for k in (2, 3):
        entry = resumed.train_step()
        assert entry.step == k
        assert abs(entry.l_total - full.history[k].l_total) <= 1e-6 * abs(full.history[k].l_total)


def test_checkpoint_roundtrip_is_byte_identical(toy_samples, tmp_path):
    cfg = tiny_run(steps=1, name="adam", lr=1e-3)
    cfg.loss.lambda_a = 0.0
    trainer = Trainer(cfg, toy_samples)
    trainer.train_step()
    trainer.save(tmp_path / "a")
    again = Trainer(cfg, toy_samples)
    again.restore(tmp_path / "a")
    again.save(tmp_path / "b")
    assert (tmp_path / "a.npz").read_bytes() == (tmp_path / "b.npz").read_bytes()
    assert (tmp_path / "a.json").read_bytes() != b""


def test_train_writes_log_and_loads_back(toy_samples, tmp_path):
    cfg = tiny_run(tmp_path, steps=3)
    cfg.loss.lambda_a = 0.0
    trainer = train(cfg, toy_samples[:4])
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 3
    model, loaded_cfg = load_model(tmp_path / "final")
    assert loaded_cfg.to_dict() == cfg.to_dict()
    x = torch.rand(1, 3, 64, 64)
    trainer.model.eval()
    with torch.no_grad():
        assert torch.equal(model(x).fine, trainer.model(x).fine)


def test_load_rejects_wrong_shapes(tmp_path):
    small = torch.nn.Linear(3, 2)
    ckpt.save_checkpoint(tmp_path / "m", ckpt.module_arrays(small), {})
    arrays, _ = ckpt.load_checkpoint(tmp_path / "m")
    with pytest.raises(ValueError):
        ckpt.load_module_arrays(torch.nn.Linear(4, 2), arrays)
    with pytest.raises(KeyError):
        ckpt.load_module_arrays(torch.nn.Sequential(torch.nn.Linear(3, 2)), arrays)


def test_nonfinite_loss_is_reported(toy_samples):
    cfg = tiny_run(steps=1)
    cfg.loss.lambda_a = 0.0
    trainer = Trainer(cfg, toy_samples)
    with torch.no_grad():
        trainer.model.stage2.cause_tokens.fill_(float("nan"))
    with pytest.raises(FloatingPointError):
        trainer.train_step()
