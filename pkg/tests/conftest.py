import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=30, deadline=None)
settings.register_profile("fast", max_examples=5, deadline=None)
settings.load_profile("default")

from ect.config import ModelConfig  # noqa: E402
from ect.data import Sample, union_of_causes  # noqa: E402
from ect.toy import render_scene  # noqa: E402


@pytest.fixture
def toy_cfg():
    return ModelConfig()


@pytest.fixture
def small_cfg():
    # 32x32 input keeps double-precision gradient checks quick
    return ModelConfig(image_height=32, image_width=32, embed_dim=16, encoder_layers=4, tap_indices=(1, 2, 3, 4),
                       decoder_stages=2, encoder_heads=2, decoder_heads=2, stem_channels=8)


@pytest.fixture(scope="session")
def toy_samples():
    out = []
    for k in range(8):
        scene = render_scene(k)
        gt = dict(scene["gt"])
        gt["e"] = union_of_causes(gt)
        out.append(Sample(scene["image"], gt, f"scene{k:02d}"))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


PHI_STEPS = 600
BUNDLED_ROOT = Path(__file__).resolve().parents[1] / "data" / "toy"


def edge_corpus(samples):
    """Generic and per-cause GT maps of the toy scenes, as float arrays."""
    return [m.astype(np.float32) for s in samples for m in s.gt.values()]


@pytest.fixture(scope="session")
def bundled_samples():
    from ect.data import load_split

    return load_split(BUNDLED_ROOT, "train")


@pytest.fixture(scope="session")
def pretrained_phi(bundled_samples):
    """(net, report, seconds) for the inverse network pretrained on the bundled corpus."""
    from ect.alignment import pretrain_inverse_net

    start = time.perf_counter()
    net, report = pretrain_inverse_net(edge_corpus(bundled_samples), steps=PHI_STEPS, seed=0)
    return net, report, time.perf_counter() - start


# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
