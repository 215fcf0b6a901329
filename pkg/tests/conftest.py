import pytest
import torch

from deepi2i.config import ArchConfig, LossConfig, TrainConfig
from deepi2i.data import synth_toy_dataset


def small_arch(**kw) -> ArchConfig:
    base = dict(resolution=32, base_width=4, num_classes=4, z_dim=20, embed_dim=8,
                num_levels=4, bottleneck_resolution=2)
    base.update(kw)
    return ArchConfig(**base)


def small_train(**kw) -> TrainConfig:
    base = dict(total_iterations=4, batch_size=8, ema_decay=0.9, log_every=1, seed=0)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture
def arch():
    return small_arch()


@pytest.fixture
def loss_cfg():
    return LossConfig()


@pytest.fixture(scope="session")
def toy4():
    return synth_toy_dataset(4, 20, 32, seed=0)


@pytest.fixture(scope="session")
def source8():
    return synth_toy_dataset(8, 20, 32, seed=0, family_offset=8)


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[0][2:])):
        terminalreporter.write_line(line)
