import numpy as np
import pytest

from scribble_sod.config import NetworkConfig, TrainConfig
from scribble_sod.synth import synth_generate

TINY_NET = NetworkConfig(stage_channels=(4, 6, 8, 8), input_size=32, global_channels=8, decoder_channels=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    return synth_generate(root, 8, 32, seed=5)


@pytest.fixture
def tiny_config():
    return TrainConfig(epochs=2, batch_size=4, train_size=32, network=TINY_NET, eval_every=1)


_ACCEPTANCE = []


def acceptance_line(text: str) -> None:
    """Record a criterion verdict; printed now and again in the session summary."""
    _ACCEPTANCE.append(text)
    print(text)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda t: int(t.split()[2])):
            terminalreporter.write_line(line)
