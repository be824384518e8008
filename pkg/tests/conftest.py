import numpy as np
import pytest

from ttcod.config import ExperimentConfig
from ttcod.data import gen_data

# acceptance criterion results, filled by test_acceptance.py
ACCEPTANCE: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY = dict(image_size=32, channels=8, decoder_channels=4, n_train=6, n_test=3, steps=3,
            batch_size=2, probe_size=4, mini_batch=4)


@pytest.fixture(scope="session")
def tiny_cfg():
    return ExperimentConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory, tiny_cfg):
    out = tmp_path_factory.mktemp("tiny_data")
    gen_data(tiny_cfg.data_spec(), out)
    return out
