import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def float64():
    prev = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(prev)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    from cmfseg.data import generate_dataset

    root = tmp_path_factory.mktemp("tiny")
    return generate_dataset(root, {"train": 12, "val": 6, "test": 4}, seed=0)


@pytest.fixture
def tiny_cfg(tiny_dataset):
    from cmfseg.harness import preset

    return preset("desk", manifest=str(tiny_dataset), max_steps=5, batch_size=4,
                  visual_dim=16, word_dim=16, cmf=dict(out_dim=8, fusion_dim=8, dilations=[1, 3]))


ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
