from __future__ import annotations

import numpy as np
import pytest

from lesionnet.data.phantom import PhantomConfig, generate_phantom_dataset


@pytest.fixture(scope="session")
def tiny_phantom(tmp_path_factory):
    """24 images of 48x48 px; enough for 2 folds and a couple of training steps."""
    out = tmp_path_factory.mktemp("phantom")
    cfg = PhantomConfig(image_count=24, image_size=48, radius_range=(3, 6), seed=5)
    return generate_phantom_dataset(cfg, out), out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
