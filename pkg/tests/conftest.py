import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from covos.kernels import backends  # noqa: E402
from covos.synthetic import demo_noise_path, demo_scene_path, generate, load_noise, load_scene  # noqa: E402

BACKENDS = sorted(backends())


@pytest.fixture(params=BACKENDS)
def backend(request):
    return backends()[request.param]


@pytest.fixture(scope="session")
def demo():
    return generate(load_scene(demo_scene_path()), seed=0)


@pytest.fixture(scope="session")
def noisy_demo():
    return generate(load_scene(demo_scene_path()), load_noise(demo_noise_path()), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
