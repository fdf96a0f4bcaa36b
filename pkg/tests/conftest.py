import numpy as np
import pytest
import torch

from longvideo.data import SyntheticSceneSpec, generate_synthetic
from longvideo.filterbank import design_bank
from longvideo.generator import LowResGenerator, desk_synthesis_config


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def desk_bank():
    return design_bank(16, 4, 64)


@pytest.fixture(scope="session")
def desk_generator(desk_bank):
    torch.manual_seed(1)
    return LowResGenerator(desk_bank, desk_synthesis_config(32)).eval()


@pytest.fixture(scope="session")
def small_generator():
    """16x16 output, tiny channels: cheap enough for loops."""
    torch.manual_seed(2)
    cfg = desk_synthesis_config(16, channel_divisor=32, w_dim=16)
    return LowResGenerator(design_bank(4, 4, 16), cfg).eval()


@pytest.fixture(scope="session")
def tiny_store(tmp_path_factory):
    """8 clips of 40 frames, 64x64 high / 16x16 low."""
    root = tmp_path_factory.mktemp("tiny_store")
    return generate_synthetic(SyntheticSceneSpec(seed=3, velocity=1.0), 8, 40, root, (64, 64), (16, 16))


@pytest.fixture(scope="session")
def sr_store(tmp_path_factory):
    """6 clips of 20 frames, 32x32 high / 8x8 low."""
    root = tmp_path_factory.mktemp("sr_store")
    return generate_synthetic(SyntheticSceneSpec(seed=4), 6, 20, root, (32, 32), (8, 8))


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance(request):
    """``acceptance(n, ok, detail)`` prints one PASS/FAIL line per criterion,
    immediately and again in the terminal summary."""
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def emit(name, ok: bool, detail: str):
        line = f"criterion {name}: {'PASS' if ok else 'FAIL'} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        if reporter is not None:
            reporter.ensure_newline()
            reporter.write_line(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
