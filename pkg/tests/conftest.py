import sys

import numpy as np
import pytest

from msconv import kernels
from msconv.gradsuite import tiny_head_config
from msconv.tensor import Tensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_head():
    return tiny_head_config()


@pytest.fixture(params=sorted(kernels.BACKENDS))
def each_backend(request):
    prev = kernels.backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


def pyramid(rng, n, c, shapes):
    return [Tensor(rng.normal(size=(n, c, h, w))) for h, w in shapes]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
