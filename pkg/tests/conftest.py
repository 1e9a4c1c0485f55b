import numpy as np
import pytest
from hypothesis import settings

from echomamba import tensor as T

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def fresh_state():
    """64-bit mode and an empty tape for every test; restore afterwards."""
    old = T.get_dtype()
    T.set_precision(64)
    T.current_tape().clear()
    yield
    T.current_tape().clear()
    T.set_precision(32 if old == np.float32 else 64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion("A3", ok, "detail")``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(name, ok, detail):
        line = f"{name} {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
