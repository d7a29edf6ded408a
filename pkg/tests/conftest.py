import pytest
import torch

from unlearnbench.data import SyntheticConfig, make_blobs
from unlearnbench.model import init_model, mlp

torch.set_num_threads(1)

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, passed, detail)`` for the end-of-session summary."""

    def record(number: int, passed: bool, detail: str = "") -> None:
        _ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def blobs():
    return make_blobs(SyntheticConfig(num_classes=3, dim=4, train_per_class=30, val_per_class=10,
                                      test_per_class=20, center_scale=3.0), seed=0)


@pytest.fixture
def tiny_arch():
    return mlp(4, [6], 3)


@pytest.fixture
def tiny_model(tiny_arch):
    return init_model(tiny_arch, 0)

