import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from simkd.data import gen_synthetic, normalize
from simkd.distill import DistillConfig, train_model
from simkd.network import build, plain_cnn
from simkd.numeric import Rng

settings.register_profile(
    "simkd", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("simkd")


@pytest.fixture(scope="session")
def tiny_data():
    """Normalized 4-class 8x8 train/test pair, 20 images per class."""
    train, test = gen_synthetic(4, 20, seed=3)
    mean, std = train.channel_stats()
    return normalize(train, mean, std), normalize(test, mean, std)


@pytest.fixture(scope="session")
def tiny_teacher(tiny_data):
    """A briefly trained (8, 16) teacher for the tiny dataset."""
    train, test = tiny_data
    spec = plain_cnn((8, 16), 4)
    model, _ = train_model(spec, train, test, DistillConfig.desk(4, method="teacher", seed=11, augment=False))
    return model


@pytest.fixture
def rng():
    return Rng(1234, ("tests",))


def random_model(widths=(4, 8), classes=4, seed=0):
    return build(plain_cnn(widths, classes), Rng(seed))


def assert_params_equal(a: dict, b: dict):
    assert set(a) == set(b)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes(), k


def fast_config(epochs=2, **kw):
    kw.setdefault("augment", False)
    return DistillConfig.desk(epochs, **kw)


np.set_printoptions(precision=6)


# One line per acceptance criterion, repeated in the terminal summary so it
# shows up without ``-s``.
ACCEPTANCE_LINES: list[str] = []
ACCEPTANCE_REPORTS: list[tuple[str, str]] = []


def record_criterion(number: int, status: str, detail: str) -> None:
    line = f"criterion {number:>2}: {status:<6} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def record_report(title: str, text: str) -> None:
    ACCEPTANCE_REPORTS.append((title, text))
    print(f"{title}\n{text}")


def pytest_terminal_summary(terminalreporter):
    for title, text in ACCEPTANCE_REPORTS:
        terminalreporter.section(title)
        terminalreporter.write(text)
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
