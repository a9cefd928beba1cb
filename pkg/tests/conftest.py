import numpy as np
import pytest

from buckpinn.training import (TrainConfig, default_dataset_spec, generate_dataset,
                               split_indices, train)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the full-budget training test")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def small_spec():
    # short runs, so step the loads often enough that every channel varies
    return default_dataset_spec(count=600, seed=0, event_period=5e-4)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return generate_dataset(small_spec)


@pytest.fixture(scope="session")
def full_spec():
    return default_dataset_spec(count=18_000, seed=0)


@pytest.fixture(scope="session")
def full_dataset(full_spec):
    return generate_dataset(full_spec)


@pytest.fixture(scope="session")
def full_split(full_dataset):
    return split_indices(len(full_dataset), 0.75, 0)


@pytest.fixture(scope="session")
def trained(full_dataset, full_split):
    """The default desk-scale run: 2x32 hidden, 5e4 iterations."""
    tr, va = full_split
    net, log = train(full_dataset, tr, va, TrainConfig())
    return net, log


@pytest.fixture(scope="session")
def trained_checkpoint(trained, tmp_path_factory):
    from buckpinn.net import save_checkpoint
    path = tmp_path_factory.mktemp("ckpt") / "net.json"
    save_checkpoint(trained[0], path)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def record():
    """Log one acceptance verdict line; the test still asserts on its own."""
    def _record(number, title, ok, detail=""):
        ACCEPTANCE.append((number, title, bool(ok), detail))
        print(f"criterion {number:>2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:>2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
