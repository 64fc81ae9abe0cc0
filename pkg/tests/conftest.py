import time

import numpy as np
import pytest

from hmae import hamgen
from hmae.cli import DEFAULT_CONFIG, pretrainer_params
from hmae.model import HMAEPretrainer

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def _report(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        request.config.stash[ACCEPTANCE_LINES].append(line)
        print(line)
        assert ok, line

    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_corpus():
    """The 600-record default corpus (n in {4, 6, 8}, mixed families), split."""
    return hamgen.split_dataset(hamgen.generate_many(hamgen.default_family_specs(0)), seed=0)


@pytest.fixture(scope="session")
def pretrained(default_corpus):
    """Encoder pre-trained with the default desk-scale configuration on the train split."""
    train = [r for r in default_corpus if r.split == "train"]
    start = time.perf_counter()
    model = HMAEPretrainer(**pretrainer_params(DEFAULT_CONFIG)).fit(train)
    model.fit_seconds_ = time.perf_counter() - start
    return model
