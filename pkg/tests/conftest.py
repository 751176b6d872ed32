import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


def unit_columns(rng, k, r):
    D = rng.normal(size=(k, r))
    return D / np.linalg.norm(D, axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus_samples():
    """Descriptors of the default synthetic corpus (train, test)."""
    from tdsaliency import pipeline as pl
    from tdsaliency import synth
    from tdsaliency.config import TrainingConfig

    cfg = TrainingConfig()
    train, test = synth.make_corpus(0)

    def mk(it):
        return pl.make_sample(it.name, it.image, it.mask if it.labels else None,
                              it.labels, len(synth.CATEGORIES), cfg)

    return [mk(i) for i in train], [mk(i) for i in test]


@pytest.fixture(scope="session")
def trained_model(corpus_samples):
    from tdsaliency import pipeline as pl
    from tdsaliency import synth

    train, _ = corpus_samples
    return pl.train(train, synth.CATEGORIES)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
