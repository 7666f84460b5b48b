import dataclasses

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from l3avc.corpus import generate_synthetic_corpus
from l3avc.profiles import TINY

settings.register_profile("repo", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def small_corpus():
    """4 classes x 8 clips, tiny-profile media."""
    return generate_synthetic_corpus(dataclasses.replace(TINY.synthetic, num_classes=4, clips_per_class=8, seed=3))


@pytest.fixture(scope="session")
def tiny_corpus():
    """The full desk-scale corpus: 8 classes x 32 clips, 10% decorrelated."""
    return generate_synthetic_corpus(dataclasses.replace(TINY.synthetic, decorrelated_fraction=0.1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
