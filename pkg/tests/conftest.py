from __future__ import annotations

import pytest

from rpd.attackers import AttackerConfig
from rpd.corpus import generate_corpus
from rpd.model import TrainConfig, train_joint, train_victim
from rpd.sampling import construct_detection_dataset, sample_adversaries


@pytest.fixture(scope="session")
def small_corpus():
    """A 300/100 draw from the bundled generator: big enough to train, quick to attack."""
    return generate_corpus(seed=7, n_train=300, n_test=100)


@pytest.fixture(scope="session")
def small_attack_cfg(small_corpus):
    return AttackerConfig(small_corpus[2], seed=7)


@pytest.fixture(scope="session")
def small_victim(small_corpus):
    return train_victim(small_corpus[0], TrainConfig(seed=7))


@pytest.fixture(scope="session")
def small_records(small_corpus, small_victim, small_attack_cfg):
    return sample_adversaries(small_victim, small_corpus[0], cfg=small_attack_cfg)


@pytest.fixture(scope="session")
def small_joint(small_corpus, small_records):
    rows = construct_detection_dataset(small_corpus[0], small_records)
    return train_joint(rows, TrainConfig(seed=7), 2)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
