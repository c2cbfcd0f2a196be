import os
import time
from pathlib import Path

import numpy as np
import pytest

from hmd_fer.dataset import parse_fer_csv, stratified_subset
from hmd_fer.synthetic import synthetic_corpus
from hmd_fer.training import TrainConfig, train

ACCEPTANCE_LINES = []


def corpus_path():
    d = os.environ.get("HMD_FER_DATA_DIR")
    if d and (Path(d) / "fer2013.csv").is_file():
        return Path(d) / "fer2013.csv"
    return None


@pytest.fixture(scope="session")
def fer_corpus():
    path = corpus_path()
    if path is None:
        pytest.skip("FER2013 corpus not found (set HMD_FER_DATA_DIR to a directory holding fer2013.csv)")
    return parse_fer_csv(path)


@pytest.fixture(scope="session")
def faces():
    """Small labelled synthetic corpus (10 per class)."""
    return synthetic_corpus(10, seed=3)


@pytest.fixture(scope="session")
def quick_checkpoint(faces):
    """Mini preset trained for a couple of epochs; enough to give non-trivial predictions."""
    ckpt, _ = train(TrainConfig(epochs=2, batch_size=16, seed=5), faces, faces[:14])
    return ckpt


# Pinned by a pilot run: 80 epochs reach train loss 0.0126 and accuracy 1.0.
OVERFIT_CONFIG = TrainConfig(preset="vgg-fer-mini", epochs=80, batch_size=16, seed=0,
                             learning_rate=0.01)


@pytest.fixture(scope="session")
def overfit_examples():
    """56 stratified examples (8 per class)."""
    return stratified_subset(synthetic_corpus(20, seed=1), 8, seed=0)


@pytest.fixture(scope="session")
def overfit_run(overfit_examples):
    """(checkpoint, history, seconds) of the overfit fixture; trained once per session."""
    t0 = time.perf_counter()
    ckpt, history = train(OVERFIT_CONFIG, overfit_examples, overfit_examples)
    return ckpt, history, time.perf_counter() - t0


@pytest.fixture(scope="session")
def held_faces():
    """Synthetic faces never seen in training (6 per class, test split)."""
    return synthetic_corpus(6, seed=9, split="test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
