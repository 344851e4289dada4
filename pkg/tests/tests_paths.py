"""Paths to packaged golden data, shared across test modules."""

from importlib import resources

GOLDEN_TRAIN_PATH = str(resources.files("refgame").joinpath("data/golden_train.vocab"))
GOLDEN_TEST_PATH = str(resources.files("refgame").joinpath("data/golden_test.vocab"))
