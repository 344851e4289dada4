import hypothesis
import pytest

from refgame.domain import Vocabulary

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile("ci")

GOLDEN_TRAIN = "golden_train.vocab"
GOLDEN_TEST = "golden_test.vocab"


def data_path(name: str) -> str:
    from importlib import resources

    return str(resources.files("refgame").joinpath(f"data/{name}"))


@pytest.fixture(scope="session")
def golden_train() -> Vocabulary:
    return Vocabulary.load(data_path(GOLDEN_TRAIN))


@pytest.fixture(scope="session")
def golden_test() -> Vocabulary:
    return Vocabulary.load(data_path(GOLDEN_TEST))
