import numpy as np
import pytest

from sigkin.replay import replay_corpus
from sigkin.robot_model import load_chain
from sigkin.signature_io import SynthesisConfig, generate_corpus


@pytest.fixture(scope="session")
def chain():
    return load_chain()


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(SynthesisConfig(seed=5, n_users=4, genuine_per_user=7,
                                           forgeries_per_user=2))


@pytest.fixture(scope="session")
def small_features(chain, small_corpus):
    return replay_corpus(chain, small_corpus)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
