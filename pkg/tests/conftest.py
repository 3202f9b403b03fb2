import numpy as np
import pytest
from hypothesis import settings

from afn.datagen import chain_transitions, generate_dataset, make_grammar

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def chain_grammar():
    """Two activities of four actions each, deterministic chains, noiseless frames."""
    return make_grammar(
        [[0, 1, 2, 3], [4, 5, 6, 7]],
        [chain_transitions(4), chain_transitions(4)],
        8,
        durations=np.tile([2, 4], (8, 1)),
        noise_sigma=0.0,
        image_size=16,
        seed=5,
    )


@pytest.fixture
def chain_videos(chain_grammar):
    return generate_dataset(chain_grammar, 12, seed=3)
