import numpy as np
import pytest

from services.consensus import QualificationMode, QualificationPolicy
from services.datasets import PartitionKind, PartitionScheme
from services.experiment import DataConfig, ExperimentConfig
from services.learning import Dataset, ParamVector, TrainConfig, model_size
from storage.chain import init_chain

TINY_SHAPE = (1, 1)


def random_vector(rng, shape=TINY_SHAPE) -> ParamVector:
    return ParamVector(rng.normal(size=model_size(shape)), shape)


def build_chain(k: int, rounds: int, seed: int = 0, shape=TINY_SHAPE):
    """Chain with `rounds` completed rounds of random updates and models."""
    rng = np.random.default_rng(seed)
    chain = init_chain(k, random_vector(rng, shape))
    for round_number in range(rounds):
        for uploader in range(k):
            chain.append_update_block(round_number, random_vector(rng, shape), uploader, float(rng.uniform()))
        chain.append_model_block(round_number + 1, random_vector(rng, shape))
    return chain


def small_config(**overrides) -> ExperimentConfig:
    """A fast experiment: 20 nodes, 10 active, committee of 5, k = 5."""
    base = dict(
        name="small",
        seed=3,
        n_nodes=20,
        active_fraction=0.5,
        committee_fraction=0.4,
        rounds=3,
        qualification=QualificationPolicy(mode=QualificationMode.ABSOLUTE, theta=0.01),
        train=TrainConfig(epochs=2, learning_rate=0.5, batch_size=16),
        data=DataConfig(n_samples=600, n_features=5, n_classes=3, class_separation=4.0),
        partition=PartitionScheme(kind=PartitionKind.DIRICHLET, alpha=1.0),
        baselines=(),
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@pytest.fixture
def make_chain():
    return build_chain


@pytest.fixture
def make_config():
    return small_config


@pytest.fixture
def line_data():
    """Two-class, one-feature data: class 1 iff x > 0."""
    return Dataset(np.array([[1.0], [-1.0], [2.0], [-2.0]]), np.array([1, 0, 1, 0]), 2)


@pytest.fixture
def good_delta():
    # from a zero model: class-1 logit minus class-0 logit is 2x
    return ParamVector([-1.0, 1.0, 0.0, 0.0], (1, 2))


@pytest.fixture
def bad_delta():
    return ParamVector([1.0, -1.0, 0.0, 0.0], (1, 2))


@pytest.fixture
def zero_model():
    return ParamVector(np.zeros(4), (1, 2))
