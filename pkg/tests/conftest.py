import numpy as np
import pytest

from data.synthetic import SyntheticSuiteConfig, generate_synthetic_suite
from models.config import ModelConfig
from models.transresnet import TransResNetModel
from services.schemas import TrainConfig


TINY_MODEL = dict(d_model=8, n_heads=2, text_layers=1, layers_per_combiner=1,
                  max_context_len=8, max_candidate_len=4)


@pytest.fixture
def rng():
    """Seeded generator for test inputs."""
    return np.random.default_rng(1234)


@pytest.fixture
def suite_config():
    """A suite small enough to train for a few steps in a unit test."""
    return SyntheticSuiteConfig(
        seed=0,
        train_size=24,
        valid_size=12,
        test_size=12,
        vocab_size=40,
        d_img=6,
        n_regions=2,
        n_styles=2,
        latent_factors=2,
        factor_values=3,
        ranking_candidates=4,
        history_turns=1,
        turn_length=2,
    )


@pytest.fixture
def suite(suite_config):
    """caption, chat and qa datasets."""
    return generate_synthetic_suite(suite_config)


@pytest.fixture
def by_name(suite):
    return {dataset.name: dataset for dataset in suite}


def tiny_model_config(datasets, **overrides) -> ModelConfig:
    return ModelConfig.for_datasets(datasets, **{**TINY_MODEL, **overrides})


@pytest.fixture
def model_config(suite):
    return tiny_model_config(suite)


@pytest.fixture
def model(model_config):
    return TransResNetModel(model_config)


@pytest.fixture
def train_config():
    """Two epochs of six steps, evaluated every epoch on a handful of examples."""
    return TrainConfig(batch_size=4, max_epochs=2, steps_per_epoch=6, patience=5, max_eval_examples=6, lr=1e-2)


@pytest.fixture
def make_model_config():
    """Model config sized for the given datasets with tiny dimensions."""
    return tiny_model_config


@pytest.fixture
def tiny_model():
    """Model overrides as a run config would carry them."""
    return dict(TINY_MODEL)
