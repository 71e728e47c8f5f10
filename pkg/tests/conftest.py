import pytest

from ski.synthdata import DatasetConfig, generate_dataset
from ski.training import TrainConfig, make_train_data, seen_subset


@pytest.fixture(scope="session")
def tiny_dataset():
    """Small but real benchmark: 6 classes x 6 samples, 5/1 split."""
    config = DatasetConfig(num_classes=6, samples_per_class=6, seed=3)
    triplets, split = generate_dataset(config)
    return config, triplets, split


@pytest.fixture(scope="session")
def tiny_seen(tiny_dataset):
    _, triplets, split = tiny_dataset
    return make_train_data(seen_subset(triplets, split)), split


@pytest.fixture()
def fast_cfg():
    return TrainConfig(pretrain_epochs=6, align_epochs=6, finetune_epochs=6,
                       scd_epochs=3, lvlm_epochs=2, seed=0)
