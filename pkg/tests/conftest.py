from __future__ import annotations

import numpy as np
import pytest

from sasv.loss import OneClassSoftmaxConfig
from sasv.model import InputMode, IntegrationModel
from sasv.synthgen import SynthConfig, generate, write_dataset
from sasv.training import TrainConfig, train

# small enough that training it for a couple of epochs is instant
TINY_SYNTH = SynthConfig(n_speakers=8, utts_per_speaker=3, spoofs_per_speaker=3,
                         sv_dim=6, cm_dim=5, seed=7)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate(TINY_SYNTH)


@pytest.fixture(scope="session")
def tiny_dataset_dir(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("tinyset")
    return write_dataset(tiny_dataset, str(out))


@pytest.fixture(scope="session")
def tiny_trained(tiny_dataset):
    ds = tiny_dataset
    rng = np.random.Generator(np.random.PCG64(3))
    model = IntegrationModel(InputMode.CONCAT, ds.config.sv_dim, ds.config.cm_dim, rng)
    return train(model, ds.sv_store, ds.cm_store, ds.protocols["train"],
                 ds.protocols["dev"], TrainConfig(epochs=2, seed=3),
                 OneClassSoftmaxConfig())
