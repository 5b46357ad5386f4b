import numpy as np
import pytest
import torch

from posegen.config import TrainConfig
from posegen.datagen import generate_dataset, load_dataset


@pytest.fixture(scope="session")
def tiny_data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_data")
    generate_dataset(24, 24, 2, 16, 11, root)
    return root


@pytest.fixture(scope="session")
def tiny_data(tiny_data_dir):
    return load_dataset(tiny_data_dir, size=16)


@pytest.fixture
def tiny_config():
    return TrainConfig(image_size=16, d_u=4, ngf=8, ndf=8, nef=8, iterations=5, checkpoint_every=2)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_run(tiny_data_dir, tmp_path_factory):
    from posegen.trainer import train

    cfg = TrainConfig(image_size=16, d_u=4, ngf=8, ndf=8, nef=8, iterations=3, checkpoint_every=2)
    return train(cfg, tiny_data_dir, tmp_path_factory.mktemp("tiny_run"))


@pytest.fixture(scope="session")
def tiny_ckpt(tiny_run):
    from posegen.checkpoint import load_checkpoint

    ckpt = load_checkpoint(tiny_run.final_checkpoint)
    with torch.no_grad():
        # open the code pathway so outputs depend on the code
        for block in ckpt.nets.G_Y.blocks:
            block.code.weight.normal_(0, 0.2, generator=torch.Generator().manual_seed(0))
    return ckpt
