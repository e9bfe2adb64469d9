import dataclasses

import numpy as np
import pytest
import torch

from viewlift.config import ModelConfig, Step1Config, Step2Config, config_from_dict
from viewlift.dataset import make_dataset


def finite_difference_check(fn, params, rel_tol=1e-3, h=1e-6):
    """Compare autograd gradients of the scalar ``fn()`` against central
    finite differences for every element of ``params`` (double precision).

    ``fn`` must rebuild its graph from the params on each call.
    """
    params = list(params)
    grads = torch.autograd.grad(fn(), params)
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            step = h * max(1.0, abs(old))
            flat[i] = old + step
            up = fn().item()
            flat[i] = old - step
            down = fn().item()
            flat[i] = old
            fd = (up - down) / (2.0 * step)
            ad = gflat[i].item()
            denom = max(abs(fd), abs(ad))
            assert abs(fd - ad) <= rel_tol * denom + 1e-8, (
                f"element {i}: finite-diff {fd:.8g} vs autograd {ad:.8g}"
            )


def tiny_model_config(**overrides) -> ModelConfig:
    base = dict(
        image_size=32,
        encoder_base=16,
        encoder_multipliers=(1, 2),
        feature_channels=32,
        time_dim=32,
        latent_channels=4,
        vae_base=16,
        unet_base=16,
        unet_multipliers=(1, 2),
        n_heads=4,
        lora_rank=4,
        volume_grid=(4, 4, 4),
        volume_blocks=2,
        aggregator_pairs=1,
        depth_samples=6,
        campred_hidden=32,
        total_steps=20,
    )
    base.update(overrides)
    return ModelConfig(**base)


def tiny_run_config(model=None, **train_overrides):
    cfg = config_from_dict({})
    train = dataclasses.replace(
        cfg.train,
        eval_interval=0,
        eval_scenes=2,
        checkpoint_interval=0,
        ddim_steps=10,
        step1=Step1Config(iterations=40, lr=3e-4, batch_size=2, vae_pretrain_iters=40, vae_lr=1e-3),
        step2=Step2Config(iterations=20, lr=1e-3, batch_size=1, n_targets=3),
        **train_overrides,
    )
    return dataclasses.replace(cfg, model=model or tiny_model_config(), train=train)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "tiny"
    make_dataset(root, n_scenes=6, views=4, image_size=32, seed=0, val_scenes=2)
    return root


@pytest.fixture(scope="session")
def tiny_cfg():
    return tiny_run_config()


@pytest.fixture(scope="session")
def tiny_step1_ckpt(tiny_dataset, tiny_cfg, tmp_path_factory):
    from viewlift.train import train_step1

    out = tmp_path_factory.mktemp("step1")
    return train_step1(tiny_dataset, out, tiny_cfg, log=lambda *a: None)


@pytest.fixture(scope="session")
def tiny_step2_ckpt(tiny_dataset, tiny_cfg, tiny_step1_ckpt, tmp_path_factory):
    from viewlift.train import train_step2

    out = tmp_path_factory.mktemp("step2")
    return train_step2(tiny_dataset, out, tiny_cfg, tiny_step1_ckpt, log=lambda *a: None)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
