import numpy as np
import pytest
import torch

from mixwb.gridnet import (
    GridNet,
    GridNetConfig,
    ModelCheckpoint,
    blend,
    load_checkpoint,
    model_megabytes,
    parameter_count,
    save_checkpoint,
)

TINY = GridNetConfig(k=3, columns=2, rows=2, stem_channels=4, res_blocks=1)


def randomized(net, seed=0, scale=0.3):
    # the zero-initialized head makes every fresh net output uniform weights
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in net.parameters():
            p.copy_(torch.randn(p.shape, generator=g, dtype=p.dtype) * scale)
    return net


def test_config_validation():
    with pytest.raises(ValueError):
        GridNetConfig(columns=3)
    with pytest.raises(ValueError):
        GridNetConfig(k=0)
    assert GridNetConfig().widths == [8, 16, 32, 64]
    assert GridNetConfig().multiple == 8


@pytest.mark.parametrize("k,target", [(3, 5.09), (5, 5.10)])
def test_model_size_near_reference(k, target):
    mb = model_megabytes(GridNetConfig(k=k))
    assert abs(mb - target) / target <= 0.25


def test_parameter_count_matches_module():
    net = GridNet(TINY)
    assert parameter_count(TINY) == sum(p.numel() for p in net.parameters())


def test_fresh_net_outputs_uniform_weights():
    net = GridNet(GridNetConfig(k=3))
    w = net(torch.rand(2, 9, 32, 32))
    assert torch.allclose(w, torch.full_like(w, 1 / 3))


@pytest.mark.parametrize("hw", [(16, 16), (17, 23), (5, 9)])
def test_output_shape_and_normalization(hw):
    net = randomized(GridNet(GridNetConfig(k=3, rows=3)))
    w = net(torch.rand(1, 9, *hw))
    assert w.shape == (1, 3, *hw)
    assert torch.all(w >= 0)
    assert torch.allclose(w.sum(1), torch.ones(1, *hw), atol=1e-5)


def test_translation_covariance_on_interior():
    net = randomized(GridNet(TINY).double(), seed=1, scale=0.2)
    x = torch.rand(1, 9, 96, 96, dtype=torch.float64)
    full = net(x)
    shifted = net(x[..., 8:, 8:])
    # away from the borders, shifting the input by a multiple of the grid
    # stride shifts the output the same way
    a = full[..., 8 + 32:8 + 56, 8 + 32:8 + 56]
    b = shifted[..., 32:56, 32:56]
    assert torch.allclose(a, b, atol=1e-9)


def test_forward_is_deterministic():
    net = randomized(GridNet(TINY))
    x = torch.rand(1, 9, 16, 16)
    assert torch.equal(net(x), net(x))


def test_blend_numpy_and_torch_agree():
    rng = np.random.default_rng(0)
    w = rng.dirichlet(np.ones(3), size=(4, 5)).transpose(2, 0, 1)
    ims = rng.uniform(size=(3, 4, 5, 3))
    a = blend(w, ims)
    b = blend(torch.from_numpy(w)[None], torch.from_numpy(ims.transpose(0, 3, 1, 2))[None])[0]
    assert np.allclose(a, b.numpy().transpose(1, 2, 0))
    with pytest.raises(ValueError):
        blend(w[:2], ims)


def test_blend_one_hot_selects_image():
    ims = np.random.default_rng(1).uniform(size=(3, 4, 4, 3))
    w = np.zeros((3, 4, 4))
    w[1] = 1
    assert np.array_equal(blend(w, ims), ims[1])


def test_checkpoint_round_trip(tmp_path):
    net = randomized(GridNet(TINY), seed=4)
    ck = ModelCheckpoint.from_model(net, "tds", epoch=7, rng_state={"seed": 1}, meta={"note": "x"},
                                    optimizer_state={"tensors": {"0.exp_avg": np.ones(3, np.float32)},
                                                     "steps": {"0": 5}, "lr": 0.1})
    save_checkpoint(ck, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt")
    assert back.presets == "tds" and back.epoch == 7 and back.config == TINY
    assert back.optimizer_state["steps"] == {"0": 5}
    x = torch.rand(1, 9, 16, 16)
    assert torch.equal(back.build()(x), net.eval()(x))
    save_checkpoint(back, tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_rejects_foreign_format(tmp_path):
    import zipfile
    with zipfile.ZipFile(tmp_path / "bad.ckpt", "w") as zf:
        zf.writestr("config.json", "{}")
        zf.writestr("index.json", '{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.ckpt")
