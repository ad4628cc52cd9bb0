import numpy as np
import pytest
import torch

from mixwb.gridnet import GridNet
from mixwb.training import (
    TrainConfig,
    TrainingDiverged,
    TrainingSet,
    epoch_order,
    load_training_set,
    reconstruction_loss,
    sample_batch,
    smoothness_loss,
    total_loss,
    train,
)
from mixwb.scene import generate_testset

from .oracles import gradient_check, sobel_energy_numpy


def small_set(n=4, size=32, seed=0):
    rng = np.random.default_rng(seed)
    return TrainingSet(rng.uniform(size=(n, 3, 3, size, size)).astype(np.float32),
                       rng.uniform(size=(n, 3, size, size)).astype(np.float32), "tds")


def quick_cfg(**kw):
    base = dict(patch_size=16, patches_per_image=2, images_per_iter=2, batch=4, epochs=2,
                lr=1e-3, seed=0, gridnet={"columns": 2, "rows": 2, "stem_channels": 4, "res_blocks": 1})
    base.update(kw)
    return TrainConfig(**base)


# --- config ---------------------------------------------------------------

def test_defaults():
    cfg = TrainConfig()
    assert cfg.batch == 32 and cfg.patches_per_image * cfg.images_per_iter == 32
    assert cfg.lam == 100 and (cfg.beta1, cfg.beta2) == (0.9, 0.999)


@pytest.mark.parametrize("kw", [{"batch": 31}, {"patch_size": 60}, {"lam": -1}, {"presets": "tq"}])
def test_config_errors(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# --- losses ---------------------------------------------------------------

def test_reconstruction_loss_exact_blend_is_zero():
    x = torch.rand(2, 3, 3, 8, 8)
    w = torch.zeros(2, 3, 8, 8)
    w[:, 1] = 1
    assert reconstruction_loss(w, x, x[:, 1]).item() == 0.0


def test_reconstruction_loss_is_batch_mean_of_frobenius():
    x = torch.rand(4, 3, 3, 8, 8, dtype=torch.float64)
    t = torch.rand(4, 3, 8, 8, dtype=torch.float64)
    w = torch.softmax(torch.randn(4, 3, 8, 8, dtype=torch.float64), 1)
    per = [((t[i] - (w[i, :, None] * x[i]).sum(0)) ** 2).sum() for i in range(4)]
    assert reconstruction_loss(w, x, t).item() == pytest.approx(float(sum(per) / 4))


def test_smoothness_matches_loop_oracle():
    w = torch.rand(2, 3, 9, 7, dtype=torch.float64)
    ref = sum(sobel_energy_numpy(w[i].numpy()) for i in range(2)) / 2
    assert smoothness_loss(w).item() == pytest.approx(ref)


def test_smoothness_zero_for_constant_maps():
    assert smoothness_loss(torch.full((1, 3, 8, 8), 1 / 3)).item() == pytest.approx(0.0, abs=1e-12)


def test_total_loss_examples():
    assert total_loss(1.0, 0.01, 100) == pytest.approx(2.0)
    assert total_loss(3.0, 0.5, 0) == 3.0
    assert total_loss(3.0, 0.0, 100) == 3.0
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -1)


def test_total_loss_monotone_in_lambda():
    vals = [total_loss(1.0, 0.2, lam) for lam in (0, 1, 10, 100)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_reconstruction_loss_convex_in_weights():
    g = torch.Generator().manual_seed(0)
    for _ in range(20):
        x = torch.rand(2, 3, 3, 6, 6, generator=g, dtype=torch.float64)
        t = torch.rand(2, 3, 6, 6, generator=g, dtype=torch.float64)
        w1 = torch.softmax(torch.randn(2, 3, 6, 6, generator=g, dtype=torch.float64), 1)
        w2 = torch.softmax(torch.randn(2, 3, 6, 6, generator=g, dtype=torch.float64), 1)
        mid = reconstruction_loss((w1 + w2) / 2, x, t)
        assert mid <= (reconstruction_loss(w1, x, t) + reconstruction_loss(w2, x, t)) / 2 + 1e-12


def test_gradients_match_finite_differences():
    assert gradient_check(seed=11) <= 1e-3


# --- sampling -------------------------------------------------------------

def test_sample_batch_alignment_and_bounds():
    data = small_set()
    cfg = quick_cfg()
    b = sample_batch(data, cfg, np.random.default_rng(0))
    assert b.inputs.shape == (4, 3, 3, 16, 16) and b.targets.shape == (4, 3, 16, 16)
    for i, (idx, (y, x)) in enumerate(zip(b.index, b.corners)):
        assert 0 <= y <= 16 and 0 <= x <= 16
        assert np.array_equal(b.inputs[i], data.inputs[idx, :, :, y:y + 16, x:x + 16])
        assert np.array_equal(b.targets[i], data.targets[idx, :, y:y + 16, x:x + 16])


def test_sample_batch_deterministic():
    data, cfg = small_set(), quick_cfg()
    a = sample_batch(data, cfg, np.random.default_rng(5))
    b = sample_batch(data, cfg, np.random.default_rng(5))
    assert np.array_equal(a.corners, b.corners) and np.array_equal(a.index, b.index)


def test_patch_larger_than_image():
    with pytest.raises(ValueError):
        sample_batch(small_set(size=8), quick_cfg(), np.random.default_rng(0))


def test_epoch_order_covers_all_images():
    order = epoch_order(7, quick_cfg(), 0)
    seen = np.concatenate(order)
    assert set(range(7)) <= set(seen.tolist())
    assert all(len(ids) == 2 for ids in order)
    assert [o.tolist() for o in order] == [o.tolist() for o in epoch_order(7, quick_cfg(), 0)]


# --- loop -----------------------------------------------------------------

def test_training_is_deterministic(tmp_path):
    data = small_set()
    r1 = train(data, quick_cfg(), out_dir=tmp_path / "a")
    r2 = train(data, quick_cfg(), out_dir=tmp_path / "b")
    assert r1.history == r2.history
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()
    assert len(r1.history) == 2 * 2 and r1.checkpoint.epoch == 2


def test_zero_lr_leaves_parameters_unchanged():
    data = small_set()
    r = train(data, quick_cfg(lr=0.0))
    torch.manual_seed(0)
    fresh = GridNet(quick_cfg().net_config())
    for k, v in fresh.state_dict().items():
        assert np.array_equal(r.checkpoint.state[k], v.numpy())


def test_training_reduces_reconstruction_loss():
    # a learnable toy problem: the target is always the second preset
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(4, 3, 3, 32, 32)).astype(np.float32)
    data = TrainingSet(x, x[:, 1].copy(), "tds")
    r = train(data, quick_cfg(epochs=15, lr=1e-2, lam=0.0))
    curve = r.loss_curve()
    assert curve[-4:].mean() < 0.5 * curve[:2].mean()


def test_preset_mismatch_rejected():
    with pytest.raises(ValueError):
        train(small_set(), quick_cfg(presets="tfdcs"))


def test_divergence_aborts_with_checkpoint():
    data = small_set()
    data.inputs[:] = np.nan
    with pytest.raises(TrainingDiverged) as err:
        train(data, quick_cfg())
    assert err.value.checkpoint.epoch == 0


def test_load_training_set(tmp_path):
    generate_testset(3, 1, tmp_path, size=24)
    data = load_training_set(tmp_path, "tds")
    assert data.inputs.shape == (3, 3, 3, 24, 24) and data.targets.shape == (3, 3, 24, 24)
    assert data.scene_ids == ["scene_0000", "scene_0001", "scene_0002"]
