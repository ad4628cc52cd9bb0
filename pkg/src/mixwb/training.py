"""Patch-based training of the weight network."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .color import preset
from .gridnet import GridNet, GridNetConfig, ModelCheckpoint, blend, save_checkpoint
from .io import read_json, read_png16

logger = logging.getLogger(__name__)

SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.contiguous()


@dataclass
class TrainConfig:
    presets: str = "tds"
    patch_size: int = 64
    patches_per_image: int = 4
    images_per_iter: int = 8
    batch: int = 32
    lam: float = 100.0
    epochs: int = 30
    lr: float = 1e-4
    lr_milestones: tuple = (50, 100, 150)
    lr_decay: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    gridnet: dict = field(default_factory=dict)

    def __post_init__(self):
        preset(self.presets)
        if self.batch != self.images_per_iter * self.patches_per_image:
            raise ValueError(
                f"batch ({self.batch}) must equal images_per_iter x patches_per_image "
                f"({self.images_per_iter} x {self.patches_per_image})")
        if self.patch_size % 8:
            raise ValueError("patch_size must be divisible by 8")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)

    def net_config(self) -> GridNetConfig:
        return GridNetConfig(k=len(self.presets), **self.gridnet)


@dataclass
class TrainingSet:
    """``inputs``: (n, k, 3, H, W) preset renders; ``targets``: (n, 3, H, W)."""

    inputs: np.ndarray
    targets: np.ndarray
    presets: str
    scene_ids: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.inputs) == 0:
            raise ValueError("training set is empty")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets disagree on the number of images")
        if self.inputs.shape[1] != len(self.presets):
            raise ValueError("inputs do not match the preset list")

    def __len__(self):
        return self.inputs.shape[0]


def load_training_set(data_dir, presets="tds") -> TrainingSet:
    """Read preset captures and ground truth listed in ``manifest.json``."""
    data_dir = Path(data_dir)
    manifest = read_json(data_dir / "manifest.json")
    ins, gts, ids = [], [], []
    for entry in manifest["scenes"]:
        files = entry["files"]
        stack = [read_png16(data_dir / files[f"preset_{p}"]).pixels for p in presets]
        ins.append(np.stack([s.transpose(2, 0, 1) for s in stack]))
        gts.append(read_png16(data_dir / files["gt"]).pixels.transpose(2, 0, 1))
        ids.append(entry["scene_id"])
    return TrainingSet(np.asarray(ins, np.float32), np.asarray(gts, np.float32), presets, ids)


# --- losses -----------------------------------------------------------------

def reconstruction_loss(weights, inputs, target):
    """Squared Frobenius error of the blend, summed per patch, averaged over the batch.

    ``weights`` (N, k, p, p), ``inputs`` (N, k, 3, p, p), ``target`` (N, 3, p, p).
    """
    diff = target - blend(weights, inputs)
    return diff.square().sum() / weights.shape[0]


def sobel_responses(weights):
    n, k, h, w = weights.shape
    x = weights.reshape(n * k, 1, h, w)
    kx = SOBEL_X.to(weights).view(1, 1, 3, 3)
    ky = SOBEL_Y.to(weights).view(1, 1, 3, 3)
    return F.conv2d(x, kx), F.conv2d(x, ky)


def smoothness_loss(weights):
    """Sobel energy of every weight map (valid region), averaged over the batch."""
    gx, gy = sobel_responses(weights)
    return (gx.square().sum() + gy.square().sum()) / weights.shape[0]


def total_loss(l_r, l_s, lam):
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return l_r + lam * l_s


# --- sampling ---------------------------------------------------------------

@dataclass
class TrainBatch:
    inputs: np.ndarray  # (B, k, 3, p, p)
    targets: np.ndarray  # (B, 3, p, p)
    index: np.ndarray  # (B,) image ids
    corners: np.ndarray  # (B, 2) top-left (y, x)


def epoch_order(n: int, cfg: TrainConfig, epoch: int) -> list[np.ndarray]:
    """Image ids for each iteration of ``epoch``; one draw per epoch so the
    sequence does not depend on how batches are consumed."""
    rng = np.random.default_rng([cfg.seed, epoch, 0])
    perm = rng.permutation(n)
    iters = math.ceil(n / cfg.images_per_iter)
    out = []
    for i in range(iters):
        ids = perm[i * cfg.images_per_iter:(i + 1) * cfg.images_per_iter]
        if len(ids) < cfg.images_per_iter:
            fill = rng.choice(n, size=cfg.images_per_iter - len(ids), replace=n < cfg.images_per_iter)
            ids = np.concatenate([ids, fill])
        out.append(ids)
    return out


def sample_batch(data: TrainingSet, cfg: TrainConfig, rng: np.random.Generator, ids=None) -> TrainBatch:
    """Aligned random crops: every preset and the target share coordinates."""
    if len(data) == 0:
        raise ValueError("empty dataset")
    h, w = data.inputs.shape[-2:]
    p = cfg.patch_size
    if p > h or p > w:
        raise ValueError(f"patch size {p} larger than training images {h}x{w}")
    if ids is None:
        ids = rng.choice(len(data), size=cfg.images_per_iter, replace=len(data) < cfg.images_per_iter)
    index = np.repeat(np.asarray(ids), cfg.patches_per_image)
    ys = rng.integers(0, h - p + 1, size=len(index))
    xs = rng.integers(0, w - p + 1, size=len(index))
    inputs = np.stack([data.inputs[i, :, :, y:y + p, x:x + p] for i, y, x in zip(index, ys, xs)])
    targets = np.stack([data.targets[i, :, y:y + p, x:x + p] for i, y, x in zip(index, ys, xs)])
    return TrainBatch(inputs, targets, index, np.stack([ys, xs], axis=1))


# --- loop ---------------------------------------------------------------------

class TrainingDiverged(RuntimeError):
    def __init__(self, msg, checkpoint):
        super().__init__(msg)
        self.checkpoint = checkpoint


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    history: list

    def loss_curve(self, key="L_r") -> np.ndarray:
        return np.array([h[key] for h in self.history])


def _optimizer_state(opt: torch.optim.Adam) -> dict:
    tensors, steps = {}, {}
    for i, p in enumerate(opt.param_groups[0]["params"]):
        st = opt.state.get(p)
        if not st:
            continue
        tensors[f"{i}.exp_avg"] = st["exp_avg"].detach().cpu().numpy()
        tensors[f"{i}.exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy()
        steps[str(i)] = int(st["step"])
    return {"tensors": tensors, "steps": steps, "lr": opt.param_groups[0]["lr"]}


def train(data: TrainingSet, cfg: TrainConfig, out_dir=None, digest=None, log_every=0) -> TrainResult:
    """Adam on L_r + lambda * L_s; deterministic for a fixed ``cfg.seed``.

    With ``out_dir`` a checkpoint (``model.ckpt``) is written after every epoch.
    """
    if data.presets != cfg.presets:
        raise ValueError(f"dataset presets {data.presets!r} != config presets {cfg.presets!r}")
    torch.manual_seed(cfg.seed)
    net = GridNet(cfg.net_config()).to(memory_format=torch.channels_last)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, list(cfg.lr_milestones), gamma=cfg.lr_decay)
    meta = {"train_config": asdict(cfg), "config_digest": digest}

    def snapshot(epoch):
        return ModelCheckpoint.from_model(
            net, cfg.presets, epoch=epoch,
            rng_state={"seed": cfg.seed, "next_epoch": epoch},
            optimizer_state=_optimizer_state(opt), meta=meta)

    last_good = snapshot(0)
    history = []
    it = 0
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch, 1])
        net.train()
        for ids in epoch_order(len(data), cfg, epoch):
            b = sample_batch(data, cfg, rng, ids)
            x = torch.from_numpy(b.inputs)
            n, k = x.shape[:2]
            flat = x.reshape(n, 3 * k, *x.shape[-2:]).contiguous(memory_format=torch.channels_last)
            target = torch.from_numpy(b.targets)
            w = net(flat)
            l_r = reconstruction_loss(w, x, target)
            l_s = smoothness_loss(w)
            loss = total_loss(l_r, l_s, cfg.lam)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, iteration {it}", last_good)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            history.append({"iter": it, "epoch": epoch, "L": loss.item(), "L_r": l_r.item(), "L_s": l_s.item()})
            if log_every and it % log_every == 0:
                logger.info("epoch %d iter %d  L=%.4f  L_r=%.4f  L_s=%.5f", epoch, it, *(history[-1][k] for k in ("L", "L_r", "L_s")))
            it += 1
        sched.step()
        last_good = snapshot(epoch + 1)
        if out_dir is not None:
            save_checkpoint(last_good, Path(out_dir) / "model.ckpt")
    return TrainResult(last_good, history)

