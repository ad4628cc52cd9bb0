"""Grid-structured CNN that predicts per-pixel blending weights.

The grid has ``rows`` resolution levels and ``columns`` columns. The first
half of the columns feeds information down the rows through stride-2
downsampling units; the second half feeds it back up through bilinear
upsampling units. Every row carries a residual stream between consecutive
columns. A cross-channel softmax turns the final ``k`` logits into convex
blending weights.
"""
from __future__ import annotations

import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.2
CHECKPOINT_FORMAT = "mixwb-ckpt/1"


@dataclass(frozen=True)
class GridNetConfig:
    k: int = 3
    columns: int = 6
    rows: int = 4
    stem_channels: int = 8
    res_blocks: int = 2

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.columns < 2 or self.columns % 2:
            raise ValueError("columns must be an even number >= 2")
        if self.rows < 1:
            raise ValueError("rows must be >= 1")

    @property
    def input_channels(self) -> int:
        return 3 * self.k

    @property
    def widths(self) -> list[int]:
        return [self.stem_channels * 2**r for r in range(self.rows)]

    @property
    def multiple(self) -> int:
        """Spatial dims must be divisible by this (one 2x step per row)."""
        return 2 ** (self.rows - 1)


def _conv(cin, cout, stride=1):
    return nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=True)


def _act():
    return nn.LeakyReLU(LEAKY_SLOPE)


class ResidualBlock(nn.Module):
    """Pre-activation block: x + conv(act(conv(act(x))))."""

    def __init__(self, ch):
        super().__init__()
        self.body = nn.Sequential(_act(), _conv(ch, ch), _act(), _conv(ch, ch))

    def forward(self, x):
        return x + self.body(x)


class ResidualUnit(nn.Sequential):
    def __init__(self, ch, blocks):
        super().__init__(*[ResidualBlock(ch) for _ in range(blocks)])


class DownUnit(nn.Sequential):
    def __init__(self, cin, cout):
        super().__init__(_act(), _conv(cin, cout, stride=2), _act(), _conv(cout, cout))


class UpUnit(nn.Module):
    def __init__(self, cin, cout):
        super().__init__()
        self.body = nn.Sequential(_act(), _conv(cin, cout), _act(), _conv(cout, cout))

    def forward(self, x):
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        return self.body(x)


class Stem(nn.Module):
    """First unit: 3k input channels -> stem width, with a 1x1 projection skip."""

    def __init__(self, cin, cout):
        super().__init__()
        self.body = nn.Sequential(_conv(cin, cout), _act(), _conv(cout, cout))
        self.skip = nn.Conv2d(cin, cout, 1)

    def forward(self, x):
        return self.skip(x) + self.body(x)


class Head(nn.Module):
    """Last unit: stem width -> k logits. Its final conv starts at zero."""

    def __init__(self, cin, k):
        super().__init__()
        self.body = nn.Sequential(_act(), _conv(cin, cin), _act(), _conv(cin, k))

    def forward(self, x):
        return self.body(x)


class GridNet(nn.Module):
    def __init__(self, config: GridNetConfig = GridNetConfig()):
        super().__init__()
        self.config = config
        c = config
        w = c.widths
        half = c.columns // 2
        self.stem = Stem(c.input_channels, w[0])
        self.lateral = nn.ModuleDict({
            f"r{r}c{j}": ResidualUnit(w[r], c.res_blocks)
            for r in range(c.rows) for j in range(c.columns - 1)
        })
        self.down = nn.ModuleDict({
            f"r{r}c{j}": DownUnit(w[r - 1], w[r])
            for r in range(1, c.rows) for j in range(half)
        })
        self.up = nn.ModuleDict({
            f"r{r}c{j}": UpUnit(w[r + 1], w[r])
            for r in range(c.rows - 1) for j in range(half, c.columns)
        })
        self.head = Head(w[0], c.k)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                bound = 1.0 / np.sqrt(fan_in)
                nn.init.uniform_(m.weight, -bound, bound)
                nn.init.uniform_(m.bias, -bound, bound)
        last = self.head.body[-1]
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)

    def logits(self, x):
        c = self.config
        half = c.columns // 2
        grid = [[None] * c.columns for _ in range(c.rows)]
        for j in range(c.columns):
            for r in range(c.rows):
                acc = None
                if j == 0 and r == 0:
                    acc = self.stem(x)
                if j > 0:
                    acc = _add(acc, self.lateral[f"r{r}c{j - 1}"](grid[r][j - 1]))
                if j < half and r > 0:
                    acc = _add(acc, self.down[f"r{r}c{j}"](grid[r - 1][j]))
                grid[r][j] = acc
            if j >= half:
                # decoder columns: information flows bottom-up
                for r in range(c.rows - 2, -1, -1):
                    grid[r][j] = grid[r][j] + self.up[f"r{r}c{j}"](grid[r + 1][j])
        return self.head(grid[0][-1])

    def forward(self, x):
        """``x``: ``(N, 3k, H, W)`` -> softmax weights ``(N, k, H, W)``.

        Inputs whose size is not a multiple of ``config.multiple`` are
        reflect-padded up to one and the output is cropped back.
        """
        h, w = x.shape[-2:]
        m = self.config.multiple
        ph, pw = (-h) % m, (-w) % m
        if ph or pw:
            mode = "reflect" if ph < h and pw < w else "replicate"
            x = F.pad(x, (0, pw, 0, ph), mode=mode)
        out = torch.softmax(self.logits(x), dim=1)
        return out[..., :h, :w]


def _add(a, b):
    return b if a is None else a + b


def parameter_count(config: GridNetConfig) -> int:
    return sum(p.numel() for p in GridNet(config).parameters())


def model_megabytes(config: GridNetConfig) -> float:
    """Size of the float32 parameters in MiB."""
    return parameter_count(config) * 4 / 2**20


def blend(weights, images):
    """Per-pixel convex combination.

    ``weights``: ``(k, H, W)``; ``images``: ``(k, H, W, 3)`` (numpy) or the
    batched torch layout ``weights (N, k, H, W)``, ``images (N, k, 3, H, W)``.
    """
    if isinstance(weights, torch.Tensor):
        if weights.shape[:2] != images.shape[:2] or weights.shape[-2:] != images.shape[-2:]:
            raise ValueError(f"shape mismatch: {tuple(weights.shape)} vs {tuple(images.shape)}")
        return (weights.unsqueeze(2) * images).sum(dim=1)
    w = np.asarray(weights, dtype=np.float64)
    ims = np.asarray(images, dtype=np.float64)
    if w.shape != ims.shape[:3]:
        raise ValueError(f"shape mismatch: weights {w.shape} vs images {ims.shape}")
    return np.clip(np.einsum("khw,khwc->hwc", w, ims), 0.0, 1.0)


# --- checkpoints ------------------------------------------------------------

@dataclass
class ModelCheckpoint:
    config: GridNetConfig
    state: dict
    presets: str = ""
    epoch: int = 0
    rng_state: dict | None = None
    optimizer_state: dict | None = None
    meta: dict | None = None

    def build(self) -> GridNet:
        net = GridNet(self.config)
        net.load_state_dict({k: torch.from_numpy(v.copy()) for k, v in self.state.items()})
        net.presets = self.presets
        net.eval()
        return net

    @classmethod
    def from_model(cls, net: GridNet, presets="", **kw) -> "ModelCheckpoint":
        state = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in net.state_dict().items()}
        return cls(net.config, state, presets, **kw)


def _blob(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    """Zip archive: ``config.json``, ``index.json`` and one ``<f4`` blob per tensor.

    ``index.json`` maps every tensor name to its blob path and shape. Adam
    moments, when present, are stored the same way under ``optim/``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = {"format": CHECKPOINT_FORMAT, "params": {}, "optim": {}}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(ckpt.state):
            arr = ckpt.state[name]
            blob = f"params/{name}.bin"
            zf.writestr(_zinfo(blob), _blob(arr))
            index["params"][name] = {"file": blob, "shape": list(arr.shape), "dtype": "<f4"}
        for name, arr in sorted((ckpt.optimizer_state or {}).get("tensors", {}).items()):
            blob = f"optim/{name}.bin"
            zf.writestr(_zinfo(blob), _blob(arr))
            index["optim"][name] = {"file": blob, "shape": list(arr.shape), "dtype": "<f4"}
        config = {
            "gridnet": asdict(ckpt.config),
            "presets": ckpt.presets,
            "epoch": ckpt.epoch,
            "rng_state": ckpt.rng_state,
            "optimizer": {k: v for k, v in (ckpt.optimizer_state or {}).items() if k != "tensors"},
            "meta": ckpt.meta or {},
        }
        zf.writestr(_zinfo("config.json"), json.dumps(config, indent=2, sort_keys=True))
        zf.writestr(_zinfo("index.json"), json.dumps(index, indent=2, sort_keys=True))


def _zinfo(name):
    # fixed timestamp keeps archives byte-identical across runs
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    return info


def load_checkpoint(path) -> ModelCheckpoint:
    with zipfile.ZipFile(path) as zf:
        config = json.loads(zf.read("config.json"))
        index = json.loads(zf.read("index.json"))
        if index.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {index.get('format')!r}")

        def read(entry):
            buf = zf.read(entry["file"])
            return np.frombuffer(buf, dtype="<f4").reshape(entry["shape"]).astype(np.float32)

        state = {name: read(e) for name, e in index["params"].items()}
        optim = None
        if index.get("optim"):
            optim = dict(config.get("optimizer") or {})
            optim["tensors"] = {name: read(e) for name, e in index["optim"].items()}
    return ModelCheckpoint(
        GridNetConfig(**config["gridnet"]),
        state,
        config.get("presets", ""),
        config.get("epoch", 0),
        config.get("rng_state"),
        optim,
        config.get("meta") or {},
    )
