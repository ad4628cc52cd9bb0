"""Weight prediction, multi-scale ensembling, upsampling and final blend."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .color import ColorSpace, Image
from .eas import EASParams, _renormalize, edge_aware_smooth
from .gridnet import GridNet, blend
from .isp import DEFAULT_SMALL_SIZE, PresetStack, downsample

logger = logging.getLogger(__name__)

MIN_SCALE_DIM = 16


@dataclass
class InferenceConfig:
    scales: tuple = (1.0, 0.5, 0.25)
    ensemble: bool = True
    eas: bool = True
    eas_params: EASParams = field(default_factory=EASParams)
    small_size: int = DEFAULT_SMALL_SIZE
    # "small": average at scale-1.0 size, then upsample; "full": upsample each
    # scale straight to full resolution, then average
    average_at: str = "small"

    def __post_init__(self):
        self.scales = tuple(float(s) for s in self.scales)
        if any(not 0 < s <= 1 for s in self.scales):
            raise ValueError("scales must lie in (0, 1]")
        if list(self.scales) != sorted(self.scales, reverse=True):
            raise ValueError("scales must be sorted in descending order")
        if self.ensemble and 1.0 not in self.scales:
            raise ValueError("scale 1.0 must be present when ensembling")
        if self.average_at not in ("small", "full"):
            raise ValueError("average_at must be 'small' or 'full'")
        if isinstance(self.eas_params, dict):
            self.eas_params = EASParams(**self.eas_params)

    @property
    def active_scales(self) -> tuple:
        return self.scales if self.ensemble else (1.0,)


class PresetOrderError(ValueError):
    pass


def resize_maps(w: np.ndarray, size) -> np.ndarray:
    """Bilinear (half-pixel centers) resize of ``(k, h, w)`` maps."""
    h, wd = size
    if w.shape[1:] == (h, wd):
        return w.copy()
    t = torch.from_numpy(np.ascontiguousarray(w, dtype=np.float64))[None]
    return F.interpolate(t, size=(h, wd), mode="bilinear", align_corners=False)[0].numpy()


def run_net(model: GridNet, smalls: np.ndarray) -> np.ndarray:
    """``smalls``: ``(k, h, w, 3)`` -> weights ``(k, h, w)`` in float64."""
    k, h, w, _ = smalls.shape
    x = torch.from_numpy(np.ascontiguousarray(smalls.transpose(0, 3, 1, 2).reshape(1, 3 * k, h, w), dtype=np.float32))
    with torch.no_grad():
        out = model(x)[0]
    return out.double().numpy()


def _check_order(stack: PresetStack, model) -> None:
    expected = getattr(model, "presets", None)
    if expected and expected != stack.names:
        raise PresetOrderError(f"model trained on presets {expected!r}, stack has {stack.names!r}")


def _scale_maps(stack: PresetStack, model, config: InferenceConfig):
    smalls = np.stack([im.pixels for im in stack.smalls])
    h, w = smalls.shape[1:3]
    for s in config.active_scales:
        sh, sw = int(round(h * s)), int(round(w * s))
        if min(sh, sw) < MIN_SCALE_DIM:
            msg = f"skipping scale {s}: {sh}x{sw} is below {MIN_SCALE_DIM} px"
            logger.warning(msg)
            warnings.warn(msg, stacklevel=3)
            continue
        scaled = smalls if (sh, sw) == (h, w) else np.stack([downsample(im, (sh, sw)) for im in smalls])
        yield run_net(model, scaled)


def predict_weights_ensemble(stack: PresetStack, model, config: InferenceConfig) -> np.ndarray:
    """Average the per-scale maps at scale-1.0 size, renormalized."""
    _check_order(stack, model)
    h, w = stack.smalls[0].shape
    maps = [resize_maps(m, (h, w)) for m in _scale_maps(stack, model, config)]
    if not maps:
        raise ValueError("no usable scale for this input size")
    return _renormalize(np.mean(maps, axis=0))


def upsample_weights(w: np.ndarray, target_dims) -> np.ndarray:
    if target_dims[0] < w.shape[1] or target_dims[1] < w.shape[2]:
        raise ValueError("target dims must not be smaller than the source maps")
    return _renormalize(resize_maps(w, target_dims))


def predict_full_weights(stack: PresetStack, model, config: InferenceConfig) -> np.ndarray:
    """Weights at full resolution after ensembling, upsampling and optional EAS."""
    full_dims = stack.full_fixed.shape
    if config.average_at == "full":
        _check_order(stack, model)
        maps = [upsample_weights(m, full_dims) for m in _scale_maps(stack, model, config)]
        w = _renormalize(np.mean(maps, axis=0))
    else:
        w = upsample_weights(predict_weights_ensemble(stack, model, config), full_dims)
    if config.eas:
        w = edge_aware_smooth(w, stack.full_fixed, config.eas_params)
    return w


def correct_image(stack: PresetStack, model, config: InferenceConfig, return_weights=False):
    w = predict_full_weights(stack, model, config)
    images = np.stack([im.pixels for im in stack.mapped_fulls])
    out = Image(blend(w, images), ColorSpace.GAMMA_SRGB)
    return (out, w) if return_weights else out
