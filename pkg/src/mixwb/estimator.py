"""Estimator front end: ``fit`` trains the weight network, ``predict`` corrects."""
from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator

from .color import ColorSpace, Image, WB_PRESETS, preset
from .eas import EASParams
from .gridnet import ModelCheckpoint
from .inference import InferenceConfig, correct_image, predict_full_weights
from .isp import DEFAULT_SMALL_SIZE, PresetStack, build_preset_stack
from .training import TrainConfig, TrainingSet, load_training_set, train


class MixedIlluminantAWB(BaseEstimator):
    """Learned per-pixel blending of preset white-balance renders.

    ``fit`` accepts a :class:`TrainingSet` or a dataset directory written by
    ``generate_testset``. ``predict`` accepts a :class:`PresetStack`, a
    linear raw :class:`Image`, or a list of either, and returns corrected
    gamma-sRGB images.
    """

    def __init__(self, presets="tds", patch_size=64, epochs=30, lr=1e-4, lam=100.0, seed=0,
                 scales=(1.0, 0.5, 0.25), ensemble=True, eas=True, small_size=DEFAULT_SMALL_SIZE,
                 eas_params=None):
        self.presets = presets
        self.patch_size = patch_size
        self.epochs = epochs
        self.lr = lr
        self.lam = lam
        self.seed = seed
        self.scales = scales
        self.ensemble = ensemble
        self.eas = eas
        self.small_size = small_size
        self.eas_params = eas_params

    def _train_config(self) -> TrainConfig:
        return TrainConfig(presets=self.presets, patch_size=self.patch_size, epochs=self.epochs,
                           lr=self.lr, lam=self.lam, seed=self.seed)

    def _infer_config(self) -> InferenceConfig:
        return InferenceConfig(scales=tuple(self.scales), ensemble=self.ensemble, eas=self.eas,
                               eas_params=self.eas_params or EASParams(), small_size=self.small_size)

    def fit(self, X, y=None):
        data = X if isinstance(X, TrainingSet) else load_training_set(Path(X), self.presets)
        result = train(data, self._train_config())
        self.checkpoint_ = result.checkpoint
        self.history_ = result.history
        self.model_ = result.checkpoint.build()
        return self

    @classmethod
    def from_checkpoint(cls, ckpt: ModelCheckpoint, **params) -> "MixedIlluminantAWB":
        est = cls(presets=ckpt.presets, **params)
        est.checkpoint_ = ckpt
        est.history_ = []
        est.model_ = ckpt.build()
        return est

    def _stack(self, item) -> PresetStack:
        if isinstance(item, PresetStack):
            return item
        if isinstance(item, Image) and item.space == ColorSpace.LINEAR_RAW:
            return build_preset_stack(item, preset(self.presets), WB_PRESETS["d"], self.small_size)
        raise TypeError("expected a PresetStack or a linear raw Image")

    def predict(self, X):
        items = X if isinstance(X, (list, tuple)) else [X]
        out = [correct_image(self._stack(it), self.model_, self._infer_config()) for it in items]
        return out if isinstance(X, (list, tuple)) else out[0]

    def predict_weights(self, X):
        """Full-resolution ``(k, H, W)`` weight maps for one input."""
        return predict_full_weights(self._stack(X), self.model_, self._infer_config())
