"""Mixed-illuminant white balance by learned per-pixel blending of preset renders."""
from .color import ColorSpace, Image, WB_PRESETS, WBSetting, preset
from .estimator import MixedIlluminantAWB
from .gridnet import GridNet, GridNetConfig, ModelCheckpoint, load_checkpoint, save_checkpoint
from .inference import InferenceConfig, correct_image
from .isp import PolynomialMapping, PresetStack, build_preset_stack
from .metrics import GrayWorld, MetricsReport, evaluate
from .scene import SceneSpec, generate_testset, render_scene
from .training import TrainConfig, load_training_set, train

__all__ = [
    "ColorSpace", "Image", "WB_PRESETS", "WBSetting", "preset", "MixedIlluminantAWB", "GridNet",
    "GridNetConfig", "ModelCheckpoint", "load_checkpoint", "save_checkpoint", "InferenceConfig",
    "correct_image", "PolynomialMapping", "PresetStack", "build_preset_stack", "GrayWorld",
    "MetricsReport", "evaluate", "SceneSpec", "generate_testset", "render_scene", "TrainConfig",
    "load_training_set", "train",
]
__version__ = "0.1.0"
