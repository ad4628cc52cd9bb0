"""Run configuration shared by every CLI subcommand.

Values are merged as flag > config file > ``MIXWB_SEED`` (seed only) >
default. Unknown keys are rejected. The merged config is hashed into a short
digest that every written artifact records.
"""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .eas import EASParams
from .inference import InferenceConfig
from .metrics import config_digest
from .training import TrainConfig

SEED_ENV = "MIXWB_SEED"


class ConfigError(ValueError):
    pass


def _eas_defaults() -> dict:
    p = EASParams()
    return {k: getattr(p, k) for k in p.__dataclass_fields__}


DEFAULTS = {
    "seed": 0,
    "synth": {"n": 20, "size": 256, "presets": "tfdcs", "single_prob": 0.0},
    "render": {"presets": "tds", "small_size": 384, "domain": "gamma", "source": "mapped"},
    "train": {
        "presets": "tds",
        "patch_size": 64,
        "patches_per_image": 4,
        "images_per_iter": 8,
        "batch": 32,
        "lam": 100.0,
        "epochs": 30,
        "lr": 1e-4,
        "lr_milestones": [50, 100, 150],
        "lr_decay": 0.5,
        "beta1": 0.9,
        "beta2": 0.999,
    },
    "infer": {
        "scales": [1.0, 0.5, 0.25],
        "ensemble": True,
        "eas": True,
        "average_at": "small",
        "eas_params": _eas_defaults(),
    },
}

# help text for every key, shown by ``--help``
DOCS = {
    "seed": "global seed (falls back to $MIXWB_SEED, then 0)",
    "synth.n": "number of scenes",
    "synth.size": "scene width and height in pixels",
    "synth.presets": "preset captures written per scene",
    "synth.single_prob": "probability of a single-illuminant scene",
    "render.presets": "WB presets rendered as small images",
    "render.small_size": "long side of the small images",
    "render.domain": "color domain of the polynomial mapping fit (gamma or linear)",
    "render.source": "mapped (polynomial mapping) or captured (exact preset renders)",
    "train.presets": "WB preset set (tds or tfdcs)",
    "train.patch_size": "training patch size",
    "train.patches_per_image": "patches cropped from each image",
    "train.images_per_iter": "images drawn per iteration",
    "train.batch": "mini-batch size (images_per_iter x patches_per_image)",
    "train.lam": "smoothness loss weight",
    "train.epochs": "training epochs",
    "train.lr": "Adam learning rate",
    "train.lr_milestones": "epochs at which the learning rate decays",
    "train.lr_decay": "learning rate decay factor",
    "train.beta1": "Adam beta1",
    "train.beta2": "Adam beta2",
    "infer.scales": "ensemble scales, descending",
    "infer.ensemble": "average weights over scales",
    "infer.eas": "edge-aware smoothing of the full-resolution weights",
    "infer.average_at": "average at small size (small) or after upsampling (full)",
}


def _merge(base: dict, over: dict, path="") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def set_path(d: dict, dotted: str, value) -> None:
    *head, last = dotted.split(".")
    for h in head:
        d = d.setdefault(h, {})
    d[last] = value


def get_path(d: dict, dotted: str):
    for part in dotted.split("."):
        d = d[part]
    return d


def load_config(path=None, overrides: dict | None = None, environ=None) -> dict:
    """Merge defaults, an optional JSON file and dotted-key ``overrides``."""
    environ = os.environ if environ is None else environ
    base = copy.deepcopy(DEFAULTS)
    if SEED_ENV in environ:
        try:
            base["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"${SEED_ENV} must be an integer") from None
    cfg = base
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge(cfg, data)
    nested = {}
    for key, val in (overrides or {}).items():
        if val is not None:
            set_path(nested, key, val)
    cfg = _merge(cfg, nested)
    validate(cfg)
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    return TrainConfig(seed=int(cfg["seed"]), lr_milestones=tuple(t.pop("lr_milestones")), **t)


def infer_config(cfg: dict) -> InferenceConfig:
    i = cfg["infer"]
    return InferenceConfig(
        scales=tuple(i["scales"]), ensemble=bool(i["ensemble"]), eas=bool(i["eas"]),
        eas_params=EASParams(**i["eas_params"]), small_size=int(cfg["render"]["small_size"]),
        average_at=i["average_at"])


def validate(cfg: dict) -> None:
    try:
        train_config(cfg)
        infer_config(cfg)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None
    if cfg["render"]["source"] not in ("mapped", "captured"):
        raise ConfigError("render.source must be 'mapped' or 'captured'")
    if cfg["render"]["domain"] not in ("gamma", "linear"):
        raise ConfigError("render.domain must be 'gamma' or 'linear'")
    if int(cfg["synth"]["n"]) < 1:
        raise ConfigError("synth.n must be >= 1")


def digest(cfg: dict) -> str:
    return config_digest(cfg)
