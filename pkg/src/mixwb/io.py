"""16-bit PNG and JSON helpers."""
from __future__ import annotations

import json
from pathlib import Path

import cv2
import numpy as np

from .color import ColorSpace, Image

_MAX16 = 65535.0


def write_png16(path, img) -> None:
    """Write an RGB image (``Image`` or HxWx3 float array in [0, 1])."""
    px = img.pixels if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    q = np.round(np.clip(px, 0.0, 1.0) * _MAX16).astype(np.uint16)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if q.ndim == 3:
        q = q[..., ::-1]
    if not cv2.imwrite(str(path), q):
        raise OSError(f"could not write {path}")


def read_png16(path, space: ColorSpace | None = ColorSpace.GAMMA_SRGB):
    """Read an 8- or 16-bit PNG as float64 in [0, 1].

    Returns an ``Image`` tagged with ``space``; pass ``space=None`` for the
    raw array (needed for single-channel files such as weight maps).
    """
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise FileNotFoundError(f"could not read image {path}")
    scale = _MAX16 if raw.dtype == np.uint16 else 255.0
    px = raw.astype(np.float64) / scale
    if px.ndim == 3:
        px = px[..., ::-1][..., :3]
    if space is None:
        return np.ascontiguousarray(px)
    return Image(np.ascontiguousarray(px), space)


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
