"""Image metrics, the gray-world baseline and table-style reports.

MSE is reported on the 0-255 scale per channel; an image that is off by one
8-bit level everywhere scores 1.0, not 1.5e-5.
"""
from __future__ import annotations

import hashlib
import json
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .color import ColorSpace, Image, angular_error, delta_e_2000, gamma_decode, gamma_encode
from .io import read_png16

METRICS = ("mse", "mae", "de2000")
GRAY_EPS = 1e-6


def _pair(out, gt):
    a = out.pixels if isinstance(out, Image) else np.asarray(out, dtype=np.float64)
    b = gt.pixels if isinstance(gt, Image) else np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image size mismatch: {a.shape} vs {b.shape}")
    return np.clip(a, 0, 1), np.clip(b, 0, 1)


def image_mse(out, gt) -> float:
    a, b = _pair(out, gt)
    return float(np.mean((255.0 * (a - b)) ** 2))


def image_mae(out, gt, return_skipped=False):
    """Mean per-pixel angular error in degrees, skipping near-black pixels.

    Returns NaN when every pixel is degenerate.
    """
    a, b = _pair(out, gt)
    ang = angular_error(a, b)
    valid = ~np.isnan(ang)
    skipped = int(ang.size - valid.sum())
    mae = float(ang[valid].mean()) if valid.any() else float("nan")
    return (mae, skipped) if return_skipped else mae


def image_de2000(out, gt) -> float:
    a, b = _pair(out, gt)
    return float(np.mean(delta_e_2000(a, b)))


def quantiles(values) -> tuple[float, float, float]:
    """Q1, Q2, Q3 with linear interpolation at positions p * (n + 1)."""
    vals = [float(v) for v in values]
    if not vals:
        return (float("nan"),) * 3
    if len(vals) == 1:
        return (vals[0],) * 3
    q1, q2, q3 = statistics.quantiles(vals, n=4, method="exclusive")
    return q1, q2, q3


def aggregate(values) -> dict:
    vals = [v for v in values if np.isfinite(v)]
    q1, q2, q3 = quantiles(vals)
    return {"mean": float(np.mean(vals)) if vals else float("nan"), "q1": q1, "q2": q2, "q3": q3}


class GrayWorld(TransformerMixin, BaseEstimator):
    """Global gray-world correction of a gamma-sRGB image.

    The image is linearized, the illuminant is estimated as the channel means
    (normalized to G = 1), divided out, and the result re-encoded.
    """

    def __init__(self, eps=GRAY_EPS):
        self.eps = eps

    def fit(self, X, y=None):
        px = X.pixels if isinstance(X, Image) else np.asarray(X, dtype=np.float64)
        lin = gamma_decode(px)
        means = np.maximum(lin.reshape(-1, 3).mean(axis=0), self.eps)
        self.illuminant_ = means / means[1]
        return self

    def transform(self, X):
        px = X.pixels if isinstance(X, Image) else np.asarray(X, dtype=np.float64)
        out = gamma_encode(np.clip(gamma_decode(px) / self.illuminant_, 0, 1))
        return Image(out, ColorSpace.GAMMA_SRGB) if isinstance(X, Image) else out


def gray_world_baseline(img: Image) -> Image:
    if img.space != ColorSpace.GAMMA_SRGB:
        raise ValueError("gray-world baseline expects a gamma-sRGB image")
    return GrayWorld().fit_transform(img)


@dataclass
class MetricsReport:
    method_label: str
    per_image: list = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)
    missing: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    config_digest: str = ""

    @classmethod
    def from_rows(cls, label, rows, missing=(), config=None):
        config = dict(config or {})
        report = cls(label, list(rows), {}, list(missing), config, config_digest(config))
        report.aggregate = {m: aggregate([r[m] for r in report.per_image]) for m in METRICS}
        return report

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(_round_floats(self.to_dict()), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        return format_table({self.method_label: self.aggregate})


def _round_floats(obj, nd=10):
    if isinstance(obj, float):
        return round(obj, nd) if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round_floats(v, nd) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, nd) for v in obj]
    return obj


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def format_table(rows: dict) -> str:
    """Aligned text table: one row per method, Mean/Q1/Q2/Q3 per metric."""
    head = ["Method"] + [f"{m.upper()} {s}" for m in ("MSE", "MAE", "dE2000") for s in ("Mean", "Q1", "Q2", "Q3")]
    body = []
    for label, agg in rows.items():
        cells = [label]
        for m in METRICS:
            suffix = "°" if m == "mae" else ""
            cells += [f"{agg[m][s]:.2f}{suffix}" for s in ("mean", "q1", "q2", "q3")]
        body.append(cells)
    widths = [max(len(r[i]) for r in [head] + body) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
    lines = [fmt(head), "-" * len(fmt(head))] + [fmt(r) for r in body]
    return "\n".join(lines) + "\n"


def score(out, gt) -> dict:
    mae, skipped = image_mae(out, gt, return_skipped=True)
    return {"mse": image_mse(out, gt), "mae": mae, "de2000": image_de2000(out, gt), "mae_skipped": skipped}


def _gt_path(gt_dir: Path, sid: str) -> Path:
    nested = gt_dir / sid / "gt.png"
    return nested if nested.exists() else gt_dir / f"{sid}.png"


def evaluate(pred_dir, gt_dir, label="method", config=None) -> MetricsReport:
    """Score ``<pred_dir>/<scene_id>.png`` against the dataset ground truth.

    Scene ids come from ``<gt_dir>/manifest.json`` when present, otherwise
    from the prediction file names. Pairs with a missing file are listed in
    ``missing`` and left out of the aggregates.
    """
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    manifest = gt_dir / "manifest.json"
    if manifest.exists():
        ids = [e["scene_id"] for e in json.loads(manifest.read_text())["scenes"]]
    else:
        ids = sorted(p.stem for p in pred_dir.glob("*.png"))
    rows, missing = [], []
    for sid in ids:
        pp, gp = pred_dir / f"{sid}.png", _gt_path(gt_dir, sid)
        if not pp.exists() or not gp.exists():
            missing.append(sid)
            continue
        out, gt = read_png16(pp), read_png16(gp)
        rows.append({"scene_id": sid, **score(out, gt), "resolution": list(gt.shape)})
    return MetricsReport.from_rows(label, rows, missing, config)


def write_report(report: MetricsReport, out_json) -> None:
    out_json = Path(out_json)
    out_json.parent.mkdir(parents=True, exist_ok=True)
    out_json.write_text(report.to_json())
    out_json.with_suffix(".txt").write_text(report.to_text())
