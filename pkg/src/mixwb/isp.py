"""Modified camera ISP: small preset renders, a fixed-WB full render, and
polynomial color mapping of the full render onto each preset."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import cv2
import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .color import (
    WB_PRESETS,
    ColorSpace,
    Image,
    POLY_TERMS,
    SpaceError,
    WBSetting,
    cct_to_illuminant,
    gamma_decode,
    gamma_encode,
    poly_expand,
)

logger = logging.getLogger(__name__)

DAMPING = 1e-8
DEFAULT_SMALL_SIZE = 384


class LowRankWarning(UserWarning):
    pass


def downsample(px: np.ndarray, size) -> np.ndarray:
    """Area (box) resize of an ``H x W x C`` array to ``size`` (int or (h, w))."""
    h, w = (size, size) if np.isscalar(size) else size
    if px.shape[:2] == (h, w):
        return px.copy()
    out = cv2.resize(np.ascontiguousarray(px), (int(w), int(h)), interpolation=cv2.INTER_AREA)
    return out.reshape(int(h), int(w), *px.shape[2:])


def _render(raw: np.ndarray, setting: WBSetting) -> np.ndarray:
    return gamma_encode(np.clip(raw / cct_to_illuminant(setting.cct), 0.0, 1.0))


def render_presets(raw: Image, presets, small_size=DEFAULT_SMALL_SIZE) -> list[Image]:
    """Box-downsample ``raw`` to ``small_size`` then WB + gamma once per preset."""
    if raw.space != ColorSpace.LINEAR_RAW:
        raise SpaceError(f"render_presets needs linear-raw input, got {raw.space.value}")
    h, w = (small_size, small_size) if np.isscalar(small_size) else small_size
    if h > raw.height or w > raw.width:
        raise ValueError(f"small size {(h, w)} exceeds raw size {raw.shape}")
    small = downsample(raw.pixels, (h, w))
    return [Image(_render(small, s), ColorSpace.GAMMA_SRGB) for s in presets]


class PolynomialMapping(TransformerMixin, BaseEstimator):
    """Least-squares color mapping ``target ~ M @ phi(source)``.

    ``phi`` is the 11-term expansion in ``POLY_TERMS`` order and ``coef_`` is
    the 3 x 11 matrix. With ``domain="linear"`` the fit runs on degamma'd
    values and the output is re-encoded.

    Parameters
    ----------
    damping : float
        Tikhonov term added to the diagonal of the normal equations.
    domain : {"gamma", "linear"}
    rank_tol : float
        Relative eigenvalue threshold under which the design is reported as
        rank deficient.
    """

    def __init__(self, damping=DAMPING, domain="gamma", rank_tol=1e-10):
        self.damping = damping
        self.domain = domain
        self.rank_tol = rank_tol

    def _to_domain(self, px):
        if self.domain == "gamma":
            return px
        if self.domain == "linear":
            return gamma_decode(px)
        raise ValueError(f"domain must be 'gamma' or 'linear', got {self.domain!r}")

    def fit(self, X, y):
        """``X``/``y``: gamma-sRGB colors, any shape ending in 3."""
        src = self._to_domain(np.asarray(X, dtype=np.float64).reshape(-1, 3))
        dst = self._to_domain(np.asarray(y, dtype=np.float64).reshape(-1, 3))
        if src.shape != dst.shape:
            raise ValueError(f"source/target size mismatch: {src.shape} vs {dst.shape}")
        phi = poly_expand(src)
        gram = phi.T @ phi
        eig = np.linalg.eigvalsh(gram)
        self.rank_ = int(np.sum(eig > self.rank_tol * max(eig.max(), 1e-300)))
        self.low_rank_ = self.rank_ < phi.shape[1]
        if self.low_rank_:
            logger.warning("polynomial design is rank %d/11; relying on damping", self.rank_)
        coef = np.linalg.solve(gram + self.damping * np.eye(gram.shape[0]), phi.T @ dst)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError(
                f"mapping fit failed: rank {self.rank_}/11, eigenvalues {eig}")
        self.coef_ = coef.T
        self.residual_rms_ = float(np.sqrt(np.mean((phi @ coef - dst) ** 2)))
        return self

    def transform(self, X):
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=np.float64)
        out = poly_expand(self._to_domain(X.reshape(-1, 3))) @ self.coef_.T
        out = np.clip(out, 0.0, 1.0)
        if self.domain == "linear":
            out = gamma_encode(out)
        return out.reshape(X.shape)


@dataclass
class MappingMatrix:
    m: np.ndarray
    target: WBSetting
    residual_rms: float = 0.0
    low_rank: bool = False

    def to_dict(self) -> dict:
        return {
            "target": self.target.name,
            "cct": self.target.cct,
            "features": list(POLY_TERMS),
            "matrix": [float(v) for v in np.asarray(self.m).ravel()],
            "shape": [3, len(POLY_TERMS)],
            "residual_rms": self.residual_rms,
        }


def fit_mapping(source_small: Image, target_small: Image, target=None, domain="gamma") -> MappingMatrix:
    for im in (source_small, target_small):
        if im.space != ColorSpace.GAMMA_SRGB:
            raise SpaceError("fit_mapping expects gamma-sRGB images")
    if source_small.shape != target_small.shape:
        raise ValueError("source and target must have identical dimensions")
    est = PolynomialMapping(domain=domain).fit(source_small.pixels, target_small.pixels)
    return MappingMatrix(est.coef_, target or WBSetting("?", 1.0), est.residual_rms_, est.low_rank_)


def apply_mapping(full: Image, m: MappingMatrix, domain="gamma") -> Image:
    if full.space != ColorSpace.GAMMA_SRGB:
        raise SpaceError("apply_mapping expects a gamma-sRGB image")
    est = PolynomialMapping(domain=domain)
    est.coef_ = np.asarray(m.m, dtype=np.float64)
    return Image(est.transform(full.pixels), ColorSpace.GAMMA_SRGB)


@dataclass
class PresetStack:
    presets: list
    smalls: list
    full_fixed: Image
    mapped_fulls: list
    mappings: list = field(default_factory=list)
    source: str = "mapped"

    def __post_init__(self):
        if len(self.smalls) != len(self.presets) or len(self.mapped_fulls) != len(self.presets):
            raise ValueError("stack lists must all have one entry per preset")
        if len({im.shape for im in self.smalls}) > 1:
            raise ValueError("small images must share dimensions")

    @property
    def k(self) -> int:
        return len(self.presets)

    @property
    def names(self) -> str:
        return "".join(p.name for p in self.presets)

    def small_array(self) -> np.ndarray:
        """``(3k, h, w)`` float32 network input in preset order."""
        return np.concatenate([im.pixels.transpose(2, 0, 1) for im in self.smalls]).astype(np.float32)


def build_preset_stack(
    raw: Image,
    presets,
    fixed: WBSetting = WB_PRESETS["d"],
    small_size=DEFAULT_SMALL_SIZE,
    domain="gamma",
    captures=None,
) -> PresetStack:
    """Run the modified ISP on ``raw``.

    ``captures`` (optional, one full-resolution gamma-sRGB image per preset)
    replaces the mapped images with exact renders; the stack records which
    path produced ``mapped_fulls``.
    """
    presets = list(presets)
    full_fixed = Image(_render(raw.pixels, fixed), ColorSpace.GAMMA_SRGB)
    smalls = render_presets(raw, presets, small_size)
    if captures is not None:
        return PresetStack(presets, smalls, full_fixed, list(captures), [], "captured")
    src = Image(downsample(full_fixed.pixels, smalls[0].shape), ColorSpace.GAMMA_SRGB)
    mapped, mappings = [], []
    for p, small in zip(presets, smalls):
        if p.cct == fixed.cct:
            # the fixed render already is this preset; no mapping needed
            mapped.append(full_fixed)
            mappings.append(MappingMatrix(_identity_matrix(), p))
            continue
        m = fit_mapping(src, small, p, domain=domain)
        mapped.append(apply_mapping(full_fixed, m, domain=domain))
        mappings.append(m)
    return PresetStack(presets, smalls, full_fixed, mapped, mappings, "mapped")


def _identity_matrix() -> np.ndarray:
    m = np.zeros((3, len(POLY_TERMS)))
    m[0, 0] = m[1, 1] = m[2, 2] = 1.0
    return m
