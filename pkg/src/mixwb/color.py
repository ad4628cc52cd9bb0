"""Color-science primitives: transfer curves, illuminants, diagonal WB,
polynomial features and the two error metrics used throughout the package.

Images are float64 ``H x W x 3`` arrays wrapped in :class:`Image`, which
carries an explicit color-space tag. Functions that expect a particular space
refuse anything else instead of converting silently.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ColorSpace",
    "Image",
    "SpaceError",
    "WB_PRESETS",
    "WBSetting",
    "preset",
    "srgb_gamma",
    "srgb_degamma",
    "gamma_encode",
    "gamma_decode",
    "cct_to_illuminant",
    "diagonal_wb",
    "poly_expand",
    "POLY_TERMS",
    "angular_error",
    "srgb_to_lab",
    "delta_e_2000_lab",
    "delta_e_2000",
]


class ColorSpace(str, enum.Enum):
    LINEAR_RAW = "linear-raw"
    LINEAR_SRGB = "linear-srgb"
    GAMMA_SRGB = "gamma-srgb"


class SpaceError(ValueError):
    """An image was handed to an operation expecting a different space."""


@dataclass(frozen=True)
class Image:
    pixels: np.ndarray
    space: ColorSpace

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected an HxWx3 array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite values")
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "space", ColorSpace(self.space))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    def clamped(self) -> "Image":
        return Image(np.clip(self.pixels, 0.0, 1.0), self.space)


def _require(img: Image, *spaces: ColorSpace) -> None:
    if not isinstance(img, Image):
        raise TypeError(f"expected Image, got {type(img).__name__}")
    if img.space not in spaces:
        wanted = " or ".join(s.value for s in spaces)
        raise SpaceError(f"operation requires {wanted}, got {img.space.value}")


@dataclass(frozen=True)
class WBSetting:
    name: str
    cct: float

    def __post_init__(self):
        if self.cct <= 0:
            raise ValueError("cct must be positive")


WB_PRESETS = {
    "t": WBSetting("t", 2850.0),
    "f": WBSetting("f", 3800.0),
    "d": WBSetting("d", 5500.0),
    "c": WBSetting("c", 6500.0),
    "s": WBSetting("s", 7500.0),
}


def preset(names) -> list[WBSetting]:
    """``preset("tds")`` -> ordered list of canonical settings."""
    try:
        return [WB_PRESETS[n] for n in names]
    except KeyError as exc:
        raise ValueError(f"unknown WB preset {exc.args[0]!r}") from None


# --- sRGB transfer curve ---------------------------------------------------

_SRGB_BREAK = 0.0031308


def gamma_encode(x: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)
    hi = 1.055 * np.power(np.maximum(x, _SRGB_BREAK), 1.0 / 2.4) - 0.055
    return np.clip(np.where(x <= _SRGB_BREAK, 12.92 * x, hi), 0.0, 1.0)


def gamma_decode(v: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    # breakpoint on the encoded side, consistent with the forward curve
    v_break = 12.92 * _SRGB_BREAK
    hi = np.power((np.maximum(v, v_break) + 0.055) / 1.055, 2.4)
    return np.clip(np.where(v <= v_break, v / 12.92, hi), 0.0, 1.0)


def srgb_gamma(img: Image) -> Image:
    _require(img, ColorSpace.LINEAR_SRGB)
    return Image(gamma_encode(img.pixels), ColorSpace.GAMMA_SRGB)


def srgb_degamma(img: Image) -> Image:
    _require(img, ColorSpace.GAMMA_SRGB)
    return Image(gamma_decode(img.pixels), ColorSpace.LINEAR_SRGB)


# --- illuminants -------------------------------------------------------------

XYZ_TO_SRGB = np.array([
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
])
SRGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
D65_WHITE = np.array([0.95047, 1.0, 1.08883])

CCT_MIN, CCT_MAX = 1667.0, 25000.0


def planckian_xy(cct: float) -> tuple[float, float]:
    """CIE 1931 xy of a Planckian radiator (Kim et al. cubic spline)."""
    t = float(cct)
    if not CCT_MIN <= t <= CCT_MAX:
        raise ValueError(f"CCT {t} K outside [{CCT_MIN:.0f}, {CCT_MAX:.0f}] K")
    if t <= 4000:
        x = -0.2661239e9 / t**3 - 0.2343589e6 / t**2 + 0.8776956e3 / t + 0.179910
    else:
        x = -3.0258469e9 / t**3 + 2.1070379e6 / t**2 + 0.2226347e3 / t + 0.240390
    if t <= 2222:
        y = -1.1063814 * x**3 - 1.34811020 * x**2 + 2.18555832 * x - 0.20219683
    elif t <= 4000:
        y = -0.9549476 * x**3 - 1.37418593 * x**2 + 2.09137015 * x - 0.16748867
    else:
        y = 3.0817580 * x**3 - 5.87338670 * x**2 + 3.75112997 * x - 0.37001483
    return x, y


def cct_to_illuminant(cct: float) -> np.ndarray:
    """Linear-sRGB color of a Planckian light, normalized to G == 1.

    Raises ``ValueError`` outside the spline's validity range, and also for
    the very warm end (below roughly 1900 K) where the blue primary goes
    non-positive and no physical diagonal correction exists.
    """
    x, y = planckian_xy(cct)
    xyz = np.array([x / y, 1.0, (1.0 - x - y) / y])
    rgb = XYZ_TO_SRGB @ xyz
    if np.any(rgb <= 0):
        raise ValueError(f"CCT {cct} K falls outside the sRGB gamut (rgb={rgb})")
    return rgb / rgb[1]


def _check_illuminant(illum) -> np.ndarray:
    e = np.asarray(illum, dtype=np.float64).reshape(3)
    if np.any(~np.isfinite(e)) or np.any(e <= 0):
        raise ValueError(f"illuminant components must be positive, got {e}")
    return e


def diagonal_wb(img: Image, illum) -> Image:
    _require(img, ColorSpace.LINEAR_RAW, ColorSpace.LINEAR_SRGB)
    e = _check_illuminant(illum)
    return Image(np.clip(img.pixels / e, 0.0, 1.0), img.space)


# --- polynomial features -----------------------------------------------------

POLY_TERMS = ("R", "G", "B", "RG", "RB", "GB", "R2", "G2", "B2", "RGB", "1")


def poly_expand(rgb: np.ndarray) -> np.ndarray:
    """Map ``(..., 3)`` colors to ``(..., 11)`` features in ``POLY_TERMS`` order."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    return np.stack(
        [r, g, b, r * g, r * b, g * b, r * r, g * g, b * b, r * g * b, np.ones_like(r)],
        axis=-1,
    )


# --- error metrics ----------------------------------------------------------

DEGENERATE_NORM = 1e-9


def angular_error(a, b) -> np.ndarray:
    """Angle in degrees between RGB vectors along the last axis.

    Pairs where either vector has norm below 1e-9 come back as NaN, which the
    evaluator treats as "skipped".
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=-1)
    nb = np.linalg.norm(b, axis=-1)
    ok = (na >= DEGENERATE_NORM) & (nb >= DEGENERATE_NORM)
    # atan2 of |a x b| and a.b stays accurate for tiny angles, unlike arccos
    ang = np.degrees(np.arctan2(np.linalg.norm(np.cross(a, b), axis=-1), np.sum(a * b, axis=-1)))
    return np.where(ok, ang, np.nan)


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Gamma-encoded sRGB in [0, 1] -> CIELAB (D65)."""
    lin = gamma_decode(rgb)
    xyz = lin @ SRGB_TO_XYZ.T / D65_WHITE
    eps, kappa = 216 / 24389, 24389 / 27
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16) / 116)
    L = 116 * f[..., 1] - 16
    a = 500 * (f[..., 0] - f[..., 1])
    b = 200 * (f[..., 1] - f[..., 2])
    return np.stack([L, a, b], axis=-1)


def delta_e_2000_lab(lab1, lab2) -> np.ndarray:
    """CIEDE2000 with kL = kC = kH = 1, vectorized over leading axes."""
    lab1 = np.asarray(lab1, dtype=np.float64)
    lab2 = np.asarray(lab2, dtype=np.float64)
    L1, a1, b1 = np.moveaxis(lab1, -1, 0)
    L2, a2, b2 = np.moveaxis(lab2, -1, 0)

    c_bar = 0.5 * (np.hypot(a1, b1) + np.hypot(a2, b2))
    c7 = c_bar**7
    g = 0.5 * (1 - np.sqrt(c7 / (c7 + 25.0**7)))
    a1p, a2p = (1 + g) * a1, (1 + g) * a2
    c1p, c2p = np.hypot(a1p, b1), np.hypot(a2p, b2)
    h1p = np.degrees(np.arctan2(b1, a1p)) % 360
    h2p = np.degrees(np.arctan2(b2, a2p)) % 360
    h1p = np.where((a1p == 0) & (b1 == 0), 0.0, h1p)
    h2p = np.where((a2p == 0) & (b2 == 0), 0.0, h2p)

    dLp = L2 - L1
    dCp = c2p - c1p
    cprod = c1p * c2p
    dh = h2p - h1p
    dh = np.where(dh > 180, dh - 360, dh)
    dh = np.where(dh < -180, dh + 360, dh)
    dh = np.where(cprod == 0, 0.0, dh)
    dHp = 2 * np.sqrt(cprod) * np.sin(np.radians(dh / 2))

    Lbp = 0.5 * (L1 + L2)
    Cbp = 0.5 * (c1p + c2p)
    hsum = h1p + h2p
    hbp = np.where(
        np.abs(h1p - h2p) <= 180,
        hsum / 2,
        np.where(hsum < 360, (hsum + 360) / 2, (hsum - 360) / 2),
    )
    hbp = np.where(cprod == 0, hsum, hbp)

    T = (1 - 0.17 * np.cos(np.radians(hbp - 30)) + 0.24 * np.cos(np.radians(2 * hbp))
         + 0.32 * np.cos(np.radians(3 * hbp + 6)) - 0.20 * np.cos(np.radians(4 * hbp - 63)))
    d_theta = 30 * np.exp(-(((hbp - 275) / 25) ** 2))
    cb7 = Cbp**7
    rc = 2 * np.sqrt(cb7 / (cb7 + 25.0**7))
    sl = 1 + 0.015 * (Lbp - 50) ** 2 / np.sqrt(20 + (Lbp - 50) ** 2)
    sc = 1 + 0.045 * Cbp
    sh = 1 + 0.015 * Cbp * T
    rt = -np.sin(np.radians(2 * d_theta)) * rc

    tl, tc, th = dLp / sl, dCp / sc, dHp / sh
    return np.sqrt(tl**2 + tc**2 + th**2 + rt * tc * th)


def delta_e_2000(a, b) -> np.ndarray:
    """CIEDE2000 between gamma-sRGB colors (arrays of shape ``(..., 3)``)."""
    return delta_e_2000_lab(srgb_to_lab(a), srgb_to_lab(b))
