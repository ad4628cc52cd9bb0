"""Procedural mixed-illuminant scenes with exact ground truth.

A scene is flat reflectance (albedo) lit by two or more lights whose spatial
influence is given by smooth, per-pixel mixing fields. Rendering is purely
multiplicative, so the ground truth (every light and the camera WB set to
5500 K) is known exactly.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .color import (
    WB_PRESETS,
    ColorSpace,
    Image,
    cct_to_illuminant,
    diagonal_wb,
    gamma_encode,
)
from .io import write_json, write_png16

logger = logging.getLogger(__name__)

GT_CCT = 5500.0
ALBEDO_MIN, ALBEDO_MAX = 0.05, 0.95
ALBEDO_KINDS = ("patches", "gradients", "checker", "mixed")
FIELD_KINDS = ("ramp", "radial", "halfplane")
DEFAULT_CCTS = tuple(s.cct for s in WB_PRESETS.values())
WARM_CCTS = (2850.0, 3800.0)
COOL_CCTS = (5500.0, 6500.0, 7500.0)


@dataclass(frozen=True)
class Light:
    """One light source.

    ``params`` are in normalized image coordinates (x, y in [0, 1]):

    * ``halfplane`` / ``ramp``: ``angle`` (radians, direction the field
      increases towards), ``offset`` (signed distance of the transition line
      from the image center), ``width``.
    * ``radial``: ``cx``, ``cy``, ``radius``, ``width``, ``invert``.
    """

    cct: float
    mix_field: str = "halfplane"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mix_field not in FIELD_KINDS:
            raise ValueError(f"unknown mix field {self.mix_field!r}")


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    width: int
    height: int
    lights: tuple
    camera_wb_cct: float = GT_CCT
    albedo_kind: str = "patches"
    n_colors: int = 12

    def __post_init__(self):
        lights = tuple(l if isinstance(l, Light) else Light(**l) for l in self.lights)
        object.__setattr__(self, "lights", lights)
        if len(lights) < 2:
            raise ValueError("a scene needs at least two lights")
        if self.albedo_kind not in ALBEDO_KINDS:
            raise ValueError(f"unknown albedo kind {self.albedo_kind!r}")
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")

    def validate(self) -> None:
        """Raise ``ValueError`` if any CCT is unusable."""
        for l in self.lights:
            cct_to_illuminant(l.cct)
        cct_to_illuminant(self.camera_wb_cct)

    @property
    def exposure(self) -> float:
        # keeps both the raw render and its ground-truth twin below 1
        ccts = [l.cct for l in self.lights] + [GT_CCT]
        peak = max(float(cct_to_illuminant(c).max()) for c in ccts)
        return 1.0 / peak

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lights"] = [asdict(l) for l in self.lights]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["lights"] = tuple(Light(**l) for l in d["lights"])
        return cls(**d)


@dataclass(frozen=True)
class ScenePair:
    input: Image
    ground_truth: Image
    raw: Image
    spec: SceneSpec


# --- albedo -----------------------------------------------------------------

def _palette(rng: np.random.Generator, n: int) -> np.ndarray:
    """Mostly low-saturation colors; the first quarter (at least one) is gray."""
    gray = rng.uniform(0.15, 0.85, size=n)
    sat = rng.uniform(0.1, 0.6, size=n)
    n_gray = max(1, n // 4)
    sat[:n_gray] = 0.0
    direction = rng.normal(size=(n, 3))
    direction -= direction.mean(axis=1, keepdims=True)
    direction /= np.linalg.norm(direction, axis=1, keepdims=True) + 1e-12
    cols = gray[:, None] * np.exp(sat[:, None] * direction)
    return np.clip(cols, ALBEDO_MIN, ALBEDO_MAX)


def _grid(h, w):
    y = (np.arange(h) + 0.5) / h
    x = (np.arange(w) + 0.5) / w
    return np.meshgrid(x, y)


def _voronoi_labels(rng, h, w, n):
    xx, yy = _grid(h, w)
    seeds = rng.uniform(0, 1, size=(n, 2))
    # guarantee every region owns its seed pixel
    d = (xx[..., None] - seeds[:, 0]) ** 2 + (yy[..., None] - seeds[:, 1]) ** 2
    return np.argmin(d, axis=-1)


def synth_albedo(spec: SceneSpec) -> Image:
    rng = np.random.default_rng([spec.seed, 1])
    h, w, n = spec.height, spec.width, max(2, spec.n_colors)
    pal = _palette(rng, n)
    kind = spec.albedo_kind

    if kind == "checker":
        cells = max(2, int(round(np.sqrt(n))) * 2)
        yi = (np.arange(h) * cells) // h
        xi = (np.arange(w) * cells) // w
        idx = (yi[:, None] + xi[None, :]) if n == 2 else (yi[:, None] * cells + xi[None, :])
        out = pal[idx % n]
    elif kind == "patches":
        out = pal[_voronoi_labels(rng, h, w, n)]
    elif kind == "gradients":
        side = int(np.ceil(np.sqrt(n)))
        pal2 = _palette(rng, n)[rng.permutation(n)]
        yi = np.minimum((np.arange(h) * side) // h, side - 1)
        xi = np.minimum((np.arange(w) * side) // w, side - 1)
        tile = (yi[:, None] * side + xi[None, :]) % n
        xx, _ = _grid(h, w)
        t = (xx * side) % 1.0
        out = (1 - t[..., None]) * pal[tile] + t[..., None] * pal2[tile]
    else:  # mixed
        labels = _voronoi_labels(rng, h, w, n)
        out = pal[labels]
        xx, yy = _grid(h, w)
        ramp = 0.75 + 0.25 * np.cos(2 * np.pi * (xx * rng.uniform(0.5, 2) + yy * rng.uniform(0.5, 2)))
        shaded = labels % 3 == 1
        out = np.where(shaded[..., None], out * ramp[..., None], out)
        cells = 8
        chk = ((np.floor(xx * cells) + np.floor(yy * cells)) % 2).astype(bool)
        corner = (xx < 0.3) & (yy < 0.3)
        out = np.where((corner & chk)[..., None], pal[0], out)
    return Image(np.clip(out, ALBEDO_MIN, ALBEDO_MAX), ColorSpace.LINEAR_RAW)


# --- mixing fields ----------------------------------------------------------

def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _light_field(light: Light, xx, yy) -> np.ndarray:
    p = light.params
    width = max(float(p.get("width", 0.05)), 1e-6)
    if light.mix_field in ("halfplane", "ramp"):
        ang = float(p.get("angle", 0.0))
        d = (xx - 0.5) * np.cos(ang) + (yy - 0.5) * np.sin(ang) - float(p.get("offset", 0.0))
        if light.mix_field == "halfplane":
            return _sigmoid(d / width)
        return np.clip(0.5 + d / width, 0.0, 1.0)
    r = np.hypot(xx - float(p.get("cx", 0.5)), yy - float(p.get("cy", 0.5)))
    f = _sigmoid((float(p.get("radius", 0.25)) - r) / width)
    return 1.0 - f if p.get("invert", False) else f


def synth_mix_fields(spec: SceneSpec) -> np.ndarray:
    """``(n_lights, H, W)`` nonnegative fields summing to one per pixel."""
    xx, yy = _grid(spec.height, spec.width)
    raw = np.stack([_light_field(l, xx, yy) for l in spec.lights])
    total = raw.sum(axis=0)
    uniform = np.full_like(raw, 1.0 / len(spec.lights))
    return np.where(total > 1e-12, raw / np.where(total > 1e-12, total, 1.0), uniform)


# --- rendering --------------------------------------------------------------

def _raw(spec: SceneSpec, albedo: np.ndarray, fields: np.ndarray, exposure: float) -> np.ndarray:
    light = np.zeros_like(albedo)
    for f, l in zip(fields, spec.lights):
        light += f[..., None] * cct_to_illuminant(l.cct)
    return exposure * albedo * light


def _capture(raw: np.ndarray, camera_cct: float) -> Image:
    lin = diagonal_wb(Image(raw, ColorSpace.LINEAR_RAW), cct_to_illuminant(camera_cct))
    return Image(gamma_encode(lin.pixels), ColorSpace.GAMMA_SRGB)


def gt_spec(spec: SceneSpec) -> SceneSpec:
    return replace(
        spec,
        lights=tuple(replace(l, cct=GT_CCT) for l in spec.lights),
        camera_wb_cct=GT_CCT,
    )


def render_raw(spec: SceneSpec) -> Image:
    albedo = synth_albedo(spec).pixels
    fields = synth_mix_fields(spec)
    return Image(np.clip(_raw(spec, albedo, fields, spec.exposure), 0, 1), ColorSpace.LINEAR_RAW)


def render_capture(spec: SceneSpec, camera_cct: float) -> Image:
    """The scene as the camera renders it with WB fixed at ``camera_cct``."""
    return _capture(render_raw(spec).pixels, camera_cct)


def render_scene(spec: SceneSpec) -> ScenePair:
    spec.validate()
    albedo = synth_albedo(spec).pixels
    fields = synth_mix_fields(spec)
    exposure = spec.exposure
    raw = np.clip(_raw(spec, albedo, fields, exposure), 0, 1)
    g = gt_spec(spec)
    raw_gt = np.clip(_raw(g, albedo, fields, exposure), 0, 1)
    return ScenePair(
        input=_capture(raw, spec.camera_wb_cct),
        ground_truth=_capture(raw_gt, g.camera_wb_cct),
        raw=Image(raw, ColorSpace.LINEAR_RAW),
        spec=spec,
    )


# --- sampling ---------------------------------------------------------------

def random_scene_spec(
    seed: int,
    width: int = 256,
    height: int = 256,
    light_ccts=None,
    camera_ccts=DEFAULT_CCTS,
    single_prob: float = 0.0,
    albedo_kinds=("patches", "gradients", "mixed"),
) -> SceneSpec:
    """Draw a scene with one warm and one cool light (optionally a third).

    ``light_ccts`` replaces the warm/cool pools with a single pool; the two
    primary lights are then drawn distinct whenever the pool allows it.
    With probability ``single_prob`` both lights share one CCT, which yields a
    single-illuminant scene.
    """
    rng = np.random.default_rng(seed)
    if light_ccts is None:
        c0, c1 = float(rng.choice(WARM_CCTS)), float(rng.choice(COOL_CCTS))
        pool = DEFAULT_CCTS
    else:
        pool = tuple(float(c) for c in light_ccts)
        c0, c1 = (float(c) for c in rng.choice(pool, size=2, replace=len(set(pool)) < 2))
    if rng.random() < single_prob:
        c1 = c0
    if rng.random() < 0.5:
        c0, c1 = c1, c0

    kind = str(rng.choice(FIELD_KINDS))
    width_n = float(rng.uniform(0.02, 0.15))
    if kind == "radial":
        p = dict(cx=float(rng.uniform(0.25, 0.75)), cy=float(rng.uniform(0.25, 0.75)),
                 radius=float(rng.uniform(0.2, 0.4)), width=width_n)
        lights = [Light(c0, "radial", {**p, "invert": True}), Light(c1, "radial", {**p, "invert": False})]
    else:
        ang = float(rng.uniform(0, 2 * np.pi))
        off = float(rng.uniform(-0.2, 0.2))
        w = width_n if kind == "halfplane" else 4 * width_n
        lights = [Light(c0, kind, dict(angle=ang + np.pi, offset=-off, width=w)),
                  Light(c1, kind, dict(angle=ang, offset=off, width=w))]
    if rng.random() < 0.25:
        lights.append(Light(float(rng.choice(pool)), "radial", dict(
            cx=float(rng.uniform(0, 1)), cy=float(rng.uniform(0, 1)),
            radius=float(rng.uniform(0.1, 0.25)), width=float(rng.uniform(0.02, 0.1)))))

    return SceneSpec(
        seed=int(rng.integers(0, 2**31 - 1)),
        width=width,
        height=height,
        lights=tuple(lights),
        camera_wb_cct=float(rng.choice(camera_ccts)),
        albedo_kind=str(rng.choice(albedo_kinds)),
        n_colors=int(rng.integers(10, 20)),
    )


def scene_seed(seed: int, index: int) -> int:
    """Per-scene sub-seed; independent of generation order."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def generate_testset(
    n: int,
    seed: int,
    out_dir,
    size: int = 256,
    presets: str = "tfdcs",
    digest: str | None = None,
    **sampler,
) -> dict:
    """Write ``n`` scenes plus ``manifest.json`` to ``out_dir``.

    Each scene directory holds ``input.png``, ``gt.png``, ``raw.png`` (linear,
    pre-WB), one ``preset_<name>.png`` per WB preset, and ``spec.json``.
    All specs are validated before anything is written.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out_dir = Path(out_dir)
    specs = [random_scene_spec(scene_seed(seed, i), size, size, **sampler) for i in range(n)]
    for s in specs:
        s.validate()

    entries = []
    for i, spec in enumerate(specs):
        sid = f"scene_{i:04d}"
        d = out_dir / sid
        pair = render_scene(spec)
        write_png16(d / "input.png", pair.input)
        write_png16(d / "gt.png", pair.ground_truth)
        write_png16(d / "raw.png", pair.raw)
        files = {"input": f"{sid}/input.png", "gt": f"{sid}/gt.png", "raw": f"{sid}/raw.png"}
        for name in presets:
            cap = _capture(pair.raw.pixels, WB_PRESETS[name].cct)
            write_png16(d / f"preset_{name}.png", cap)
            files[f"preset_{name}"] = f"{sid}/preset_{name}.png"
        write_json(d / "spec.json", spec.to_dict())
        files["spec"] = f"{sid}/spec.json"
        entries.append({"scene_id": sid, "files": files, "spec": spec.to_dict()})
        logger.debug("rendered %s", sid)

    manifest = {"n": n, "seed": seed, "size": size, "presets": presets, "scenes": entries}
    if digest is not None:
        manifest["config_digest"] = digest
    write_json(out_dir / "manifest.json", manifest)
    return manifest
