"""Pipeline configuration, read from TOML.

Every key is optional; missing keys keep the defaults below. Example::

    top_n = 3
    workers = 1

    [render]
    image_size = 512
    fov_deg = 25.0
    distance = 6.0
    light_intensities = [0.5, 0.2, 0.2, 0.15, 0.15]

    [regions]
    eyes = [16, 32, 128, 48]   # left, top, width, height in the aligned face frame

    [morph]
    k_values = [1.0, 0.45, 0.2]
    masks = [[1, 2, ...], ...]  # 1-based active feature numbers per pass
    sigma = [...]               # optional override of the database's 68 drop-off values
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .blend import TransitionWeightParams
from .morph import MorphSchedule
from .render import FaceFrame, RegionBoxes, RenderConfig
from .similarity import LbpConfig
from .texture import ATLAS_SIZE, FEATHER

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class TextureParams:
    feather: int = FEATHER
    atlas_size: int = ATLAS_SIZE


@dataclass(frozen=True)
class PipelineConfig:
    db: Path | None = None
    render: RenderConfig = field(default_factory=RenderConfig)
    face_frame: FaceFrame = field(default_factory=FaceFrame)
    regions: RegionBoxes = field(default_factory=RegionBoxes)
    lbp: LbpConfig = field(default_factory=LbpConfig)
    pca_variance: float = 0.95
    pca_cap: int = 50
    top_n: int = 3
    blend: TransitionWeightParams = field(default_factory=TransitionWeightParams)
    morph: MorphSchedule = field(default_factory=MorphSchedule)
    sigma: tuple | None = None
    texture: TextureParams = field(default_factory=TextureParams)
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.top_n not in (1, 3):
            raise ValueError("top_n must be 1 or 3")
        if not 0 < self.pca_variance <= 1:
            raise ValueError("pca_variance must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.sigma is not None and (len(self.sigma) != 68 or min(self.sigma) <= 0):
            raise ValueError("sigma override needs 68 positive values")


def _tuple(v):
    return tuple(_tuple(x) for x in v) if isinstance(v, list) else v


def _tuples(d: dict) -> dict:
    return {k: _tuple(v) for k, v in d.items()}


def _section(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**_tuples(data))


def _morph(data: dict) -> MorphSchedule:
    kw = {}
    if "k_values" in data:
        kw["k_values"] = tuple(float(k) for k in data["k_values"])
    if "masks" in data:
        masks = []
        for active in data["masks"]:
            m = np.zeros(68, dtype=bool)
            m[np.asarray(active, dtype=int) - 1] = True
            masks.append(tuple(m.tolist()))
        kw["masks"] = tuple(masks)
    return MorphSchedule(**kw)


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    kw = {}
    sections = {"render": RenderConfig, "face_frame": FaceFrame, "regions": RegionBoxes, "lbp": LbpConfig,
                "blend": TransitionWeightParams, "texture": TextureParams}
    for key, cls in sections.items():
        if key in data:
            kw[key] = _section(cls, data.pop(key))
    if "morph" in data:
        morph = dict(data.pop("morph"))
        if "sigma" in morph:
            kw["sigma"] = tuple(float(s) for s in morph.pop("sigma"))
        kw["morph"] = _morph(morph)
    if "db" in data:
        kw["db"] = Path(data.pop("db"))
    for key in ("pca_variance", "pca_cap", "top_n", "seed", "workers"):
        if key in data:
            kw[key] = data.pop(key)
    if data:
        raise ValueError(f"unknown config keys: {sorted(data)}")
    return PipelineConfig(**kw)


def load_config(path=None, **overrides) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        with open(path, "rb") as fh:
            cfg = config_from_dict(tomllib.load(fh))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg
