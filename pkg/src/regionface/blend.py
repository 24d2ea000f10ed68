"""Weighted region blendshapes and seam blending onto the base face model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import HeadMesh, RegionMap
from .similarity import WeightVector


@dataclass(frozen=True)
class TransitionWeightParams:
    a: float = 1.013
    b: float = 1.019
    x0: float = 0.264
    p: float = 3.244

    def __post_init__(self):
        if self.x0 <= 0 or self.p <= 0:
            raise ValueError("x0 and p must be positive")


@dataclass(frozen=True)
class SeamBlend:
    shift: np.ndarray  # mean of (base - added) over the overlap
    extents: tuple  # (dx, dy) of the shifted added region
    distances: np.ndarray  # normalized distance per added-region vertex
    region_mean: np.ndarray


def twf_raw(delta, params: TransitionWeightParams = TransitionWeightParams()):
    delta = np.asarray(delta, dtype=np.float64)
    return params.a - params.b / (1.0 + (delta / params.x0) ** params.p)


def twf(delta, params: TransitionWeightParams = TransitionWeightParams()):
    """Transition weight clamped to [0, 1] so the seam blend stays convex."""
    return np.clip(twf_raw(delta, params), 0.0, 1.0)


def combine_blendshape(models, weights: WeightVector | np.ndarray) -> HeadMesh:
    w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=np.float64)
    if len(w) != len(models):
        raise ValueError(f"{len(w)} weights for {len(models)} models")
    ref = models[0]
    for m in models[1:]:
        if not ref.same_topology(m):
            raise ValueError("models do not share topology")
    idx = np.flatnonzero(w)
    verts = np.zeros_like(ref.vertices)
    for i in idx:
        verts += w[i] * models[i].vertices
    return ref.with_vertices(verts)


def seam_blend(base: HeadMesh, added: HeadMesh, added_indices, base_indices) -> SeamBlend:
    ia = np.asarray(added_indices, dtype=np.int64)
    iab = np.intersect1d(ia, np.asarray(base_indices, dtype=np.int64))
    if len(iab) == 0:
        raise ValueError("added and base regions do not overlap")
    shift = (base.vertices[iab] - added.vertices[iab]).mean(axis=0)
    pts = added.vertices[ia] + shift / 2.0
    ext = pts[:, :2].max(axis=0) - pts[:, :2].min(axis=0)
    if np.any(ext <= 0):
        raise ValueError(f"added region has zero extent {tuple(ext)}")
    mu = pts.mean(axis=0)
    dist = np.linalg.norm((mu[:2] - pts[:, :2]) / ext, axis=1)
    return SeamBlend(shift, (float(ext[0]), float(ext[1])), dist, mu)


def attach_region(base: HeadMesh, added: HeadMesh, added_indices, base_indices,
                  params: TransitionWeightParams = TransitionWeightParams()) -> HeadMesh:
    """Shift the added region halfway onto the base and blend it in by distance from its center.

    Only vertices in ``added_indices`` change.
    """
    if not base.same_topology(added):
        raise ValueError("base and added meshes do not share topology")
    ia = np.asarray(added_indices, dtype=np.int64)
    seam = seam_blend(base, added, ia, base_indices)
    moved = added.vertices[ia] + seam.shift / 2.0
    t = twf(seam.distances, params)[:, None]
    verts = np.array(base.vertices)
    verts[ia] = base.vertices[ia] + t * (moved - base.vertices[ia])
    return base.with_vertices(verts)


ATTACH_ORDER = ("nose", "eyes", "mouth")


def build_blended_model(selection: dict, regions: RegionMap,
                        params: TransitionWeightParams = TransitionWeightParams(),
                        order=ATTACH_ORDER) -> HeadMesh:
    """Assemble the head from per-region ``(models, weights)`` selections.

    The face blendshape is the base (and supplies the unused vertices); nose,
    eyes and mouth are attached in that order, each against the union of the
    regions already in place.
    """
    missing = {"face", *order} - set(selection)
    if missing:
        raise ValueError(f"no selection for regions {sorted(missing)}")
    base = combine_blendshape(*selection["face"])
    placed = regions["face"]
    for name in order:
        added = combine_blendshape(*selection[name])
        base = attach_region(base, added, regions[name], placed, params)
        placed = np.union1d(placed, regions[name])
    return base
