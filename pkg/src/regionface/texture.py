"""Texture atlas creation: frame picking, skin-tone shift, piecewise-affine UV warp, compositing.

Atlas pixel coordinates: x = u * size, y = (1 - v) * size, pixel centers at +0.5.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage
from scipy.spatial import ConvexHull, Delaunay
from skimage.draw import polygon2mask

from .mesh import LandmarkSet

log = logging.getLogger(__name__)

ATLAS_SIZE = 2048
FEATHER = 32

# provenance tags
AVERAGE, FRAME_L, FRAME_C, FRAME_R, BLEND = range(5)
TAG_NAMES = ("average", "frame_L", "frame_C", "frame_R", "blend")

LEFT_EYE = tuple(range(36, 42))
RIGHT_EYE = tuple(range(42, 48))
INNER_MOUTH = tuple(range(60, 68))

SIDE_YAW = 30.0
YAW_WINDOW = 10.0


class DegenerateTriangleError(ValueError):
    pass


@dataclass
class TextureAtlas:
    pixels: np.ndarray  # (S, S, 3) in [0, 1]
    provenance: np.ndarray | None = None  # (S, S) uint8 tags

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3 or px.shape[0] != px.shape[1]:
            raise ValueError(f"atlas must be square RGB, got {px.shape}")
        if px.min(initial=0.0) < 0.0 or px.max(initial=0.0) > 1.0:
            raise ValueError("atlas values must lie in [0, 1]")
        self.pixels = px
        if self.provenance is None:
            self.provenance = np.full(px.shape[:2], AVERAGE, dtype=np.uint8)

    @property
    def size(self) -> int:
        return self.pixels.shape[0]

    def save(self, path) -> None:
        Image.fromarray(np.round(self.pixels * 255).astype(np.uint8), mode="RGB").save(path)

    @classmethod
    def load(cls, path) -> TextureAtlas:
        return cls(read_rgb(path))


def read_rgb(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def write_rgb(img: np.ndarray, path) -> None:
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    Image.fromarray(np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8), mode="RGB").save(path)


@dataclass(frozen=True)
class UvLandmarks:
    points: np.ndarray  # (68, 2) UV
    anchors: np.ndarray  # (8, 2) UV
    skin_polygon: np.ndarray | None = None  # (K, 2) UV, skin reference region of the average texture

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        anc = np.asarray(self.anchors, dtype=np.float64)
        if pts.shape != (68, 2) or anc.shape != (8, 2):
            raise ValueError(f"need 68 landmark and 8 anchor UVs, got {pts.shape}, {anc.shape}")
        allp = np.vstack([pts, anc])
        if allp.min() < 0.0 or allp.max() > 1.0:
            raise ValueError("UV landmarks must lie in [0, 1]")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "anchors", anc)
        if self.skin_polygon is not None:
            object.__setattr__(self, "skin_polygon", np.asarray(self.skin_polygon, dtype=np.float64))

    def save(self, path) -> None:
        data = {"points": self.points.tolist(), "anchors": self.anchors.tolist()}
        if self.skin_polygon is not None:
            data["skin_polygon"] = self.skin_polygon.tolist()
        Path(path).write_text(json.dumps(data))

    @classmethod
    def load(cls, path) -> UvLandmarks:
        data = json.loads(Path(path).read_text())
        return cls(data["points"], data["anchors"], data.get("skin_polygon"))


def uv_to_pixels(uv: np.ndarray, size: int) -> np.ndarray:
    uv = np.asarray(uv, dtype=np.float64)
    return np.column_stack([uv[:, 0] * size, (1.0 - uv[:, 1]) * size])


# ---------------------------------------------------------------- frame selection & color


def pick_frames(frames) -> tuple:
    """(left, center, right) frame ids by yaw; sides are None when no frame is near ±30°."""
    if not frames:
        raise ValueError("no frames given")
    yaws = np.array([f.yaw for f in frames])
    c = int(np.argmin(np.abs(yaws)))
    if abs(yaws[c]) >= YAW_WINDOW:
        raise ValueError(f"no near-frontal frame (smallest |yaw| is {abs(yaws[c]):.1f} degrees)")

    def side(target):
        gap = np.abs(yaws - target)
        i = int(np.argmin(gap))
        return frames[i].frame_id if gap[i] <= YAW_WINDOW else None

    return side(-SIDE_YAW), frames[c].frame_id, side(SIDE_YAW)


def polygon_mask(shape, poly_xy: np.ndarray) -> np.ndarray:
    """Pixels whose centers fall inside a polygon given in pixel (x, y) coordinates."""
    rc = np.column_stack([poly_xy[:, 1] - 0.5, poly_xy[:, 0] - 0.5])
    return polygon2mask(shape, rc)


def face_skin_mask(shape, pts_px: np.ndarray) -> np.ndarray:
    """Landmark convex hull minus the eye and inner-mouth polygons."""
    hull = ConvexHull(pts_px)
    mask = polygon_mask(shape, pts_px[hull.vertices])
    for group in (LEFT_EYE, RIGHT_EYE, INNER_MOUTH):
        mask &= ~polygon_mask(shape, pts_px[list(group)])
    return mask


def lower_median(values: np.ndarray) -> np.ndarray:
    """Per-column median; with an even count the lower of the two middle values."""
    n = len(values)
    k = (n - 1) // 2
    return np.partition(values, k, axis=0)[k]


def median_skin_color(frame: np.ndarray, landmarks: LandmarkSet) -> np.ndarray:
    h, w = frame.shape[:2]
    pts = landmarks.points * [w, h]
    mask = face_skin_mask((h, w), pts)
    if not mask.any():
        raise ValueError("skin mask is empty")
    return lower_median(frame[mask])


def skin_reference_mask(uv: UvLandmarks, size: int) -> np.ndarray:
    if uv.skin_polygon is not None:
        return polygon_mask((size, size), uv_to_pixels(uv.skin_polygon, size))
    return face_skin_mask((size, size), uv_to_pixels(uv.points, size))


def shift_average_texture(avg: TextureAtlas, target, uv: UvLandmarks) -> TextureAtlas:
    """Additive per-channel shift so the skin reference region's median becomes ``target``."""
    mask = skin_reference_mask(uv, avg.size)
    if not mask.any():
        raise ValueError("skin reference region is empty")
    ref = lower_median(avg.pixels[mask])
    shifted = np.clip(avg.pixels + (np.asarray(target, dtype=np.float64) - ref), 0.0, 1.0)
    return TextureAtlas(shifted)


# ---------------------------------------------------------------- warping


@dataclass
class PartialTexture:
    pixels: np.ndarray  # (S, S, 3)
    mask: np.ndarray  # (S, S) bool, True where the frame supplied a sample
    yaw: float = 0.0
    tag: int = FRAME_C


def _fit_affine(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    A = np.column_stack([src, np.ones(len(src))])
    M, *_ = np.linalg.lstsq(A, dst, rcond=None)
    return M  # (3, 2)


def _tri_area(p: np.ndarray) -> float:
    return 0.5 * ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))


def warp_to_uv(frame: np.ndarray, landmarks: LandmarkSet, uv: UvLandmarks, size: int = ATLAS_SIZE,
               tag: int = FRAME_C) -> PartialTexture:
    """Piecewise-affine warp of a frame onto the UV atlas.

    Triangles come from a Delaunay triangulation of the UV landmarks plus
    border anchors; anchors get image positions from a global affine fit.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        frame = np.repeat(frame[..., None], 3, axis=2)
    h, w = frame.shape[:2]
    uv_px = uv_to_pixels(np.vstack([uv.points, uv.anchors]), size)
    img_lm = landmarks.points * [w, h]
    M = _fit_affine(uv_px[:68], img_lm)
    img_px = np.vstack([img_lm, np.column_stack([uv_px[68:], np.ones(8)]) @ M])

    tri = Delaunay(uv_px).simplices
    rows_all, cols_all, sx_all, sy_all = [], [], [], []
    for t, (a, b, c) in enumerate(tri):
        dst = uv_px[[a, b, c]]
        src = img_px[[a, b, c]]
        area = _tri_area(dst)
        if abs(area) < 1e-9 or abs(_tri_area(src)) < 1e-9:
            raise DegenerateTriangleError(f"triangle {t} (landmarks {a}, {b}, {c}) has zero area")
        lo = np.clip(np.floor(dst.min(axis=0) - 0.5).astype(int), 0, size - 1)
        hi = np.clip(np.ceil(dst.max(axis=0) - 0.5).astype(int), 0, size - 1)
        X, Y = np.meshgrid(np.arange(lo[0], hi[0] + 1) + 0.5, np.arange(lo[1], hi[1] + 1) + 0.5)
        (x0, y0), (x1, y1), (x2, y2) = dst
        w1 = ((X - x0) * (y2 - y0) - (x2 - x0) * (Y - y0)) / (2 * area)
        w2 = ((x1 - x0) * (Y - y0) - (X - x0) * (y1 - y0)) / (2 * area)
        w0 = 1.0 - w1 - w2
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        if not inside.any():
            continue
        w0, w1, w2 = w0[inside], w1[inside], w2[inside]
        rows_all.append(Y[inside].astype(np.int64))
        cols_all.append(X[inside].astype(np.int64))
        sx_all.append(w0 * src[0, 0] + w1 * src[1, 0] + w2 * src[2, 0])
        sy_all.append(w0 * src[0, 1] + w1 * src[1, 1] + w2 * src[2, 1])

    pixels = np.zeros((size, size, 3))
    mask = np.zeros((size, size), dtype=bool)
    if not rows_all:
        return PartialTexture(pixels, mask, landmarks.yaw, tag)
    rows, cols = np.concatenate(rows_all), np.concatenate(cols_all)
    # continuous pixel coordinates -> array indices
    ix, iy = np.concatenate(sx_all) - 0.5, np.concatenate(sy_all) - 0.5
    ok = (ix >= -1e-6) & (ix <= w - 1 + 1e-6) & (iy >= -1e-6) & (iy <= h - 1 + 1e-6)
    rows, cols, ix, iy = rows[ok], cols[ok], ix[ok], iy[ok]
    for ch in range(3):
        pixels[rows, cols, ch] = ndimage.map_coordinates(frame[..., ch], [iy, ix], order=1, mode="nearest")
    mask[rows, cols] = True
    return PartialTexture(np.clip(pixels, 0.0, 1.0), mask, landmarks.yaw, tag)


# ---------------------------------------------------------------- compositing


def feather_alpha(mask: np.ndarray, feather: int = FEATHER) -> np.ndarray:
    """Linear ramp from the mask edge inward; 1 once ``feather`` pixels deep."""
    if not mask.any():
        return np.zeros(mask.shape)
    if mask.all():
        return np.ones(mask.shape)
    dist = ndimage.distance_transform_edt(mask)
    return np.clip(dist / max(feather, 1), 0.0, 1.0)


def compose_texture(partials, base: TextureAtlas, feather: int = FEATHER) -> TextureAtlas:
    """Merge partial textures (smallest |yaw| wins) and feather the result into the base."""
    if not partials:
        return TextureAtlas(base.pixels.copy(), base.provenance.copy())
    size = base.size
    merged = np.zeros((size, size, 3))
    owner = np.full((size, size), -1, dtype=np.int64)
    for p in sorted(partials, key=lambda p: (abs(p.yaw), p.tag)):
        if p.mask.shape != (size, size):
            raise ValueError(f"partial mask {p.mask.shape} does not match atlas {size}x{size}")
        take = p.mask & (owner < 0)
        merged[take] = p.pixels[take]
        owner[take] = p.tag
    covered = owner >= 0
    alpha = feather_alpha(covered, feather)
    out = alpha[..., None] * merged + (1.0 - alpha[..., None]) * base.pixels
    prov = np.full((size, size), AVERAGE, dtype=np.uint8)
    full = alpha >= 1.0
    prov[full] = owner[full]
    prov[(alpha > 0) & ~full] = BLEND
    return TextureAtlas(np.clip(out, 0.0, 1.0), prov)


def build_texture(frames: dict, landmark_sets, uv: UvLandmarks, average: TextureAtlas,
                  feather: int = FEATHER) -> tuple[TextureAtlas, dict]:
    """Full texture stage: pick frames, shift the average texture, warp, composite.

    ``frames`` maps frame id to an RGB image; returns the atlas and picked ids.
    """
    by_id = {lm.frame_id: lm for lm in landmark_sets}
    left, center, right = pick_frames(list(landmark_sets))
    skin = median_skin_color(frames[center], by_id[center])
    base = shift_average_texture(average, skin, uv)
    partials = []
    for fid, tag in ((center, FRAME_C), (left, FRAME_L), (right, FRAME_R)):
        if fid is not None:
            partials.append(warp_to_uv(frames[fid], by_id[fid], uv, average.size, tag))
    atlas = compose_texture(partials, base, feather)
    return atlas, {"left": left, "center": center, "right": right, "skin_color": skin.tolist()}
