"""Software rasterizer for frontal comparison renders and their region crops."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .mesh import HeadMesh, LandmarkVertexMap

log = logging.getLogger(__name__)

COMPARED_REGIONS = ("eyes", "nose", "mouth", "face")

_S60, _C60 = np.sin(np.radians(60)), np.cos(np.radians(60))
_S45, _C45 = np.sin(np.radians(45)), np.cos(np.radians(45))


class RenderError(ValueError):
    pass


def _default_light_dirs():
    # propagation directions: front, right side, left side, top, lower-front fill
    return [(0.0, 0.0, -1.0), (-_S60, 0.0, -_C60), (_S60, 0.0, -_C60), (0.0, -_S45, -_C45), (0.0, _S45, -_C45)]


@dataclass(frozen=True)
class RenderConfig:
    image_size: int = 512
    fov_deg: float = 25.0
    distance: float = 6.0
    light_dirs: tuple = field(default_factory=lambda: tuple(map(tuple, _default_light_dirs())))
    light_intensities: tuple = (0.5, 0.2, 0.2, 0.15, 0.15)
    albedo: float = 1.0

    def __post_init__(self):
        dirs = np.asarray(self.light_dirs, dtype=np.float64).reshape(-1, 3)
        if not np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-9):
            raise ValueError("light directions must be unit vectors")
        if len(self.light_intensities) != len(dirs):
            raise ValueError("one intensity per light required")
        if any(i < 0 for i in self.light_intensities):
            raise ValueError("light intensities must be >= 0")
        if not 0.0 < self.fov_deg < 120.0:
            raise ValueError(f"fov must lie in (0, 120) degrees, got {self.fov_deg}")
        if self.image_size < 1 or self.distance <= 0:
            raise ValueError("image_size and distance must be positive")

    def with_lights(self, dirs, intensities) -> RenderConfig:
        return RenderConfig(self.image_size, self.fov_deg, self.distance,
                            tuple(map(tuple, dirs)), tuple(intensities), self.albedo)


def project(points: np.ndarray, cfg: RenderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Pixel coordinates (x right, y down; pixel centers at +0.5) and depth.

    The camera sits at (0, 0, distance) looking down -Z.
    """
    points = np.asarray(points, dtype=np.float64)
    depth = cfg.distance - points[:, 2]
    if np.any(depth <= 1e-9):
        raise RenderError("degenerate camera: mesh reaches behind the camera plane")
    t = np.tan(np.radians(cfg.fov_deg) / 2.0)
    s = cfg.image_size
    px = (points[:, 0] / (depth * t) + 1.0) * 0.5 * s
    py = (1.0 - points[:, 1] / (depth * t)) * 0.5 * s
    return np.stack([px, py], axis=1), depth


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v = vertices
    a, b, c, d = (v[faces[:, k]] for k in range(4))
    fn = np.cross(c - a, d - b)  # twice the vector area of each quad
    vn = np.zeros_like(v)
    for k in range(4):
        np.add.at(vn, faces[:, k], fn)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    return np.divide(vn, norm, out=np.zeros_like(vn), where=norm > 0)


def lambert(normals: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    """Unclamped per-vertex Lambert sum over all lights."""
    to_light = -np.asarray(cfg.light_dirs, dtype=np.float64)
    ndotl = np.clip(normals @ to_light.T, 0.0, None)
    return ndotl @ np.asarray(cfg.light_intensities, dtype=np.float64) * cfg.albedo


def triangles(faces: np.ndarray) -> np.ndarray:
    return np.concatenate([faces[:, [0, 1, 2]], faces[:, [0, 2, 3]]])


def rasterize(screen: np.ndarray, depth: np.ndarray, tris: np.ndarray, attrs: np.ndarray,
              size: int, cull_backfaces: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Depth-buffered scanline-free rasterization with perspective-correct attributes.

    Returns the interpolated attribute image (size, size, C) and the coverage mask.
    """
    attrs = np.asarray(attrs, dtype=np.float64)
    if attrs.ndim == 1:
        attrs = attrs[:, None]
    nch = attrs.shape[1]
    inv_w = 1.0 / depth
    out = np.zeros((size, size, nch))
    zbuf = np.full((size, size), -np.inf)

    p = screen[tris]  # (T, 3, 2)
    # signed area with y pointing up; > 0 means counter-clockwise on screen
    area = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 0, 1] - p[:, 2, 1])
            - (p[:, 0, 1] - p[:, 1, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    keep = area > 1e-12 if cull_backfaces else np.abs(area) > 1e-12
    lo = np.floor(p.min(axis=1) - 0.5).astype(np.int64)
    hi = np.ceil(p.max(axis=1) - 0.5).astype(np.int64)
    keep &= (hi[:, 0] >= 0) & (hi[:, 1] >= 0) & (lo[:, 0] < size) & (lo[:, 1] < size)
    lo = np.clip(lo, 0, size - 1)
    hi = np.clip(hi, 0, size - 1)

    for t in np.flatnonzero(keep):
        (x0, y0), (x1, y1), (x2, y2) = p[t]
        xs = np.arange(lo[t, 0], hi[t, 0] + 1) + 0.5
        ys = np.arange(lo[t, 1], hi[t, 1] + 1) + 0.5
        X, Y = np.meshgrid(xs, ys)
        A = area[t]
        # barycentric weights from edge functions, same orientation as `area`
        w0 = ((x2 - x1) * (y1 - Y) - (y1 - y2) * (X - x1)) / A
        w1 = ((x0 - x2) * (y2 - Y) - (y2 - y0) * (X - x2)) / A
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        i0, i1, i2 = tris[t]
        iw = w0 * inv_w[i0] + w1 * inv_w[i1] + w2 * inv_w[i2]
        rows = Y[inside].astype(np.int64)
        cols = X[inside].astype(np.int64)
        iw = iw[inside]
        nearer = iw > zbuf[rows, cols]
        if not nearer.any():
            continue
        rows, cols, iw = rows[nearer], cols[nearer], iw[nearer]
        b0 = w0[inside][nearer] * inv_w[i0] / iw
        b1 = w1[inside][nearer] * inv_w[i1] / iw
        b2 = 1.0 - b0 - b1
        zbuf[rows, cols] = iw
        out[rows, cols] = b0[:, None] * attrs[i0] + b1[:, None] * attrs[i1] + b2[:, None] * attrs[i2]
    return out, np.isfinite(zbuf)


def render_frontal(mesh: HeadMesh, cfg: RenderConfig, clamp: bool = True) -> np.ndarray:
    """Grayscale Lambert render; background is 0."""
    screen, depth = project(mesh.vertices, cfg)
    shade = lambert(vertex_normals(mesh.vertices, mesh.faces), cfg)
    img, _ = rasterize(screen, depth, triangles(mesh.faces), shade, cfg.image_size)
    img = img[..., 0]
    return np.clip(img, 0.0, 1.0) if clamp else img


# ---------------------------------------------------------------- alignment


@dataclass(frozen=True)
class FaceFrame:
    """Canonical landmark-aligned face image that all region boxes refer to."""

    size: int = 160
    face_height: float = 120.0  # landmark bounding-box height in pixels
    center: tuple = (80.0, 80.0)  # landmark bounding-box center (x, y)


def face_alignment(landmarks_px: np.ndarray, frame: FaceFrame) -> tuple[float, np.ndarray]:
    """Scale and offset mapping image pixels to canonical-frame pixels."""
    lo, hi = landmarks_px.min(axis=0), landmarks_px.max(axis=0)
    height = hi[1] - lo[1]
    if height <= 1e-9:
        raise RenderError("landmarks have no vertical extent")
    scale = frame.face_height / height
    offset = np.asarray(frame.center) - scale * (lo + hi) / 2.0
    return scale, offset


def align_face(image: np.ndarray, landmarks_px: np.ndarray, frame: FaceFrame) -> np.ndarray:
    """Resample a grayscale image so the landmark box lands on the canonical frame."""
    scale, offset = face_alignment(landmarks_px, frame)
    src = np.asarray(image, dtype=np.float64)
    if scale < 1.0:
        src = ndimage.gaussian_filter(src, sigma=0.5 * (1.0 / scale - 1.0), mode="constant")
    c = np.arange(frame.size) + 0.5
    X, Y = np.meshgrid(c, c)
    sx = (X - offset[0]) / scale - 0.5
    sy = (Y - offset[1]) / scale - 0.5
    out = ndimage.map_coordinates(src, [sy, sx], order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------- regions


@dataclass(frozen=True)
class RegionBoxes:
    """Pixel rectangles (left, top, width, height) in the canonical face frame."""

    eyes: tuple = (16, 32, 128, 48)
    nose: tuple = (48, 28, 64, 96)
    mouth: tuple = (32, 88, 96, 48)
    face: tuple = (16, 16, 128, 128)

    def box(self, region: str) -> tuple:
        return tuple(int(v) for v in getattr(self, region))

    def check(self, shape) -> None:
        h, w = shape[:2]
        for r in COMPARED_REGIONS:
            left, top, bw, bh = self.box(r)
            if bw < 1 or bh < 1 or left < 0 or top < 0 or left + bw > w or top + bh > h:
                raise RenderError(f"{r} box {self.box(r)} outside {w}x{h} image")


def crop_regions(image: np.ndarray, boxes: RegionBoxes) -> dict:
    boxes.check(image.shape)
    out = {}
    for r in COMPARED_REGIONS:
        left, top, bw, bh = boxes.box(r)
        out[r] = np.array(image[top:top + bh, left:left + bw])
    return out


def quantize(img: np.ndarray) -> np.ndarray:
    """Round to 8-bit levels, the precision region images are stored at."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


@dataclass
class RenderedRegionDB:
    model_ids: list
    regions: dict  # region -> (n, h, w) float array in [0, 1]

    def __len__(self):
        return len(self.model_ids)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for r in COMPARED_REGIONS:
            for mid, img in zip(self.model_ids, self.regions[r]):
                Image.fromarray(np.round(img * 255).astype(np.uint8), mode="L").save(out / f"{mid}_{r}.png")
        (out / "models.txt").write_text("\n".join(self.model_ids) + "\n")

    @classmethod
    def load(cls, out_dir) -> RenderedRegionDB:
        out = Path(out_dir)
        ids = (out / "models.txt").read_text().split()
        regions = {r: np.stack([read_gray(out / f"{mid}_{r}.png") for mid in ids]) for r in COMPARED_REGIONS}
        return cls(ids, regions)


def read_gray(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def landmark_pixels(mesh: HeadMesh, lmap: LandmarkVertexMap, cfg: RenderConfig) -> np.ndarray:
    px, _ = project(mesh.vertices[lmap.vertex_index], cfg)
    return px


def _region_images(args):
    mesh, cfg, boxes, lmap, frame = args
    img = render_frontal(mesh, cfg)
    if lmap is not None:
        img = align_face(img, landmark_pixels(mesh, lmap, cfg), frame)
    return {r: quantize(v) for r, v in crop_regions(img, boxes).items()}


def build_region_db(meshes, cfg: RenderConfig, boxes: RegionBoxes, lmap: LandmarkVertexMap | None = None,
                    frame: FaceFrame = FaceFrame(), model_ids=None, workers: int = 1) -> RenderedRegionDB:
    """Render every model once and cut the four comparison regions.

    With ``lmap`` each render is first aligned to the canonical face frame using
    the projected landmark vertices; otherwise boxes apply to the raw render.
    """
    if model_ids is None:
        model_ids = [f"{i:04d}" for i in range(len(meshes))]
    jobs = [(m, cfg, boxes, lmap, frame) for m in meshes]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            crops = list(pool.map(_region_images, jobs))
    else:
        crops = [_region_images(j) for j in jobs]
    regions = {r: np.stack([c[r] for c in crops]) for r in COMPARED_REGIONS}
    log.info("rendered %d models into region database", len(meshes))
    return RenderedRegionDB(list(model_ids), regions)
