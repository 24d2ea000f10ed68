"""Deterministic synthetic head database.

Heads share a sphere-like quad grid (two poles, 40 rings of 60 vertices) whose
spacing is concentrated on the face. A template with fixed facial features is
deformed per head by smooth, correspondence-preserving warps, so vertex ``i``
stays the same anatomical point across the database.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import ndimage

from .mesh import HeadMesh, LandmarkSet, LandmarkVertexMap, RegionMap, save_head_mesh, validate_database
from .morph import DEFAULT_SIGMA
from .render import RenderConfig, lambert, project, rasterize, render_frontal, triangles, vertex_normals
from .texture import TextureAtlas, UvLandmarks, write_rgb

log = logging.getLogger(__name__)

N_COLS = 60
N_RINGS = 40


# ---------------------------------------------------------------- grid


def _azimuth(c):
    s = (np.asarray(c, dtype=np.float64) - N_COLS / 2) / (N_COLS / 2)
    return np.pi * (0.45 * s + 0.55 * s ** 3)


def _polar(r):
    t = 2.0 * (np.asarray(r, dtype=np.float64) + 1) / (N_RINGS + 1) - 1.0
    return np.pi / 2 * (1.0 + 0.45 * t + 0.55 * t ** 3)


def grid_topology():
    """Faces, UVs and per-vertex (polar, azimuth) angles of the shared grid."""
    n_v = N_RINGS * N_COLS + 2
    top, bottom = 0, n_v - 1

    def ring(r, c):
        return 1 + r * N_COLS + (c % N_COLS)

    theta = np.empty(n_v)
    phi = np.empty(n_v)
    uv = np.empty((n_v, 2))
    theta[top], phi[top], uv[top] = 0.0, 0.0, (0.5, 1.0)
    theta[bottom], phi[bottom], uv[bottom] = np.pi, 0.0, (0.5, 0.0)
    for r in range(N_RINGS):
        for c in range(N_COLS):
            i = ring(r, c)
            theta[i], phi[i] = _polar(r), _azimuth(c)
            uv[i] = (c / N_COLS, 1.0 - (r + 1) / (N_RINGS + 1))

    faces = []
    for c in range(0, N_COLS, 2):
        faces.append((top, ring(0, c + 2), ring(0, c + 1), ring(0, c)))
    for r in range(N_RINGS - 1):
        for c in range(N_COLS):
            faces.append((ring(r, c), ring(r, c + 1), ring(r + 1, c + 1), ring(r + 1, c)))
    for c in range(0, N_COLS, 2):
        faces.append((bottom, ring(N_RINGS - 1, c), ring(N_RINGS - 1, c + 1), ring(N_RINGS - 1, c + 2)))
    faces = np.array(faces, dtype=np.int64)

    # orient every quad outward on the unit sphere
    d = _directions(theta, phi)
    a, b, cc, dd = (d[faces[:, k]] for k in range(4))
    n = np.cross(cc - a, dd - b)
    inward = np.einsum("ij,ij->i", n, (a + b + cc + dd)) < 0
    faces[inward] = faces[inward][:, ::-1]
    return faces, uv, theta, phi


def _directions(theta, phi):
    return np.column_stack([np.sin(theta) * np.sin(phi), np.cos(theta), np.sin(theta) * np.cos(phi)])


# ---------------------------------------------------------------- template features

_DEG = np.pi / 180.0


def template_landmark_angles() -> np.ndarray:
    """(polar, azimuth) in degrees for the 68 feature points on the template."""
    pts = []
    for beta in np.linspace(-np.pi / 2, np.pi / 2, 17):  # jaw, image left to right
        pts.append((88 + 45 * np.cos(beta), 72 * np.sin(beta)))
    for t in np.linspace(0, 1, 5):  # brows
        pts.append((70 - 3 * np.sin(np.pi * t), -48 + 36 * t))
    for t in np.linspace(0, 1, 5):
        pts.append((70 - 3 * np.sin(np.pi * t), 12 + 36 * t))
    for th in (78, 85, 92, 99):  # bridge
        pts.append((th, 0.0))
    for ph, th in ((-12, 104), (-6, 105), (0, 105.5), (6, 105), (12, 104)):  # nostrils
        pts.append((th, ph))
    eye = ((0, -7), (-2.2, -3), (-2.2, 3), (0, 7), (2.2, 3), (2.2, -3))
    for cx in (-25, 25):
        pts.extend((84 + dt, cx + dp) for dt, dp in eye)
    outer = ((-17, 114), (-11, 111.5), (-4, 110), (0, 110.5), (4, 110), (11, 111.5), (17, 114),
             (11, 117.5), (5, 119), (0, 119.3), (-5, 119), (-11, 117.5))
    inner = ((-13, 114), (-5, 113), (0, 113.2), (5, 113), (13, 114), (5, 115.3), (0, 115.5), (-5, 115.3))
    pts.extend((th, ph) for ph, th in outer + inner)
    return np.array(pts)


def _smoothstep(e0, e1, x):
    t = np.clip((x - e0) / (e1 - e0), 0.0, 1.0)
    return t * t * (3 - 2 * t)


def _gauss(th, ph, th0, ph0, sth, sph):
    return np.exp(-((th - th0) ** 2) / (2 * sth ** 2) - ((ph - ph0) ** 2) / (2 * sph ** 2))


def _feature_fields(theta, phi):
    """Radial displacement fields (model units) of the template's features, keyed by name."""
    th, ph = theta / _DEG, phi / _DEG
    up = _smoothstep(76, 100, th)
    nose = 0.30 * up * (1 - _smoothstep(100, 108, th)) * np.exp(-ph ** 2 / (2 * (2.5 + 4.5 * up) ** 2))
    nose += 0.05 * _gauss(th, ph, 103, 0, 3, 10)
    eyes = sum(-0.09 * _gauss(th, ph, 84, c, 5, 9) + 0.045 * _gauss(th, ph, 84, c, 2.5, 5) for c in (-25, 25))
    brows = 0.06 * _gauss(th, ph, 71, 0, 4, 60) * (1 - 0.6 * _gauss(th, ph, 71, 0, 10, 8))
    lips = 0.05 * _gauss(th, ph, 111.5, 0, 2.5, 12) + 0.05 * _gauss(th, ph, 117.5, 0, 2.5, 11)
    lips -= 0.03 * _gauss(th, ph, 114.3, 0, 1.0, 14)
    chin = 0.06 * _gauss(th, ph, 130, 0, 6, 14)
    cheeks = sum(0.04 * _gauss(th, ph, 95, c, 7, 10) for c in (-42, 42))
    return {"nose": nose, "eyes": eyes, "brows": brows, "lips": lips, "chin": chin, "cheeks": cheeks}


# ---------------------------------------------------------------- parameters


@dataclass(frozen=True)
class SyntheticHeadParams:
    head_width: float = 1.0
    head_height: float = 1.0
    head_depth: float = 1.0
    nose_length: float = 1.0
    nose_width: float = 1.0
    eye_spacing: float = 0.0
    eye_size: float = 0.0
    mouth_width: float = 1.0
    mouth_thickness: float = 1.0
    jaw_taper: float = 0.1

    BOUNDS = {
        "head_width": (0.92, 1.08),
        "head_height": (0.94, 1.06),
        "head_depth": (0.92, 1.08),
        "nose_length": (0.7, 1.3),
        "nose_width": (0.8, 1.25),
        "eye_spacing": (-0.035, 0.035),
        "eye_size": (-0.15, 0.15),
        "mouth_width": (0.85, 1.2),
        "mouth_thickness": (0.6, 1.4),
        "jaw_taper": (0.0, 0.25),
    }

    def __post_init__(self):
        for name, (lo, hi) in self.BOUNDS.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    @classmethod
    def sample(cls, rng: np.random.Generator) -> SyntheticHeadParams:
        return cls(**{f.name: float(rng.uniform(*cls.BOUNDS[f.name])) for f in fields(cls)})


BASE_RADII = np.array([0.78, 1.0, 0.92])


def _local_scale(xy, center, amount, radius):
    """Scale positions about ``center`` by ``1 + amount`` with Gaussian falloff."""
    off = xy - center
    g = np.exp(-np.sum(off ** 2, axis=1) / (2 * radius ** 2))
    return xy + off * (amount * g)[:, None]


def head_vertices(params: SyntheticHeadParams, theta, phi) -> np.ndarray:
    d = _directions(theta, phi)
    f = _feature_fields(theta, phi)
    radial = (f["nose"] * params.nose_length + f["eyes"] + f["brows"] + f["lips"] * params.mouth_thickness
              + f["chin"] + f["cheeks"])
    scale = BASE_RADII * [params.head_width, params.head_height, params.head_depth]
    v = d * scale + d * radial[:, None]

    xy = v[:, :2].copy()
    front = v[:, 2] > 0
    eye_y = np.cos(84 * _DEG) * scale[1]
    for sign in (-1, 1):
        c = np.array([sign * np.sin(25 * _DEG) * scale[0], eye_y])
        g = np.exp(-np.sum((xy - c) ** 2, axis=1) / (2 * 0.14 ** 2)) * front
        xy = _local_scale(xy, c, params.eye_size * front, 0.09)
        xy[:, 0] += sign * params.eye_spacing * g
    nose_c = np.array([0.0, np.cos(98 * _DEG) * scale[1]])
    g = np.exp(-np.sum((xy - nose_c) ** 2 / np.array([0.10, 0.16]) ** 2, axis=1) / 2) * front
    xy[:, 0] += (params.nose_width - 1.0) * (xy[:, 0] - nose_c[0]) * g
    mouth_c = np.array([0.0, np.cos(114.5 * _DEG) * scale[1]])
    g = np.exp(-np.sum((xy - mouth_c) ** 2 / np.array([0.22, 0.09]) ** 2, axis=1) / 2) * front
    xy[:, 0] += (params.mouth_width - 1.0) * (xy[:, 0] - mouth_c[0]) * g
    taper = _smoothstep(mouth_c[1], mouth_c[1] - 0.55, xy[:, 1])
    xy[:, 0] *= 1.0 - params.jaw_taper * taper
    v[:, :2] = xy
    return v


# ---------------------------------------------------------------- maps


def _nearest_unique(target_dirs: np.ndarray, vert_dirs: np.ndarray) -> np.ndarray:
    chosen = []
    taken = set()
    for t in target_dirs:
        order = np.argsort(np.linalg.norm(vert_dirs - t, axis=1), kind="stable")
        for i in order:
            if int(i) not in taken:
                taken.add(int(i))
                chosen.append(int(i))
                break
    return np.array(chosen)


def _box(th, ph, th_lo, th_hi, ph_lo, ph_hi):
    return (th >= th_lo) & (th <= th_hi) & (ph >= ph_lo) & (ph <= ph_hi)


def template_regions(theta, phi) -> RegionMap:
    th, ph = theta / _DEG, phi / _DEG
    eyes = _box(th, ph, 72, 95, -46, -8) | _box(th, ph, 72, 95, 8, 46)
    nose = _box(th, ph, 74, 109, -15, 15)
    mouth = _box(th, ph, 105.5, 127, -27, 27)
    face = _box(th, ph, 58, 142, -82, 82)
    n = len(theta)
    active = eyes | nose | mouth | face
    return RegionMap({
        "eyes": np.flatnonzero(eyes), "nose": np.flatnonzero(nose), "mouth": np.flatnonzero(mouth),
        "face": np.flatnonzero(face), "unused": np.setdiff1d(np.arange(n), np.flatnonzero(active)),
    })


def template_landmark_map(theta, phi) -> LandmarkVertexMap:
    ang = template_landmark_angles() * _DEG
    idx = _nearest_unique(_directions(ang[:, 0], ang[:, 1]), _directions(theta, phi))
    return LandmarkVertexMap(idx, DEFAULT_SIGMA)


def uv_landmarks_for(uv: np.ndarray, lmap: LandmarkVertexMap, margin: float = 0.06) -> UvLandmarks:
    pts = uv[lmap.vertex_index]
    lo, hi = pts.min(axis=0) - margin, pts.max(axis=0) + margin
    mid = (lo + hi) / 2
    anchors = np.array([
        [lo[0], lo[1]], [mid[0], lo[1]], [hi[0], lo[1]], [hi[0], mid[1]],
        [hi[0], hi[1]], [mid[0], hi[1]], [lo[0], hi[1]], [lo[0], mid[1]],
    ])
    anchors = np.clip(anchors, 0.0, 1.0)
    outline = pts[list(range(0, 17)) + list(range(26, 16, -1))]  # jaw then brows back
    centroid = outline.mean(axis=0)
    skin = centroid + 0.9 * (outline - centroid)
    return UvLandmarks(pts, anchors, skin)


# ---------------------------------------------------------------- textures


def _lerp_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear resampling matrix with end points aligned (as ``ndimage.zoom`` order 1)."""
    x = np.arange(n_out) * ((n_in - 1) / max(n_out - 1, 1))
    i0 = np.minimum(np.floor(x).astype(int), n_in - 2)
    frac = x - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] = 1.0 - frac
    m[np.arange(n_out), i0 + 1] = frac
    return m


def head_texture(rng: np.random.Generator, uvl: UvLandmarks, size: int) -> np.ndarray:
    """Procedural skin: tone + smooth gradient + low-frequency noise + darker feature patches."""
    tone = np.array([0.80, 0.62, 0.52]) + rng.uniform(-0.12, 0.08) + rng.uniform(-0.03, 0.03, 3)
    coarse = 64
    noise = ndimage.gaussian_filter(rng.normal(0, 1, (coarse, coarse, 3)), sigma=(2, 2, 0))
    up = _lerp_matrix(coarse, size)
    noise = np.stack([up @ noise[..., c] @ up.T for c in range(3)], axis=2)
    c = (np.arange(size) + 0.5) / size
    tex = tone + 0.05 * (0.5 - c)[:, None, None] + 0.03 * noise
    pts = uvl.points * [size, size]
    pts[:, 1] = size - pts[:, 1]

    def blob(center, sx, sy, color, strength):
        # separable Gaussian pull toward `color`, evaluated within 5 sigma (beyond that it is < 1/255)
        x0, x1 = np.clip([int(center[0] - 5 * sx), int(center[0] + 5 * sx) + 1], 0, size)
        y0, y1 = np.clip([int(center[1] - 5 * sy), int(center[1] + 5 * sy) + 1], 0, size)
        gx = np.exp(-((np.arange(x0, x1) + 0.5 - center[0]) ** 2) / (2 * sx ** 2))
        gy = np.exp(-((np.arange(y0, y1) + 0.5 - center[1]) ** 2) / (2 * sy ** 2))
        win = tex[y0:y1, x0:x1]
        win += strength * np.outer(gy, gx)[..., None] * (np.asarray(color) - win)

    s = size / 2048
    for grp in (range(36, 42), range(42, 48)):
        blob(pts[list(grp)].mean(axis=0), 40 * s, 18 * s, (0.25, 0.2, 0.2), 0.6)
    for grp in (range(17, 22), range(22, 27)):
        blob(pts[list(grp)].mean(axis=0), 70 * s, 14 * s, (0.3, 0.22, 0.18), 0.5)
    blob(pts[48:60].mean(axis=0), 75 * s, 28 * s, (0.65, 0.3, 0.3), 0.6)
    return np.clip(tex, 0.0, 1.0)


def sample_texture(tex: np.ndarray, uv: np.ndarray) -> np.ndarray:
    size = tex.shape[0]
    ix = uv[:, 0] * size - 0.5
    iy = (1.0 - uv[:, 1]) * size - 0.5
    return np.column_stack([ndimage.map_coordinates(tex[..., c], [iy, ix], order=1, mode="nearest")
                            for c in range(3)])


# ---------------------------------------------------------------- database


def template_mesh() -> HeadMesh:
    faces, uv, theta, phi = grid_topology()
    return HeadMesh(head_vertices(SyntheticHeadParams(), theta, phi), faces, uv)


def gen_synthetic_db(seed: int, count: int, out_dir, texture_size: int = 2048) -> Path:
    """Write ``count`` heads plus maps and an average texture; deterministic per (seed, count)."""
    if count < 2:
        raise ValueError("need at least two heads")
    out = Path(out_dir)
    (out / "meshes").mkdir(parents=True, exist_ok=True)
    (out / "textures").mkdir(exist_ok=True)
    faces, uv, theta, phi = grid_topology()
    regions = template_regions(theta, phi)
    lmap = template_landmark_map(theta, phi)
    uvl = uv_landmarks_for(uv, lmap)
    rng = np.random.default_rng(seed)
    meshes, params, ids = [], [], []
    tex_sum = np.zeros((texture_size, texture_size, 3))
    for i in range(count):
        p = SyntheticHeadParams.sample(rng)
        mesh = HeadMesh(head_vertices(p, theta, phi), faces, uv)
        mid = f"{i:04d}"
        save_head_mesh(mesh, out / "meshes" / f"{mid}.obj")
        tex = head_texture(rng, uvl, texture_size)
        write_rgb(tex, out / "textures" / f"{mid}.png")
        tex_sum += np.round(tex * 255) / 255
        meshes.append(mesh)
        params.append(asdict(p))
        ids.append(mid)
    report = validate_database(meshes, regions, lmap)
    if not report.ok:
        raise RuntimeError("generated database failed validation: " + "; ".join(report.failures()))
    regions.save(out / "regions.json")
    lmap.save(out / "landmarks.json")
    uvl.save(out / "uv_landmarks.json")
    TextureAtlas(np.clip(tex_sum / count, 0, 1)).save(out / "average_texture.png")
    manifest = {"seed": seed, "count": count, "models": ids, "params": params,
                "n_vertices": meshes[0].n_vertices, "n_faces": meshes[0].n_faces}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    log.info("wrote synthetic database of %d heads to %s", count, out)
    return out


# ---------------------------------------------------------------- synthetic input frames


def rotate_yaw(vertices: np.ndarray, yaw_deg: float) -> np.ndarray:
    """Rotate about the vertical axis; positive yaw turns the face toward +X."""
    if yaw_deg == 0:
        return np.array(vertices)
    a = np.radians(yaw_deg)
    rot = np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])
    return vertices @ rot.T


def render_input_frame(mesh: HeadMesh, lmap: LandmarkVertexMap, cfg: RenderConfig, yaw: float = 0.0,
                       texture: np.ndarray | None = None, frame_id: str = "frame"):
    """RGB frame and its landmark set for a head turned by ``yaw``.

    Without ``texture`` the frame is the grayscale comparison render replicated
    to three channels; with it, vertex colors sampled from the texture are shaded.
    """
    moved = mesh.with_vertices(rotate_yaw(mesh.vertices, yaw))
    if texture is None:
        img = np.repeat(render_frontal(moved, cfg)[..., None], 3, axis=2)
    else:
        screen, depth = project(moved.vertices, cfg)
        shade = lambert(vertex_normals(moved.vertices, moved.faces), cfg)
        colors = sample_texture(texture, moved.uv_coords) * shade[:, None]
        img, _ = rasterize(screen, depth, triangles(moved.faces), colors, cfg.image_size)
        img = np.clip(img, 0.0, 1.0)
    px, _ = project(moved.vertices[lmap.vertex_index], cfg)
    pts = np.clip(px / cfg.image_size, 0.0, 1.0)
    return img, LandmarkSet(pts, (yaw, 0.0, 0.0), frame_id)


def write_input(mesh: HeadMesh, lmap: LandmarkVertexMap, cfg: RenderConfig, out_dir,
                yaws=(-30.0, 0.0, 30.0), texture: np.ndarray | None = None) -> Path:
    """Frames ``<id>.png`` and landmark files ``<id>.json`` for a set of yaws."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for yaw in yaws:
        fid = f"yaw{int(round(yaw)):+04d}"
        img, lms = render_input_frame(mesh, lmap, cfg, yaw, texture, fid)
        write_rgb(img, out / f"{fid}.png")
        lms.save(out / f"{fid}.json")
    return out
