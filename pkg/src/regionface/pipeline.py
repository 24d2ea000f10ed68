"""End-to-end reconstruction: region selection, blending, morphing and texturing."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .blend import build_blended_model
from .config import PipelineConfig
from .mesh import HeadMesh, LandmarkSet, LandmarkVertexMap, RegionMap, load_head_mesh, save_head_mesh
from .morph import morph
from .render import (COMPARED_REGIONS, RenderedRegionDB, align_face, build_region_db, crop_regions,
                     quantize)
from .similarity import REGION_METHODS, load_pca, region_errors, region_model, save_pca, select_weights
from .texture import TextureAtlas, UvLandmarks, build_texture, read_rgb

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@contextmanager
def stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


@dataclass
class Database:
    path: Path
    model_ids: list
    meshes: list
    regions: RegionMap
    lmap: LandmarkVertexMap
    uv: UvLandmarks

    @classmethod
    def load(cls, path) -> Database:
        path = Path(path)
        files = sorted((path / "meshes").glob("*.obj"))
        if len(files) < 2:
            raise FileNotFoundError(f"{path}/meshes holds fewer than two meshes")
        return cls(path, [f.stem for f in files], [load_head_mesh(f) for f in files],
                   RegionMap.load(path / "regions.json"), LandmarkVertexMap.load(path / "landmarks.json"),
                   UvLandmarks.load(path / "uv_landmarks.json"))

    def average_texture(self, size: int) -> TextureAtlas:
        px = read_rgb(self.path / "average_texture.png")
        if px.shape[0] != size:
            px = ndimage.zoom(px, (size / px.shape[0], size / px.shape[1], 1), order=1)
        return TextureAtlas(np.clip(px, 0.0, 1.0))


def load_frames(frames_dir, landmarks_dir=None) -> tuple[dict, list]:
    """Frames ``<id>.png`` with landmark files ``<id>.json`` (same or separate directory)."""
    frames_dir = Path(frames_dir)
    landmarks_dir = Path(landmarks_dir) if landmarks_dir else frames_dir
    lm_files = sorted(landmarks_dir.glob("*.json"))
    if not lm_files:
        raise FileNotFoundError(f"no landmark files in {landmarks_dir}")
    landmark_sets, frames = [], {}
    for f in lm_files:
        lms = LandmarkSet.load(f)
        if not lms.frame_id:
            lms = LandmarkSet(lms.points, lms.rotation, f.stem)
        img = frames_dir / f"{lms.frame_id}.png"
        if not img.exists():
            raise FileNotFoundError(f"frame image {img} for landmark file {f.name} is missing")
        frames[lms.frame_id] = read_rgb(img)
        landmark_sets.append(lms)
    return frames, landmark_sets


def frontal_frame(landmark_sets) -> LandmarkSet:
    """Frame with the smallest yaw² + pitch² + roll² (first one on ties)."""
    return min(landmark_sets, key=lambda lm: sum(r * r for r in lm.rotation))


def input_regions(frame: np.ndarray, landmarks: LandmarkSet, cfg: PipelineConfig) -> dict:
    """Grayscale, landmark-aligned region crops at database precision."""
    gray = frame @ LUMA if frame.ndim == 3 else frame
    h, w = gray.shape
    aligned = align_face(gray, landmarks.points * [w, h], cfg.face_frame)
    return {r: quantize(v) for r, v in crop_regions(aligned, cfg.regions).items()}


def _region_fingerprint(cfg: PipelineConfig, model_ids) -> str:
    blob = json.dumps([asdict(cfg.render), asdict(cfg.face_frame), asdict(cfg.regions), list(model_ids)],
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def fit_region_models(rdb: RenderedRegionDB, cfg: PipelineConfig) -> dict:
    return {r: region_model(REGION_METHODS[r], rdb.regions[r], cfg.lbp, None, cfg.pca_variance, cfg.pca_cap)
            for r in COMPARED_REGIONS}


def write_region_db(db: Database, cfg: PipelineConfig, out_dir) -> RenderedRegionDB:
    """Render the region database and its fitted models to ``out_dir``."""
    out = Path(out_dir)
    rdb = build_region_db(db.meshes, cfg.render, cfg.regions, db.lmap, cfg.face_frame, db.model_ids, cfg.workers)
    rdb.save(out)
    for r, m in fit_region_models(rdb, cfg).items():
        if m is not None:
            save_pca(m, out / f"{r}.pca")
    (out / "meta.json").write_text(json.dumps({"fingerprint": _region_fingerprint(cfg, db.model_ids)}))
    return rdb


def load_region_db(db: Database, cfg: PipelineConfig, regions_dir=None) -> tuple[RenderedRegionDB, dict]:
    if regions_dir is not None:
        rd = Path(regions_dir)
        meta = json.loads((rd / "meta.json").read_text()) if (rd / "meta.json").exists() else {}
        if meta.get("fingerprint") == _region_fingerprint(cfg, db.model_ids):
            rdb = RenderedRegionDB.load(rd)
            models = {r: (load_pca(rd / f"{r}.pca") if REGION_METHODS[r] != "ssim" else None)
                      for r in COMPARED_REGIONS}
            return rdb, models
        log.warning("region database %s does not match the current config; rebuilding in memory", rd)
    rdb = build_region_db(db.meshes, cfg.render, cfg.regions, db.lmap, cfg.face_frame, db.model_ids, cfg.workers)
    return rdb, fit_region_models(rdb, cfg)


@dataclass
class PipelineResult:
    mesh: HeadMesh
    texture: TextureAtlas | None
    report: dict


def run_pipeline(cfg: PipelineConfig, input_dir, out_dir=None, regions_dir=None, landmarks_dir=None,
                 texture: bool = True) -> PipelineResult:
    """Reconstruct a head from input frames + landmarks against the database in ``cfg.db``.

    Writes ``head.obj``, ``texture.png`` and ``report.json`` when ``out_dir`` is given.
    """
    timings: dict = {}
    report: dict = {"timings": timings}

    with stage("feature input", timings):
        frames, landmark_sets = load_frames(input_dir, landmarks_dir)
        lms = frontal_frame(landmark_sets)
        report["frontal_frame"] = lms.frame_id

    with stage("database", timings):
        if cfg.db is None:
            raise ValueError("no database directory configured")
        db = Database.load(cfg.db)
        lmap = db.lmap if cfg.sigma is None else LandmarkVertexMap(db.lmap.vertex_index, cfg.sigma)

    with stage("region database", timings):
        rdb, models = load_region_db(db, cfg, regions_dir)

    with stage("region extraction", timings):
        crops = input_regions(frames[lms.frame_id], lms, cfg)

    selection, region_report = {}, {}
    with stage("similarity", timings):
        for r in COMPARED_REGIONS:
            method = REGION_METHODS[r]
            err = region_errors(method, rdb.regions[r], crops[r], models[r], cfg.lbp)
            w = select_weights(err, cfg.top_n)
            selection[r] = (db.meshes, w)
            region_report[r] = {
                "method": method,
                "selected": [db.model_ids[i] for i in w.support],
                "weights": [float(w.weights[i]) for i in w.support],
                "errors": err.errors.tolist(),
            }
        report["regions"] = region_report

    with stage("blend", timings):
        blended = build_blended_model(selection, db.regions, cfg.blend)

    with stage("morph", timings):
        mesh = morph(blended, lms, lmap, cfg.morph)

    atlas = None
    if texture:
        with stage("texture", timings):
            avg = db.average_texture(cfg.texture.atlas_size)
            atlas, tex_info = build_texture(frames, landmark_sets, db.uv, avg, cfg.texture.feather)
            report["texture"] = tex_info

    if out_dir is not None:
        with stage("write", timings):
            write_outputs(Path(out_dir), mesh, atlas, report)
    return PipelineResult(mesh, atlas, report)


def write_outputs(out: Path, mesh: HeadMesh, atlas: TextureAtlas | None, report: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        save_head_mesh(mesh, out / "head.obj")
        written.append(out / "head.obj")
        if atlas is not None:
            atlas.save(out / "texture.png")
            written.append(out / "texture.png")
        (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    except Exception:
        for f in written:
            f.unlink(missing_ok=True)
        raise


def run_texture(cfg: PipelineConfig, frames_dir, landmarks_dir, out_path) -> TextureAtlas:
    timings: dict = {}
    with stage("feature input", timings):
        frames, landmark_sets = load_frames(frames_dir, landmarks_dir)
    with stage("texture", timings):
        db_path = Path(cfg.db)
        uv = UvLandmarks.load(db_path / "uv_landmarks.json")
        avg = Database(db_path, [], [], None, None, uv).average_texture(cfg.texture.atlas_size)
        atlas, _ = build_texture(frames, landmark_sets, uv, avg, cfg.texture.feather)
    with stage("write", timings):
        atlas.save(out_path)
    return atlas
