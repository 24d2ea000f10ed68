"""Fixed-topology quad head meshes, region index sets and landmark maps.

Every mesh in a database shares vertex count, vertex ordering, faces and
UV coordinates, so vertex ``i`` is the same anatomical point in every head.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

REGIONS = ("eyes", "nose", "mouth", "face", "unused")
ACTIVE_REGIONS = ("eyes", "nose", "mouth", "face")
N_LANDMARKS = 68


class MeshFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HeadMesh:
    """Quad mesh with one UV coordinate per vertex.

    Axes are frontal-aligned: +X right, +Y up, +Z toward the camera.
    """

    vertices: np.ndarray  # (V, 3) float64
    faces: np.ndarray  # (F, 4) int64, 0-based
    uv_coords: np.ndarray  # (V, 2) float64 in [0, 1]

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        f = np.array(self.faces, dtype=np.int64)
        uv = np.array(self.uv_coords, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshFormatError(f"vertices must be (V, 3), got {v.shape}")
        if f.size == 0:
            f = f.reshape(0, 4)
        if f.ndim != 2 or f.shape[1] != 4:
            raise MeshFormatError(f"non-quadrilateral face: faces must be (F, 4), got {f.shape}")
        if uv.shape != (len(v), 2):
            raise MeshFormatError(f"UV count mismatch: {uv.shape[0] if uv.ndim else 0} UVs for {len(v)} vertices")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshFormatError(f"face index out of range [0, {len(v)})")
        for name, arr in (("vertices", v), ("faces", f), ("uv_coords", uv)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices: np.ndarray) -> HeadMesh:
        """Same topology and UVs, new positions."""
        return HeadMesh(vertices, self.faces, self.uv_coords)

    def same_topology(self, other: HeadMesh) -> bool:
        return (
            self.n_vertices == other.n_vertices
            and np.array_equal(self.faces, other.faces)
            and np.array_equal(self.uv_coords, other.uv_coords)
        )

    def __eq__(self, other):
        if not isinstance(other, HeadMesh):
            return NotImplemented
        return self.same_topology(other) and np.array_equal(self.vertices, other.vertices)

    __hash__ = None


def _fmt(x: float) -> str:
    return repr(float(x))


def save_head_mesh(mesh: HeadMesh, path) -> None:
    """Write ``v``/``vt``/``f`` lines; output is byte-stable for equal meshes."""
    lines = [f"v {_fmt(x)} {_fmt(y)} {_fmt(z)}" for x, y, z in mesh.vertices]
    lines += [f"vt {_fmt(u)} {_fmt(v)}" for u, v in mesh.uv_coords]
    for quad in mesh.faces + 1:
        lines.append("f " + " ".join(f"{i}/{i}" for i in quad))
    Path(path).write_text("\n".join(lines) + "\n")


def load_head_mesh(path) -> HeadMesh:
    verts, uvs, faces = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(t) for t in parts[1:4]])
                elif tag == "vt":
                    uvs.append([float(t) for t in parts[1:3]])
                elif tag == "f":
                    refs = parts[1:]
                    if len(refs) != 4:
                        raise MeshFormatError(f"line {lineno}: non-quadrilateral face ({len(refs)} vertices)")
                    quad = []
                    for ref in refs:
                        vi, _, ti = ref.partition("/")
                        ti = ti.split("/")[0]
                        if ti and ti != vi:
                            raise MeshFormatError(f"line {lineno}: vertex index {vi} != UV index {ti}")
                        quad.append(int(vi) - 1)
                    faces.append(quad)
            except ValueError as exc:
                if isinstance(exc, MeshFormatError):
                    raise
                raise MeshFormatError(f"line {lineno}: cannot parse {line.strip()!r}") from exc
    mesh = HeadMesh(
        np.array(verts, dtype=np.float64).reshape(-1, 3),
        np.array(faces, dtype=np.int64).reshape(-1, 4),
        np.array(uvs, dtype=np.float64).reshape(-1, 2),
    )
    log.debug("loaded %s: %d vertices, %d faces", path, mesh.n_vertices, mesh.n_faces)
    return mesh


@dataclass(frozen=True)
class RegionMap:
    """Vertex-index sets for the five model regions."""

    region_indices: dict

    def __post_init__(self):
        missing = set(REGIONS) - set(self.region_indices)
        if missing:
            raise ValueError(f"region map missing {sorted(missing)}")
        clean = {}
        for name in REGIONS:
            idx = np.unique(np.asarray(self.region_indices[name], dtype=np.int64))
            idx.setflags(write=False)
            clean[name] = idx
        object.__setattr__(self, "region_indices", clean)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.region_indices[name]

    def overlap(self, a, b) -> np.ndarray:
        """Indices shared by two regions (or unions of regions)."""
        return np.intersect1d(self._union(a), self._union(b))

    def _union(self, names) -> np.ndarray:
        if isinstance(names, str):
            return self[names]
        return np.unique(np.concatenate([self[n] for n in names]))

    def check_cover(self, n_vertices: int) -> list[str]:
        problems = []
        allidx = np.unique(np.concatenate([self[n] for n in REGIONS]))
        if len(allidx) != n_vertices or (n_vertices and (allidx[0] != 0 or allidx[-1] != n_vertices - 1)):
            problems.append("regions do not cover every vertex exactly once or more")
        for n in REGIONS:
            if len(self[n]) and (self[n][0] < 0 or self[n][-1] >= n_vertices):
                problems.append(f"region {n!r} has indices outside [0, {n_vertices})")
        active = np.unique(np.concatenate([self[n] for n in ACTIVE_REGIONS]))
        expected_unused = np.setdiff1d(np.arange(n_vertices), active)
        if not np.array_equal(self["unused"], expected_unused):
            problems.append("'unused' is not the complement of the active regions")
        if len(self.overlap("eyes", "mouth")):
            problems.append("eyes and mouth regions overlap")
        if not len(self.overlap("nose", "face")):
            problems.append("nose and face regions do not overlap")
        for r in ("eyes", "mouth"):
            if not len(self.overlap(r, ("nose", "face"))):
                problems.append(f"{r} region does not overlap nose or face")
        return problems

    def to_json(self) -> dict:
        return {n: self[n].tolist() for n in REGIONS}

    @classmethod
    def from_json(cls, data: dict) -> RegionMap:
        return cls({n: data[n] for n in REGIONS})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> RegionMap:
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class LandmarkVertexMap:
    """Mesh vertex and drop-off value for each of the 68 feature points."""

    vertex_index: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        idx = np.array(self.vertex_index, dtype=np.int64)
        sig = np.array(self.sigma, dtype=np.float64)
        if idx.shape != (N_LANDMARKS,) or sig.shape != (N_LANDMARKS,):
            raise ValueError(f"need {N_LANDMARKS} indices and sigmas, got {idx.shape}, {sig.shape}")
        if len(np.unique(idx)) != N_LANDMARKS:
            raise ValueError("landmark vertex indices must be distinct")
        if np.any(idx < 0):
            raise ValueError("negative landmark vertex index")
        if not np.all(sig > 0):
            raise ValueError("sigma must be positive")
        idx.setflags(write=False)
        sig.setflags(write=False)
        object.__setattr__(self, "vertex_index", idx)
        object.__setattr__(self, "sigma", sig)

    def save(self, path) -> None:
        data = {"vertex_index": self.vertex_index.tolist(), "sigma": self.sigma.tolist()}
        Path(path).write_text(json.dumps(data))

    @classmethod
    def load(cls, path) -> LandmarkVertexMap:
        data = json.loads(Path(path).read_text())
        return cls(data["vertex_index"], data["sigma"])


@dataclass(frozen=True)
class LandmarkSet:
    """68 image points normalized to [0, 1]² (y grows downward) plus head pose."""

    points: np.ndarray
    rotation: tuple = (0.0, 0.0, 0.0)  # yaw, pitch, roll in degrees
    frame_id: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        if pts.shape != (N_LANDMARKS, 2):
            raise ValueError(f"expected {N_LANDMARKS} 2D points, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)) or pts.min() < 0.0 or pts.max() > 1.0:
            raise ValueError("landmark coordinates must lie in [0, 1]")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "rotation", tuple(float(r) for r in self.rotation))

    @property
    def yaw(self) -> float:
        return self.rotation[0]

    def to_json(self) -> dict:
        yaw, pitch, roll = self.rotation
        return {"frame_id": self.frame_id, "yaw": yaw, "pitch": pitch, "roll": roll,
                "points": self.points.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> LandmarkSet:
        return cls(data["points"], (data.get("yaw", 0.0), data.get("pitch", 0.0), data.get("roll", 0.0)),
                   str(data.get("frame_id", "")))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> LandmarkSet:
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ValidationReport:
    checks: dict = field(default_factory=dict)  # name -> list of failure messages

    @property
    def ok(self) -> bool:
        return not any(self.checks.values())

    def failures(self) -> list[str]:
        return [f"{name}: {msg}" for name, msgs in self.checks.items() for msg in msgs]


def validate_database(meshes, regions: RegionMap, lmap: LandmarkVertexMap) -> ValidationReport:
    """Check that a database shares topology and that all maps fit it."""
    if not meshes:
        raise ValueError("empty database")
    ref = meshes[0]
    report = ValidationReport({"vertex_count": [], "faces": [], "uv_coords": [], "regions": [], "landmarks": []})
    for i, m in enumerate(meshes):
        if m.n_vertices != ref.n_vertices:
            report.checks["vertex_count"].append(f"mesh {i} has {m.n_vertices} vertices, expected {ref.n_vertices}")
            continue
        if not np.array_equal(m.faces, ref.faces):
            report.checks["faces"].append(f"mesh {i} face list differs from mesh 0")
        if not np.array_equal(m.uv_coords, ref.uv_coords):
            report.checks["uv_coords"].append(f"mesh {i} UV coordinates differ from mesh 0")
    report.checks["regions"] = regions.check_cover(ref.n_vertices)
    bad = lmap.vertex_index[lmap.vertex_index >= ref.n_vertices]
    if len(bad):
        report.checks["landmarks"].append(f"landmark vertex indices {bad.tolist()} out of range [0, {ref.n_vertices})")
    return report
