"""Landmark-driven X/Y morphing of the blended head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import N_LANDMARKS, HeadMesh, LandmarkSet, LandmarkVertexMap

# 0-based feature groups (68-point layout)
JAW = tuple(range(0, 17))
BROWS = tuple(range(17, 27))
NOSE = tuple(range(27, 36))
NOSTRILS = tuple(range(31, 36))
EYES = tuple(range(36, 48))
MOUTH = tuple(range(48, 68))
MOUTH_CORNERS = (48, 54, 60, 64)

DEFAULT_SIGMA = np.concatenate([
    np.full(17, 2.0), np.full(10, 1.2), np.full(9, 0.8), np.full(12, 0.5), np.full(20, 0.6),
])


def _mask(indices) -> tuple:
    m = np.zeros(N_LANDMARKS, dtype=bool)
    m[list(indices)] = True
    return tuple(m.tolist())


def _default_masks():
    everything = _mask(range(N_LANDMARKS))
    no_jaw = _mask(i for i in range(N_LANDMARKS) if i not in JAW)
    details = _mask(EYES + NOSTRILS + MOUTH_CORNERS)
    return (everything, no_jaw, details)


@dataclass(frozen=True)
class MorphSchedule:
    k_values: tuple = (1.0, 0.45, 0.2)
    masks: tuple = field(default_factory=_default_masks)

    def __post_init__(self):
        if len(self.k_values) < 1 or len(self.k_values) != len(self.masks):
            raise ValueError("need one feature mask per pass and at least one pass")
        if any(k <= 0 for k in self.k_values):
            raise ValueError("k values must be positive")
        if any(len(m) != N_LANDMARKS or not any(m) for m in self.masks):
            raise ValueError(f"each mask must have {N_LANDMARKS} entries with at least one active")


def awf(d, sigma, k):
    """Adjustment weight: ~0.97 at d = 0, 0.5 at d = sigma²·k/2, -> 0 far away."""
    d = np.asarray(d, dtype=np.float64)
    z = (-d / (np.asarray(sigma) ** 2 * k) + 0.5) * 7.0
    # 1 - 1/(1 + e^z) written as a logistic that cannot overflow
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


def landmarks_to_model_frame(landmarks: LandmarkSet, mesh: HeadMesh, lmap: LandmarkVertexMap) -> np.ndarray:
    """Least-squares scale + translation from normalized image points to model X/Y.

    Image y grows downward, so points are flipped before fitting.
    """
    p = np.column_stack([landmarks.points[:, 0], 1.0 - landmarks.points[:, 1]])
    q = mesh.vertices[lmap.vertex_index, :2]
    pc = p - p.mean(axis=0)
    qc = q - q.mean(axis=0)
    sv = np.linalg.svd(pc, compute_uv=False)
    if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise ValueError("degenerate landmark spread (coincident or collinear points)")
    scale = np.sum(pc * qc) / np.sum(pc * pc)
    return scale * pc + q.mean(axis=0)


def morph_pass(mesh: HeadMesh, targets: np.ndarray, lmap: LandmarkVertexMap, k: float, mask=None) -> HeadMesh:
    active = np.ones(N_LANDMARKS, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    idx = lmap.vertex_index[active]
    F = np.asarray(targets, dtype=np.float64)[active]
    sigma = lmap.sigma[active]
    verts = mesh.vertices
    xy = verts[:, :2]
    f = F - xy[idx]  # (m, 2)
    d = np.linalg.norm(F[None, :, :] - xy[:, None, :], axis=2)  # (V, m)
    w = awf(d, sigma[None, :], k)
    s = w @ f
    r = w.sum(axis=1)
    step = np.where((r > 1.0)[:, None], s / np.maximum(r, 1.0)[:, None], s)
    out = np.array(verts)
    out[:, :2] = xy + step
    return mesh.with_vertices(out)


def morph(mesh: HeadMesh, landmarks: LandmarkSet, lmap: LandmarkVertexMap,
          schedule: MorphSchedule = MorphSchedule()) -> HeadMesh:
    """Apply the morph passes in order; targets are fixed from the input mesh."""
    targets = landmarks_to_model_frame(landmarks, mesh, lmap)
    for k, m in zip(schedule.k_values, schedule.masks):
        mesh = morph_pass(mesh, targets, lmap, k, m)
    return mesh
