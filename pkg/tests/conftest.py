import numpy as np
import pytest

from regionface.mesh import HeadMesh
from regionface.synth import gen_synthetic_db


def quad_mesh(z=0.0, half=1.0, flip=False):
    """One square quad in the plane z, facing +Z unless flipped."""
    v = np.array([[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]])
    f = np.array([[0, 1, 2, 3]])
    if flip:
        f = f[:, ::-1]
    uv = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return HeadMesh(v, f, uv)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_db(tmp_path_factory):
    """Four synthetic heads with small textures, shared by the fast tests."""
    out = tmp_path_factory.mktemp("db4")
    gen_synthetic_db(3, 4, out, texture_size=256)
    return out


@pytest.fixture(scope="session")
def db32(tmp_path_factory):
    """32-head synthetic database used by the self-recovery and runtime checks."""
    out = tmp_path_factory.mktemp("db32")
    gen_synthetic_db(7, 32, out, texture_size=2048)
    return out


def grid_mesh(n=12, spacing=1.0, z=None):
    """Flat n x n vertex grid of (n-1)^2 quads; optional per-vertex z."""
    ys, xs = np.mgrid[0:n, 0:n] * spacing
    zs = np.zeros_like(xs) if z is None else z
    v = np.column_stack([xs.ravel(), ys.ravel(), np.ravel(zs)]).astype(float)
    idx = np.arange(n * n).reshape(n, n)
    f = np.column_stack([idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel(), idx[1:, 1:].ravel(), idx[1:, :-1].ravel()])
    uv = v[:, :2] / max(v[:, :2].max(), 1e-12)
    return HeadMesh(v, f, uv)
