"""Region similarity measures (PCA scores, SSIM, uniform LBP) and blend weights."""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

METHODS = ("pca", "ssim", "lbp")

# region -> measure used to compare it
REGION_METHODS = {"mouth": "ssim", "nose": "ssim", "eyes": "lbp", "face": "pca"}


# ---------------------------------------------------------------- PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (retained, D), orthonormal rows
    training_scores: np.ndarray  # (n, retained)
    explained_variance: np.ndarray  # (retained,)
    shape: tuple

    @property
    def retained(self) -> int:
        return len(self.components)


def _n_for_variance(var: np.ndarray, fraction: float, cap: int) -> int:
    total = var.sum()
    if total <= 0:
        return 0
    n = int(np.searchsorted(np.cumsum(var) / total, fraction - 1e-12) + 1)
    return min(n, cap, len(var))


def pca_fit(images, retained: int | None = None, variance: float = 0.95, cap: int = 50) -> PcaModel:
    """Fit a PCA basis to same-size images (or feature vectors).

    ``retained=None`` keeps the smallest count explaining ``variance`` of the
    total, at most ``cap``. Requests above the data rank are clamped.
    """
    arrs = [np.asarray(im, dtype=np.float64) for im in images]
    if len(arrs) < 2:
        raise ValueError("PCA needs at least two images")
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValueError("all images must share dimensions")
    X = np.stack([a.ravel() for a in arrs])
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    tol = np.linalg.norm(X) * max(X.shape) * np.finfo(np.float64).eps
    rank = int(np.sum(s > tol))
    var = s[:rank] ** 2 / (len(X) - 1)
    if retained is None:
        retained = _n_for_variance(var, variance, cap)
    elif retained > rank:
        warnings.warn(f"retained={retained} exceeds data rank {rank}; clamping", stacklevel=2)
        retained = rank
    comps = vt[:retained].copy()
    # deterministic sign: largest-magnitude entry of each component is positive
    if retained:
        flip = np.sign(comps[np.arange(retained), np.abs(comps).argmax(axis=1)])
        comps *= flip[:, None]
    scores = Xc @ comps.T
    return PcaModel(mean, comps, scores, var[:retained], tuple(shape))


def pca_score(model: PcaModel, image) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.shape != model.shape:
        raise ValueError(f"image shape {x.shape} does not match PCA training shape {model.shape}")
    return model.components @ (x.ravel() - model.mean)


def save_pca(model: PcaModel, path) -> None:
    """Binary sidecar: one JSON header line, then float64 mean/components/scores/variances."""
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                       for a in (model.mean, model.components, model.training_scores, model.explained_variance))
    header = {
        "dims": list(model.shape),
        "n_training": int(model.training_scores.shape[0]),
        "retained": model.retained,
        "dtype": "<f8",
        "checksum": hashlib.sha256(payload).hexdigest(),
    }
    Path(path).write_bytes(json.dumps(header, sort_keys=True).encode() + b"\n" + payload)


def load_pca(path) -> PcaModel:
    raw = Path(path).read_bytes()
    head, _, payload = raw.partition(b"\n")
    header = json.loads(head)
    if hashlib.sha256(payload).hexdigest() != header["checksum"]:
        raise ValueError(f"{path}: PCA checksum mismatch")
    shape = tuple(header["dims"])
    d, n, r = int(np.prod(shape)), header["n_training"], header["retained"]
    flat = np.frombuffer(payload, dtype="<f8")
    sizes = [d, r * d, n * r, r]
    if len(flat) != sum(sizes):
        raise ValueError(f"{path}: payload size does not match header")
    parts = np.split(flat.astype(np.float64), np.cumsum(sizes)[:-1])
    return PcaModel(parts[0], parts[1].reshape(r, d), parts[2].reshape(n, r), parts[3], shape)


# ---------------------------------------------------------------- SSIM

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    m = len(g) // 2
    y = ndimage.correlate1d(ndimage.correlate1d(x, g, axis=0), g, axis=1)
    return y[m:-m, m:-m] if m else y


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over all fully contained 11x11 Gaussian windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(smap.mean())


# ---------------------------------------------------------------- LBP


@dataclass(frozen=True)
class LbpConfig:
    neighbors: int = 8
    radius: float = 1.0
    grid: tuple = (8, 8)  # cells along (rows, cols)
    uniform: bool = True

    def __post_init__(self):
        if self.neighbors not in (8, 16):
            raise ValueError("neighbors must be 8 or 16")
        if self.radius < 1:
            raise ValueError("radius must be >= 1")

    @property
    def n_bins(self) -> int:
        return self.neighbors * (self.neighbors - 1) + 3 if self.uniform else 2 ** self.neighbors


@lru_cache(maxsize=None)
def uniform_lookup(p: int) -> np.ndarray:
    """Map raw P-bit codes to bins: uniform codes in increasing order, then one catch-all bin."""
    codes = np.arange(2 ** p)
    bits = (codes[:, None] >> np.arange(p)) & 1
    transitions = np.sum(bits != np.roll(bits, 1, axis=1), axis=1)
    uniform = transitions <= 2
    table = np.full(2 ** p, uniform.sum(), dtype=np.int64)
    table[uniform] = np.arange(uniform.sum())
    return table


_TIE_EPS = 1e-9


def lbp_codes(image, cfg: LbpConfig = LbpConfig()) -> np.ndarray:
    """Raw LBP codes for pixels at least ``ceil(radius)`` from the border."""
    img = np.asarray(image, dtype=np.float64)
    m = int(np.ceil(cfg.radius))
    h, w = img.shape
    rows, cols = np.mgrid[m:h - m, m:w - m]
    center = img[m:h - m, m:w - m]
    code = np.zeros(center.shape, dtype=np.int64)
    for p in range(cfg.neighbors):
        theta = 2 * np.pi * p / cfg.neighbors
        dy = np.round(-cfg.radius * np.sin(theta), 12)
        dx = np.round(cfg.radius * np.cos(theta), 12)
        y, x = rows + dy, cols + dx
        y0, x0 = np.floor(y).astype(np.int64), np.floor(x).astype(np.int64)
        fy, fx = y - y0, x - x0
        y1, x1 = np.minimum(y0 + 1, h - 1), np.minimum(x0 + 1, w - 1)
        val = ((1 - fy) * (1 - fx) * img[y0, x0] + (1 - fy) * fx * img[y0, x1]
               + fy * (1 - fx) * img[y1, x0] + fy * fx * img[y1, x1])
        code |= (val - center >= -_TIE_EPS).astype(np.int64) << p
    return code


def lbp_descriptor(image, cfg: LbpConfig = LbpConfig()) -> np.ndarray:
    """Concatenated per-cell LBP histograms (each summing to 1), row-major cells."""
    img = np.asarray(image, dtype=np.float64)
    gy, gx = cfg.grid
    span = 2 * int(np.ceil(cfg.radius)) + 1
    if img.ndim != 2 or img.shape[0] < gy * span or img.shape[1] < gx * span:
        raise ValueError(f"image {img.shape} too small for a {gy}x{gx} grid at radius {cfg.radius}")
    codes = lbp_codes(img, cfg)
    if cfg.uniform:
        codes = uniform_lookup(cfg.neighbors)[codes]
    nb = cfg.n_bins
    ry = np.linspace(0, codes.shape[0], gy + 1).round().astype(int)
    rx = np.linspace(0, codes.shape[1], gx + 1).round().astype(int)
    hists = []
    for i in range(gy):
        for j in range(gx):
            cell = codes[ry[i]:ry[i + 1], rx[j]:rx[j + 1]]
            h = np.bincount(cell.ravel(), minlength=nb).astype(np.float64)
            hists.append(h / h.sum())
    return np.concatenate(hists)


# ---------------------------------------------------------------- errors & weights


@dataclass(frozen=True)
class ErrorVector:
    errors: np.ndarray
    method: str

    def __post_init__(self):
        e = np.asarray(self.errors, dtype=np.float64)
        if e.ndim != 1 or len(e) == 0:
            raise ValueError("error vector must be a nonempty 1-D array")
        if np.any(np.isnan(e)) or np.any(e < 0):
            raise ValueError("errors must be non-negative numbers")
        object.__setattr__(self, "errors", e)


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    support: tuple


def region_model(method: str, images, lbp_cfg: LbpConfig = LbpConfig(), retained: int | None = None,
                 variance: float = 0.95, cap: int = 50):
    """Fit whatever a method needs on the database images of one region."""
    if method == "pca":
        return pca_fit(images, retained, variance, cap)
    if method == "lbp":
        return pca_fit([lbp_descriptor(im, lbp_cfg) for im in images], retained, variance, cap)
    if method == "ssim":
        return None
    raise ValueError(f"unknown method {method!r}")


def region_errors(method: str, db_images, input_region, model: PcaModel | None = None,
                  lbp_cfg: LbpConfig = LbpConfig()) -> ErrorVector:
    """Error of the input region against every database image of that region."""
    db_images = np.asarray(db_images, dtype=np.float64)
    x = np.asarray(input_region, dtype=np.float64)
    if x.shape != db_images.shape[1:]:
        raise ValueError(f"input region {x.shape} does not match database size {db_images.shape[1:]}")
    if method == "ssim":
        if model is not None:
            raise ValueError("SSIM takes no fitted model")
        return ErrorVector([max(0.0, 1.0 - ssim(x, d)) for d in db_images], method)
    if method not in ("pca", "lbp"):
        raise ValueError(f"unknown method {method!r}")
    if model is None:
        model = region_model(method, db_images, lbp_cfg)
    feat = lbp_descriptor(x, lbp_cfg) if method == "lbp" else x
    if model.shape != feat.shape:
        raise ValueError(f"{method} model was fitted on shape {model.shape}, got {feat.shape}")
    score = pca_score(model, feat)
    return ErrorVector(np.linalg.norm(model.training_scores - score, axis=1), method)


RATIO_BITS = 32


def _round_mantissa(x: np.ndarray, bits: int) -> np.ndarray:
    m, ex = np.frexp(x)
    return np.ldexp(np.round(np.ldexp(m, bits)), ex - bits)


def select_weights(errors: ErrorVector | np.ndarray, top_n: int = 3) -> WeightVector:
    """Inverse-error weights over the ``top_n`` smallest errors (ties by model id)."""
    e = errors.errors if isinstance(errors, ErrorVector) else np.asarray(errors, dtype=np.float64)
    if top_n not in (1, 3):
        raise ValueError("top_n must be 1 or 3")
    finite = np.isfinite(e)
    if not finite.any():
        raise ValueError("all errors are infinite")
    order = np.lexsort((np.arange(len(e)), e))
    support = [int(i) for i in order[:top_n] if finite[i]]
    w = np.zeros(len(e))
    if e[support[0]] == 0.0:
        w[support[0]] = 1.0
        return WeightVector(w, (support[0],))
    # Ratios to the smallest error, rounded to a 32-bit mantissa: the few-ulp rounding
    # of c*E then cancels, so select_weights(c*E) == select_weights(E) bit for bit.
    ratio = _round_mantissa(e[support] / e[support[0]], RATIO_BITS)
    inv = 1.0 / ratio
    w[support] = inv / inv.sum()
    return WeightVector(w, tuple(support))
