"""Local surrogate explanations over grid segments.

An image is cut into a regular grid of rectangular segments. Random on/off
patterns over the segments produce perturbed images (off segments are set
to a baseline value), the predictor scores each one, and a proximity-weighted
ridge regression on the binary patterns gives one coefficient per segment.
Sparsity is enforced by keeping the ``top_k`` largest coefficients and
refitting on those alone.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
import scipy.linalg

from .seeding import substream

MIN_RIDGE = 1e-8

__all__ = [
    "SegmentMask",
    "LimeConfig",
    "LimeExplanation",
    "SingularSystemError",
    "segment_image",
    "sample_perturbations",
    "perturb",
    "proximity_weights",
    "fit_local_model",
    "explain_lime",
    "render_lime_mask",
]


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class SegmentMask:
    labels: np.ndarray  # [H, W] int, values 0..n_segments-1
    n_segments: int

    def pixels(self, s: int) -> np.ndarray:
        return self.labels == s


def segment_image(image, grid_size: int) -> SegmentMask:
    """Split the spatial plane into ``grid_size x grid_size`` rectangles.

    Rows and columns get ``dim // grid_size`` cells each; the last row/column
    of segments absorbs the remainder. Segment ``r * grid_size + c`` is the
    one in grid row ``r``, grid column ``c``.
    """
    img = np.asarray(image)
    h, w = img.shape[-2:]
    if grid_size < 1:
        raise ValueError(f"grid_size must be >= 1, got {grid_size}")
    if h < grid_size or w < grid_size:
        raise ValueError(f"image {h}x{w} is smaller than a {grid_size}x{grid_size} grid")
    rows = np.minimum(np.arange(h) // (h // grid_size), grid_size - 1)
    cols = np.minimum(np.arange(w) // (w // grid_size), grid_size - 1)
    return SegmentMask(rows[:, None] * grid_size + cols[None, :], grid_size * grid_size)


def perturb(image, mask: SegmentMask, z, baseline: float) -> np.ndarray:
    """Image with segments where ``z == 0`` replaced by ``baseline``.

    ``z`` may be one pattern ``[S]`` or a batch ``[n, S]``.
    """
    img = np.asarray(image, dtype=np.float64)
    z = np.asarray(z)
    keep = z[..., mask.labels].astype(bool)  # [..., H, W]
    keep = np.expand_dims(keep, axis=-3)      # broadcast over channels
    return np.where(keep, img, baseline)


def sample_perturbations(mask: SegmentMask, n_samples: int, seed: int, image=None, baseline: float = 0.0):
    """Binary design matrix ``Z`` (row 0 all ones) and, if ``image`` is given, the perturbed images."""
    s = mask.n_segments
    if n_samples < s + 2:
        raise ValueError(f"n_samples={n_samples} too small for {s} segments; need at least {s + 2}")
    rng = substream(seed, "lime", "perturbations")
    z = np.ones((n_samples, s), dtype=np.int8)
    z[1:] = rng.integers(0, 2, size=(n_samples - 1, s), dtype=np.int8)
    if image is None:
        return z, None
    return z, perturb(image, mask, z, baseline)


def proximity_weights(z, kernel_width: float) -> np.ndarray:
    """``exp(-D^2 / sigma^2)`` with D the fraction of segments switched off."""
    if not kernel_width > 0:
        raise ValueError(f"kernel width must be positive, got {kernel_width}")
    z = np.asarray(z)
    d = 1.0 - z.sum(axis=1) / z.shape[1]
    return np.exp(-(d * d) / (kernel_width * kernel_width))


@dataclass
class LimeExplanation:
    coefficients: np.ndarray
    intercept: float
    selected: list[int]
    r2: float
    n_samples: int
    kernel_width: float | None
    class_index: int | None = None
    ridge: float = MIN_RIDGE

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coefficients"] = self.coefficients.tolist()
        d["method"] = "lime"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _weighted_ridge(z, y, w, lam):
    n, s = z.shape
    a = np.hstack([np.ones((n, 1)), z])
    aw = a * w[:, None]
    gram = a.T @ aw
    gram[1:, 1:] += lam * np.eye(s)  # intercept is not penalised
    rhs = aw.T @ y
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=True)
    except np.linalg.LinAlgError:
        raise SingularSystemError(
            "normal equations are not positive definite; increase n_samples or the ridge penalty"
        ) from None
    beta = scipy.linalg.cho_solve(factor, rhs)
    return beta[0], beta[1:]


def _weighted_r2(y, pred, w):
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    ss_res = np.sum(w * (y - pred) ** 2)
    if ss_tot <= 0.0:
        return 1.0 if ss_res <= 1e-24 else 0.0
    return float(1.0 - ss_res / ss_tot)


def fit_local_model(z, targets, weights, ridge: float = MIN_RIDGE, top_k: int | None = None) -> LimeExplanation:
    """Weighted ridge fit followed by a top-``k`` refit.

    Minimises ``sum w (y - b0 - z @ b)^2 + ridge * |b|^2``; then only the
    ``top_k`` largest ``|b|`` (lowest index on ties) are refitted, every other
    coefficient is exactly zero.
    """
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64).ravel()
    w = np.asarray(weights, dtype=np.float64).ravel()
    n, s = z.shape
    if not (len(y) == n == len(w)):
        raise ValueError(f"rows mismatch: Z has {n}, targets {len(y)}, weights {len(w)}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    k = s if top_k is None else int(top_k)
    if not 1 <= k <= s:
        raise ValueError(f"top_k must be in [1, {s}], got {k}")
    lam = max(float(ridge), MIN_RIDGE)

    b0, beta = _weighted_ridge(z, y, w, lam)
    selected = list(range(s))
    if k < s:
        order = np.argsort(-np.abs(beta), kind="stable")
        selected = sorted(order[:k].tolist())
        b0, sub = _weighted_ridge(z[:, selected], y, w, lam)
        beta = np.zeros(s)
        beta[selected] = sub
    pred = b0 + z @ beta
    return LimeExplanation(beta, float(b0), selected, _weighted_r2(y, pred, w), n, None, ridge=lam)


@dataclass
class LimeConfig:
    grid_size: int = 7
    n_samples: int = 1000
    kernel_width: float = 0.25
    ridge: float = 1e-3
    top_k: int = 10
    class_index: int = 1
    baseline: float = 0.0
    seed: int = 42
    batch_size: int = 256


def _class_scores(predictor, images, class_index, batch):
    out = []
    for i in range(0, len(images), batch):
        out.append(np.asarray(predictor.predict_proba_batch(images[i:i + batch]))[:, class_index])
    return np.concatenate(out)


def explain_lime(predictor, image, config: LimeConfig | None = None, mask: SegmentMask | None = None) -> LimeExplanation:
    cfg = config or LimeConfig()
    image = np.asarray(image, dtype=np.float64)
    if not 0 <= cfg.class_index < predictor.n_classes:
        raise IndexError(f"class index {cfg.class_index} out of range for {predictor.n_classes} classes")
    mask = mask or segment_image(image, cfg.grid_size)
    z, _ = sample_perturbations(mask, cfg.n_samples, cfg.seed)
    targets = np.concatenate([
        _class_scores(predictor, perturb(image, mask, z[i:i + cfg.batch_size], cfg.baseline), cfg.class_index, cfg.batch_size)
        for i in range(0, len(z), cfg.batch_size)
    ])
    w = proximity_weights(z, cfg.kernel_width)
    exp = fit_local_model(z, targets, w, cfg.ridge, min(cfg.top_k, mask.n_segments))
    exp.kernel_width = cfg.kernel_width
    exp.class_index = cfg.class_index
    return exp


def render_lime_mask(image, mask: SegmentMask, explanation: LimeExplanation, dim: float = 0.3) -> np.ndarray:
    """Grayscale highlight: retained segments at full intensity, the rest dimmed."""
    img = np.asarray(image, dtype=np.float64)
    gray = img.mean(axis=0) if img.ndim == 3 else img
    keep = np.isin(mask.labels, explanation.selected)
    return np.where(keep, gray, dim * gray)
