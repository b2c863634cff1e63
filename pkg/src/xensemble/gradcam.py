"""Grad-CAM heatmaps for :class:`~xensemble.models.SmallCnn`.

Channel weights are the spatial mean of the class-score gradient on the
last conv layer's maps; the heatmap is the ReLU of the weighted map sum,
upsampled to the input size with corner-aligned bilinear interpolation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


class CapabilityError(TypeError):
    """Model cannot provide feature maps and gradients."""


@dataclass
class GradCamHeatmap:
    raw: np.ndarray        # [h', w']
    upsampled: np.ndarray  # [H, W]
    class_index: int
    alphas: np.ndarray     # [K]

    def to_dict(self) -> dict:
        return {
            "method": "gradcam",
            "class_index": self.class_index,
            "alphas": self.alphas.tolist(),
            "raw_shape": list(self.raw.shape),
            "raw_min": float(self.raw.min()),
            "raw_max": float(self.raw.max()),
            "upsampled_shape": list(self.upsampled.shape),
            "argmax": [int(i) for i in np.unravel_index(np.argmax(self.upsampled), self.upsampled.shape)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def gradcam_alphas(gradients) -> np.ndarray:
    g = np.asarray(gradients, dtype=np.float64)
    if g.ndim != 3:
        raise ValueError(f"expected gradients shaped [K, h, w], got rank {g.ndim}")
    return g.mean(axis=(1, 2))


def gradcam_heatmap(feature_maps, alphas) -> np.ndarray:
    a = np.asarray(feature_maps, dtype=np.float64)
    w = np.asarray(alphas, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"expected feature maps shaped [K, h, w], got rank {a.ndim}")
    if w.shape != (a.shape[0],):
        raise ValueError(f"{w.size} alphas for {a.shape[0]} feature maps")
    return np.maximum(np.tensordot(w, a, axes=1), 0.0)


def _axis_weights(n_in: int, n_out: int):
    if n_in == 1:
        z = np.zeros(n_out, dtype=np.int64)
        return z, z, np.zeros(n_out)
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1)) if n_out > 1 else np.zeros(1)
    lo = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    return lo, lo + 1, pos - lo


def upsample_heatmap(raw, shape) -> np.ndarray:
    """Corner-aligned bilinear resize of ``raw`` to ``shape`` (no downsampling)."""
    r = np.asarray(raw, dtype=np.float64)
    h, w = int(shape[0]), int(shape[1])
    if h < r.shape[0] or w < r.shape[1]:
        raise ValueError(f"cannot downsample {list(r.shape)} to {[h, w]}")
    y0, y1, fy = _axis_weights(r.shape[0], h)
    x0, x1, fx = _axis_weights(r.shape[1], w)
    top = r[y0][:, x0] * (1 - fx) + r[y0][:, x1] * fx
    bot = r[y1][:, x0] * (1 - fx) + r[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    # convex combinations can overshoot by an ulp
    return np.clip(out, r.min(), r.max())


def explain_gradcam(model, image, class_index: int) -> GradCamHeatmap:
    if not (hasattr(model, "grad_wrt_feature_maps") and hasattr(model, "forward_with_activations")):
        raise CapabilityError(f"model {getattr(model, 'name', model)!r} ({type(model).__name__}) has no conv feature maps")
    image = np.asarray(image, dtype=np.float64)
    grads = model.grad_wrt_feature_maps(image, class_index)
    _, fmaps = model.forward_with_activations(image)
    alphas = gradcam_alphas(grads)
    raw = gradcam_heatmap(fmaps[-1], alphas)
    return GradCamHeatmap(raw, upsample_heatmap(raw, image.shape[-2:]), class_index, alphas)
