"""Shapley attributions for segment coalition games.

Features are image segments; a coalition keeps its segments and sets every
other segment to a baseline value. ``exact_shapley`` enumerates all 2^n
coalitions, ``sampled_shapley`` averages marginal contributions over random
feature orderings.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels as K
from .lime import SegmentMask, perturb
from .seeding import substream

MAX_EXACT_FEATURES = 16

__all__ = [
    "CoalitionGame",
    "ShapExplanation",
    "ShapConfig",
    "exact_shapley",
    "sampled_shapley",
    "image_game",
    "explain_shap",
    "shapley_weights",
    "render_shap",
]


@dataclass
class CoalitionGame:
    """``value`` maps a boolean coalition matrix ``[m, n]`` to ``m`` payoffs."""

    n: int
    value: Callable[[np.ndarray], np.ndarray]

    def values(self, coalitions) -> np.ndarray:
        c = np.asarray(coalitions, dtype=bool)
        return np.asarray(self.value(c), dtype=np.float64).reshape(len(c))

    @classmethod
    def from_table(cls, table) -> "CoalitionGame":
        """Game given by payoffs indexed by bitmask (bit i set = feature i present)."""
        table = np.asarray(table, dtype=np.float64)
        n = int(round(math.log2(len(table))))
        if 1 << n != len(table):
            raise ValueError("table length must be a power of two")
        bits = 1 << np.arange(n)

        def value(c):
            return table[(c.astype(np.int64) * bits).sum(axis=1)]

        return cls(n, value)


@dataclass
class ShapExplanation:
    phi: np.ndarray
    baseline_value: float
    full_value: float
    method: str
    n_evaluations: int
    stderr: np.ndarray | None = None
    n_permutations: int | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def clean(a):
            return None if a is None else [None if not math.isfinite(v) else v for v in np.asarray(a).tolist()]

        return {
            "method": "shap",
            "estimator": self.method,
            "phi": self.phi.tolist(),
            "baseline_value": self.baseline_value,
            "full_value": self.full_value,
            "stderr": clean(self.stderr),
            "n_evaluations": self.n_evaluations,
            "n_permutations": self.n_permutations,
            **self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def shapley_weights(n: int) -> np.ndarray:
    """``|S|! (n-|S|-1)! / n!`` for ``|S| = 0..n-1``, via log-factorials."""
    s = np.arange(n)
    lw = np.array([math.lgamma(k + 1) + math.lgamma(n - k) - math.lgamma(n + 1) for k in s])
    return np.exp(lw)


def _all_coalitions(n: int) -> np.ndarray:
    masks = np.arange(1 << n, dtype=np.int64)
    return ((masks[:, None] >> np.arange(n)) & 1).astype(bool)


def exact_shapley(game: CoalitionGame, batch_size: int = 4096) -> ShapExplanation:
    n = game.n
    if n > MAX_EXACT_FEATURES:
        raise ValueError(
            f"exact Shapley over {n} features needs 2^{n} evaluations; "
            f"limit is {MAX_EXACT_FEATURES}, use sampled_shapley instead"
        )
    coalitions = _all_coalitions(n)
    # each subset is evaluated exactly once; values[mask] is v(mask)
    values = np.concatenate([game.values(coalitions[i:i + batch_size]) for i in range(0, len(coalitions), batch_size)])
    phi = K.shapley_from_values(values, shapley_weights(n))
    return ShapExplanation(phi, float(values[0]), float(values[-1]), "exact", len(values))


def sampled_shapley(game: CoalitionGame, n_permutations: int, seed: int) -> ShapExplanation:
    """Permutation-sampling estimate; ``stderr`` is the per-feature standard error of the mean."""
    if n_permutations < 1:
        raise ValueError("n_permutations must be >= 1")
    n = game.n
    rng = substream(seed, "shap", "permutations")
    perms = np.stack([rng.permutation(n) for _ in range(n_permutations)])
    # prefix coalitions: row j of perm p holds its first j features
    rank = np.empty_like(perms)
    np.put_along_axis(rank, perms, np.arange(n)[None, :].repeat(n_permutations, 0), axis=1)
    prefixes = rank[:, None, :] < np.arange(n + 1)[None, :, None]  # [m, n+1, n]
    flat = prefixes.reshape(-1, n)
    uniq, inverse = np.unique(flat, axis=0, return_inverse=True)
    v = game.values(uniq)[inverse.reshape(-1)].reshape(n_permutations, n + 1)
    steps = np.diff(v, axis=1)  # marginal of perms[p, j]
    marg = np.empty((n_permutations, n))
    np.put_along_axis(marg, perms, steps, axis=1)
    phi = marg.mean(axis=0)
    if n_permutations > 1:
        stderr = marg.std(axis=0, ddof=1) / math.sqrt(n_permutations)
    else:
        stderr = np.full(n, np.nan)
    empty = np.zeros((1, n), dtype=bool)
    full = np.ones((1, n), dtype=bool)
    v0, vn = game.values(np.vstack([empty, full]))
    return ShapExplanation(phi, float(v0), float(vn), "sampled", len(uniq), stderr, n_permutations)


def image_game(predictor, image, mask: SegmentMask, class_index: int, baseline: float, batch_size: int = 512) -> CoalitionGame:
    image = np.asarray(image, dtype=np.float64)

    def value(coalitions):
        out = []
        for i in range(0, len(coalitions), batch_size):
            imgs = perturb(image, mask, coalitions[i:i + batch_size], baseline)
            out.append(np.asarray(predictor.predict_proba_batch(imgs))[:, class_index])
        return np.concatenate(out) if out else np.zeros(0)

    return CoalitionGame(mask.n_segments, value)


@dataclass
class ShapConfig:
    class_index: int = 1
    baseline: float = 0.0
    mode: str = "auto"      # exact | sampled | auto
    budget: int = 200       # permutations in sampled mode
    seed: int = 42
    auto_exact_max: int = 12


def explain_shap(predictor, image, mask: SegmentMask, config: ShapConfig | None = None) -> ShapExplanation:
    cfg = config or ShapConfig()
    if not 0 <= cfg.class_index < predictor.n_classes:
        raise IndexError(f"class index {cfg.class_index} out of range for {predictor.n_classes} classes")
    mode = cfg.mode
    if mode == "auto":
        mode = "exact" if mask.n_segments <= cfg.auto_exact_max else "sampled"
    game = image_game(predictor, image, mask, cfg.class_index, cfg.baseline)
    if mode == "exact":
        exp = exact_shapley(game)
    elif mode == "sampled":
        exp = sampled_shapley(game, cfg.budget, cfg.seed)
    else:
        raise ValueError(f"unknown mode {cfg.mode!r}")
    exp.meta = {
        "class_index": cfg.class_index,
        "baseline": cfg.baseline,
        "n_segments": mask.n_segments,
        "segment_shape": list(mask.labels.shape),
    }
    return exp


def render_shap(mask: SegmentMask, exp: ShapExplanation):
    """Signed attribution image in [0, 1] plus a legend.

    Mid-gray (0.5) is zero attribution; 1.0 and 0.0 are +/- the largest
    ``|phi|``.
    """
    per_pixel = exp.phi[mask.labels]
    scale = float(np.max(np.abs(exp.phi))) if exp.phi.size else 0.0
    img = 0.5 + 0.5 * per_pixel / scale if scale > 0 else np.full(per_pixel.shape, 0.5)
    legend = {
        "scale_max_abs_phi": scale,
        "encoding": "phi = (pixel / 255 - 0.5) * 2 * scale",
        "zero_level": 127.5,
        "range": [0, 255],
    }
    return img, legend
