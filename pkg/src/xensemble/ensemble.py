"""Hard-label majority and weighted voting over base predictors."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "EnsembleError",
    "WeightedConfig",
    "VoteRecord",
    "majority_vote",
    "weighted_vote",
    "tally",
    "ensemble_predict",
    "VotingEnsemble",
]


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedConfig:
    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(x) for x in self.weights)
        if any(not math.isfinite(x) or x < 0 for x in w):
            raise EnsembleError(f"weights must be finite and non-negative, got {list(w)}")
        if not any(x > 0 for x in w):
            raise EnsembleError("at least one weight must be strictly positive")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, m: int) -> "WeightedConfig":
        return cls((1.0,) * m)


def majority_vote(labels: Sequence[int]) -> int:
    """Most common label; ties go to the lowest label."""
    if len(labels) == 0:
        raise EnsembleError("cannot vote on an empty list")
    counts = Counter(int(l) for l in labels)
    best = max(counts.values())
    return min(l for l, c in counts.items() if c == best)


def tally(labels: Sequence[int], weights: Sequence[float], n_classes: int | None = None) -> dict[int, float]:
    if len(labels) != len(weights):
        raise EnsembleError(f"{len(labels)} labels but {len(weights)} weights")
    if len(labels) == 0:
        raise EnsembleError("cannot vote on an empty list")
    k = max(int(max(labels)) + 1, n_classes or 0)
    # fsum is exactly rounded, so the result does not depend on model order
    return {c: math.fsum(w for l, w in zip(labels, weights) if int(l) == c) for c in range(k)}


def _winner(tallies: dict[int, float]) -> tuple[int, bool]:
    best = max(tallies.values())
    top = [c for c, v in tallies.items() if v == best]
    return min(top), len(top) > 1


def weighted_vote(labels: Sequence[int], config: WeightedConfig) -> int:
    """``argmax_i sum_j w_j [h_j == i]`` with ties to the lowest class index."""
    return _winner(tally(labels, config.weights))[0]


@dataclass
class VoteRecord:
    votes: list[dict]
    tallies: dict[int, float]
    final: int
    tie_broken: bool
    input_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "input_id": self.input_id,
            "votes": self.votes,
            "tallies": {str(k): v for k, v in self.tallies.items()},
            "final": self.final,
            "tie_broken": self.tie_broken,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _check_models(models) -> int:
    if not models:
        raise EnsembleError("ensemble needs at least one model")
    counts = {m.n_classes for m in models}
    if len(counts) != 1:
        raise EnsembleError(
            "models disagree on class count: " + ", ".join(f"{m.name}={m.n_classes}" for m in models)
        )
    return counts.pop()


def _run(model, xs) -> np.ndarray:
    try:
        return np.asarray(model.predict_proba_batch(xs), dtype=np.float64)
    except Exception as exc:
        raise EnsembleError(f"model {model.name!r} failed: {exc}") from exc


def ensemble_predict(models, x, config: WeightedConfig | None = None, input_id: str | None = None) -> VoteRecord:
    """Run every model on one input and combine their argmax labels by vote."""
    k = _check_models(models)
    config = config or WeightedConfig.uniform(len(models))
    if len(config.weights) != len(models):
        raise EnsembleError(f"{len(models)} models but {len(config.weights)} weights")
    x = np.asarray(x, dtype=np.float64)
    votes, labels = [], []
    for m in models:
        p = _run(m, x[None])[0]
        label = int(np.argmax(p))
        labels.append(label)
        votes.append({"model": m.name, "label": label, "probs": p.tolist()})
    tallies = tally(labels, config.weights, k)
    final, tie = _winner(tallies)
    return VoteRecord(votes, tallies, final, tie, input_id)


class VotingEnsemble:
    """The voting ensemble as a :class:`~xensemble.models.Predictor`.

    ``predict_proba`` is the weighted vote share per class, so its argmax
    (lowest index on ties) is exactly the voted label.
    """

    def __init__(self, models, weights: Sequence[float] | None = None, name: str = "ensemble"):
        self.n_classes = _check_models(models)
        self.models = list(models)
        self.config = WeightedConfig(tuple(weights) if weights is not None else (1.0,) * len(self.models))
        if len(self.config.weights) != len(self.models):
            raise EnsembleError(f"{len(self.models)} models but {len(self.config.weights)} weights")
        self.name = name

    def member_proba_batch(self, xs) -> np.ndarray:
        """``[M, N, k]`` probabilities of every member."""
        xs = np.asarray(xs, dtype=np.float64)
        return np.stack([_run(m, xs) for m in self.models])

    def predict_proba_batch(self, xs) -> np.ndarray:
        probs = self.member_proba_batch(xs)
        labels = np.argmax(probs, axis=2)  # [M, N]
        w = np.asarray(self.config.weights)
        out = np.empty((labels.shape[1], self.n_classes))
        for c in range(self.n_classes):
            hit = labels == c
            out[:, c] = [math.fsum(w[hit[:, i]]) for i in range(labels.shape[1])]
        return out / math.fsum(w)

    def predict_proba(self, x) -> np.ndarray:
        return self.predict_proba_batch(np.asarray(x, dtype=np.float64)[None])[0]

    def predict(self, xs) -> np.ndarray:
        return np.argmax(self.predict_proba_batch(xs), axis=1)

    def mean_proba_batch(self, xs) -> np.ndarray:
        """Weighted mean of member probabilities; a ranking score, not the vote."""
        w = np.asarray(self.config.weights)
        return np.tensordot(w / w.sum(), self.member_proba_batch(xs), axes=1)
