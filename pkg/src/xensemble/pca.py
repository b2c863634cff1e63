"""Principal component analysis used as image preprocessing."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import read_tensors, write_tensors

EIGH_MAX_DIM = 64


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray                # [d]
    components: np.ndarray          # [k, d], orthonormal rows
    explained_variance: np.ndarray  # [k], non-increasing

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    @property
    def dim(self) -> int:
        return self.components.shape[1]

    def transform(self, matrix) -> np.ndarray:
        return pca_transform(self, matrix)

    def inverse_transform(self, reduced) -> np.ndarray:
        return np.asarray(reduced) @ self.components + self.mean

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {"mean": self.mean, "components": self.components, "explained_variance": self.explained_variance}

    @classmethod
    def from_arrays(cls, arrays) -> "PcaModel":
        return cls(
            np.asarray(arrays["mean"], dtype=np.float64).reshape(-1),
            np.asarray(arrays["components"], dtype=np.float64),
            np.asarray(arrays["explained_variance"], dtype=np.float64).reshape(-1),
        )


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each row made positive (first one on ties)
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def _power_deflation(cov: np.ndarray, k: int, tol: float = 1e-13, max_iter: int = 20000):
    d = cov.shape[0]
    rng = np.random.default_rng(0)
    vecs = np.zeros((k, d))
    vals = np.zeros(k)
    a = cov.copy()
    for c in range(k):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = a @ v
            # keep the iterate orthogonal to components already found
            w -= vecs[:c].T @ (vecs[:c] @ w)
            nrm = np.linalg.norm(w)
            if nrm == 0.0:
                break
            w /= nrm
            if np.linalg.norm(w - v) < tol or np.linalg.norm(w + v) < tol:
                v = w
                break
            v = w
        vecs[c] = v
        vals[c] = max(float(v @ cov @ v), 0.0)
        a = a - vals[c] * np.outer(v, v)
    order = np.argsort(-vals, kind="stable")
    return vals[order], vecs[order]


def pca_fit(matrix, k: int) -> PcaModel:
    """Fit the top-``k`` principal directions of an ``n x d`` matrix.

    Uses a full symmetric eigendecomposition when ``d <= 64`` and power
    iteration with deflation otherwise.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected an n x d matrix, got shape {x.shape}")
    n, d = x.shape
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} must satisfy 1 <= k <= min(n-1, d) = {min(n - 1, d)}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    if np.trace(cov) <= 0.0:
        raise ValueError("input has zero variance; principal components are undefined")
    if d <= EIGH_MAX_DIM:
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(-vals, kind="stable")[:k]
        vals, vecs = np.clip(vals[order], 0.0, None), vecs[:, order].T
    else:
        vals, vecs = _power_deflation(cov, k)
    return PcaModel(mean, _fix_signs(vecs), vals)


def pca_transform(model: PcaModel, matrix) -> np.ndarray:
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != model.dim:
        raise ValueError(f"expected {model.dim} columns, got {x.shape[1]}")
    return (x - model.mean) @ model.components.T


def save_pca(model: PcaModel, path) -> Path:
    stem = Path(path).with_suffix("")
    write_tensors(stem.with_suffix(".tensors"), [model.mean, model.components, model.explained_variance])
    manifest = {
        "format": "xensemble-pca v1",
        "tensor_file": stem.name + ".tensors",
        "tensors": ["mean", "components", "explained_variance"],
        "n_components": model.n_components,
        "dim": model.dim,
    }
    out = stem.with_suffix(".json")
    out.write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def load_pca(path) -> PcaModel:
    path = Path(path).with_suffix(".json")
    manifest = json.loads(path.read_text())
    tensors = read_tensors(path.parent / manifest["tensor_file"])
    return PcaModel.from_arrays({name: t.numpy() for name, t in zip(manifest["tensors"], tensors)})
