"""Predictors: logistic regression and a small from-scratch CNN.

Both models take images shaped ``[C, H, W]`` (or batches ``[N, C, H, W]``)
and return class probabilities. The CNN keeps every intermediate needed
for manual backpropagation, which is what makes Grad-CAM possible without
an autodiff framework.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import expit, softmax

from . import _kernels as K
from .pca import PcaModel
from .tensor import read_tensors, write_tensors

LOG_EPS = 1e-12

__all__ = [
    "Predictor",
    "LogisticModel",
    "SmallCnn",
    "TrainHistory",
    "SgdConfig",
    "TrainingDivergedError",
    "bce_loss",
    "bce_per_class",
    "train_sgd",
    "save_model",
    "load_model",
]


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss={loss})")
        self.epoch = epoch
        self.loss = loss


class LayerShapeError(ValueError):
    def __init__(self, layer: int, expected, got):
        super().__init__(f"layer {layer}: expected input shape {list(expected)}, got {list(got)}")
        self.layer = layer


@runtime_checkable
class Predictor(Protocol):
    name: str
    n_classes: int

    def predict_proba(self, x: np.ndarray) -> np.ndarray: ...

    def predict_proba_batch(self, xs: np.ndarray) -> np.ndarray: ...


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def _check_binary(labels: np.ndarray) -> None:
    bad = ~np.isin(labels, (0, 1))
    if bad.any():
        raise ValueError(f"labels must be 0 or 1, got {labels[bad][0]!r}")


def bce_per_class(prediction: float, label: int) -> float:
    """Loss of one sample: ``-log p`` for label 1, ``-log(1-p)`` for label 0."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label!r}")
    p = min(max(float(prediction), LOG_EPS), 1.0 - LOG_EPS)
    return -math.log(p) if label == 1 else -math.log(1.0 - p)


def bce_loss(predictions, labels) -> float:
    """Mean binary cross-entropy; predictions are clamped to [eps, 1-eps]."""
    p = np.asarray(predictions, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {y.size} labels")
    if p.size == 0:
        raise ValueError("empty input")
    _check_binary(y)
    p = np.clip(p, LOG_EPS, 1.0 - LOG_EPS)
    per = np.where(y == 1, -np.log(p), -np.log1p(-p))
    return float(np.mean(per))


def _nll(probs: np.ndarray, y: np.ndarray) -> float:
    p = np.clip(probs[np.arange(len(y)), y], LOG_EPS, 1.0 - LOG_EPS)
    return float(-np.mean(np.log(p)))


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class _Model:
    name: str
    n_classes: int
    input_shape: tuple[int, ...]
    kind: str

    def _batch(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.shape[1:] != tuple(self.input_shape):
            raise LayerShapeError(0, self.input_shape, xs.shape[1:])
        return xs

    def predict_proba(self, x) -> np.ndarray:
        return self.predict_proba_batch(np.asarray(x, dtype=np.float64)[None])[0]

    def predict_proba_batch(self, xs) -> np.ndarray:
        return self._probs(self.logits(xs))

    def predict(self, xs) -> np.ndarray:
        return np.argmax(self.predict_proba_batch(xs), axis=1)

    def _probs(self, z: np.ndarray) -> np.ndarray:
        if z.shape[1] == 1:
            p = expit(z[:, 0])
            return np.stack([1.0 - p, p], axis=1)
        return softmax(z, axis=1)

    def _dlogits(self, z: np.ndarray, y: np.ndarray) -> np.ndarray:
        # d(mean NLL)/dz for sigmoid-BCE and softmax-CE alike
        n = len(y)
        if z.shape[1] == 1:
            return ((expit(z[:, 0]) - y) / n)[:, None]
        g = softmax(z, axis=1)
        g[np.arange(n), y] -= 1.0
        return g / n

    def loss(self, xs, y) -> float:
        return _nll(self.predict_proba_batch(xs), np.asarray(y, dtype=np.int64))

    def copy(self):
        return copy.deepcopy(self)


class LogisticModel(_Model):
    """Binary logistic regression on flattened pixels, optionally PCA-reduced first."""

    kind = "logistic"

    def __init__(self, input_shape, *, name: str = "logistic", pca: PcaModel | None = None, seed: int = 0):
        self.name = name
        self.n_classes = 2
        self.input_shape = tuple(int(d) for d in input_shape)
        self.pca = pca
        self.seed = seed
        d = pca.n_components if pca is not None else int(np.prod(self.input_shape))
        if pca is not None and pca.dim != int(np.prod(self.input_shape)):
            raise ValueError(f"PCA dimension {pca.dim} does not match input size {np.prod(self.input_shape)}")
        self.params = {"weight": np.zeros(d), "bias": np.zeros(1)}

    def features(self, xs) -> np.ndarray:
        xs = self._batch(xs)
        flat = xs.reshape(len(xs), -1)
        return self.pca.transform(flat) if self.pca is not None else flat

    def logits(self, xs) -> np.ndarray:
        f = self.features(xs)
        return (f @ self.params["weight"] + self.params["bias"][0])[:, None]

    def loss_and_grads(self, xs, y):
        y = np.asarray(y, dtype=np.int64)
        f = self.features(xs)
        z = (f @ self.params["weight"] + self.params["bias"][0])[:, None]
        dz = self._dlogits(z, y)[:, 0]
        grads = {"weight": f.T @ dz, "bias": np.array([dz.sum()])}
        return _nll(self._probs(z), y), grads


@dataclass
class _Cache:
    inputs: list = field(default_factory=list)    # conv inputs
    pre: list = field(default_factory=list)       # conv pre-activations
    fmaps: list = field(default_factory=list)     # post-ReLU, pre-pool
    pool_arg: list = field(default_factory=list)
    dense_in: list = field(default_factory=list)
    dense_pre: list = field(default_factory=list)
    flat_shape: tuple = ()


class SmallCnn(_Model):
    """Conv(3x3, same) -> ReLU -> [2x2 max-pool] blocks, then dense layers.

    Parameters live in ``self.params`` under ``conv{i}.weight`` ``[out, in, k, k]``,
    ``conv{i}.bias``, ``dense{j}.weight`` ``[in, out]`` and ``dense{j}.bias``.
    A single output unit means a sigmoid head over two classes; ``k > 1``
    outputs mean softmax over ``k`` classes.
    """

    kind = "cnn"

    def __init__(
        self,
        input_shape,
        conv_channels: Sequence[int] = (8, 16),
        *,
        pool: Sequence[bool] | None = None,
        hidden: Sequence[int] = (),
        n_outputs: int = 1,
        kernel_size: int = 3,
        name: str = "cnn",
        seed: int = 0,
    ):
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd for same padding")
        self.name = name
        self.input_shape = tuple(int(d) for d in input_shape)
        self.conv_channels = tuple(int(c) for c in conv_channels)
        if not self.conv_channels:
            raise ValueError("need at least one conv layer")
        self.pool = tuple(bool(p) for p in (pool if pool is not None else [True] * len(self.conv_channels)))
        if len(self.pool) != len(self.conv_channels):
            raise ValueError("one pool flag per conv layer")
        self.hidden = tuple(int(h) for h in hidden)
        self.n_outputs = int(n_outputs)
        self.n_classes = 2 if self.n_outputs == 1 else self.n_outputs
        self.kernel_size = kernel_size
        self.seed = seed

        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        c, h, w = self.input_shape
        for i, out in enumerate(self.conv_channels):
            fan_in = c * kernel_size * kernel_size
            self.params[f"conv{i}.weight"] = rng.normal(0.0, math.sqrt(2.0 / fan_in), (out, c, kernel_size, kernel_size))
            self.params[f"conv{i}.bias"] = np.zeros(out)
            c = out
            if self.pool[i]:
                h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValueError(f"input {list(self.input_shape)} too small for {len(self.conv_channels)} pool layers")
        width = c * h * w
        sizes = [width, *self.hidden, self.n_outputs]
        for j in range(len(sizes) - 1):
            scale = math.sqrt((2.0 if j < len(sizes) - 2 else 1.0) / sizes[j])
            self.params[f"dense{j}.weight"] = rng.normal(0.0, scale, (sizes[j], sizes[j + 1]))
            self.params[f"dense{j}.bias"] = np.zeros(sizes[j + 1])

    @property
    def n_conv(self) -> int:
        return len(self.conv_channels)

    @property
    def n_dense(self) -> int:
        return len(self.hidden) + 1

    # -- forward / backward -------------------------------------------------

    def _forward(self, xs) -> tuple[np.ndarray, _Cache]:
        a = self._batch(xs)
        cache = _Cache()
        for i in range(self.n_conv):
            w = self.params[f"conv{i}.weight"]
            if a.shape[1] != w.shape[1]:
                raise LayerShapeError(i, (w.shape[1], *a.shape[2:]), a.shape[1:])
            cache.inputs.append(a)
            z = K.conv2d_forward(a, w, self.params[f"conv{i}.bias"])
            cache.pre.append(z)
            a = np.maximum(z, 0.0)
            cache.fmaps.append(a)
            if self.pool[i]:
                a, arg = K.maxpool2_forward(a)
                cache.pool_arg.append(arg)
            else:
                cache.pool_arg.append(None)
        cache.flat_shape = a.shape
        h = a.reshape(len(a), -1)
        for j in range(self.n_dense):
            cache.dense_in.append(h)
            z = h @ self.params[f"dense{j}.weight"] + self.params[f"dense{j}.bias"]
            cache.dense_pre.append(z)
            h = np.maximum(z, 0.0) if j < self.n_dense - 1 else z
        return h, cache

    def logits(self, xs) -> np.ndarray:
        return self._forward(xs)[0]

    def class_scores(self, xs) -> np.ndarray:
        """Pre-softmax score per class; for a sigmoid head the scores are ``[-z, z]``."""
        z = self.logits(xs)
        return np.concatenate([-z, z], axis=1) if self.n_outputs == 1 else z

    def _backward_dense(self, dz, cache, grads=None):
        for j in reversed(range(self.n_dense)):
            if j < self.n_dense - 1:
                dz = dz * (cache.dense_pre[j] > 0)
            if grads is not None:
                grads[f"dense{j}.weight"] = cache.dense_in[j].T @ dz
                grads[f"dense{j}.bias"] = dz.sum(axis=0)
            dz = dz @ self.params[f"dense{j}.weight"].T
        return dz.reshape(cache.flat_shape)

    def _backward_conv_block(self, i, d, cache):
        # d: gradient w.r.t. the block output (after pooling if any)
        if self.pool[i]:
            d = K.maxpool2_backward(d, cache.pool_arg[i], cache.fmaps[i].shape)
        return d  # now w.r.t. fmaps[i]

    def loss_and_grads(self, xs, y):
        y = np.asarray(y, dtype=np.int64)
        z, cache = self._forward(xs)
        grads: dict[str, np.ndarray] = {}
        d = self._backward_dense(self._dlogits(z, y), cache, grads)
        for i in reversed(range(self.n_conv)):
            d = self._backward_conv_block(i, d, cache)
            d = d * (cache.pre[i] > 0)
            dx, dw, db = K.conv2d_backward(cache.inputs[i], self.params[f"conv{i}.weight"], d)
            grads[f"conv{i}.weight"] = dw
            grads[f"conv{i}.bias"] = db
            d = dx
        return _nll(self._probs(z), y), grads

    def forward_with_activations(self, x):
        """Probabilities and every conv layer's post-ReLU maps for one image.

        The last entry of the returned list is the Grad-CAM target layer.
        """
        z, cache = self._forward(np.asarray(x, dtype=np.float64)[None])
        return self._probs(z)[0], [f[0] for f in cache.fmaps]

    def grad_wrt_feature_maps(self, x, class_index: int) -> np.ndarray:
        """d(pre-softmax score of ``class_index``)/d(last conv feature maps)."""
        if not 0 <= class_index < self.n_classes:
            raise IndexError(f"class index {class_index} out of range for {self.n_classes} classes")
        z, cache = self._forward(np.asarray(x, dtype=np.float64)[None])
        dz = np.zeros_like(z)
        if self.n_outputs == 1:
            dz[0, 0] = 1.0 if class_index == 1 else -1.0
        else:
            dz[0, class_index] = 1.0
        d = self._backward_dense(dz, cache)
        last = self.n_conv - 1
        return self._backward_conv_block(last, d, cache)[0]


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class SgdConfig:
    epochs: int = 20
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 42


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,train_acc,val_loss,val_acc"]
        for e in range(len(self)):
            rows.append(
                f"{e + 1},{self.train_loss[e]!r},{self.train_acc[e]!r},{self.val_loss[e]!r},{self.val_acc[e]!r}"
            )
        return "\n".join(rows) + "\n"


def _xy(split):
    if hasattr(split, "images"):
        return np.asarray(split.images, dtype=np.float64), np.asarray(split.labels, dtype=np.int64)
    xs, y = split
    return np.asarray(xs, dtype=np.float64), np.asarray(y, dtype=np.int64)


def _evaluate(model, xs, y, batch=256):
    z = np.concatenate([model.logits(xs[i:i + batch]) for i in range(0, len(xs), batch)])
    if not np.isfinite(z).all():
        return math.nan, 0.0  # the clamped loss would hide overflowed logits
    probs = model._probs(z)
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return _nll(probs, y), acc


def train_sgd(model, train, val, config: SgdConfig):
    """Mini-batch SGD on mean cross-entropy. Returns ``(trained_copy, history)``.

    ``train`` and ``val`` are datasets (``.images``/``.labels``) or
    ``(images, labels)`` pairs. The input model is not modified.
    """
    xs, y = _xy(train)
    vx, vy = _xy(val)
    if len(xs) == 0 or len(vx) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if model.n_classes == 2:
        _check_binary(y)
    if config.epochs < 0 or config.batch_size < 1 or config.learning_rate < 0:
        raise ValueError(f"invalid config {config}")

    model = model.copy()
    rng = np.random.default_rng(config.seed)
    hist = TrainHistory()
    n = len(xs)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        # overflow is detected below, so numpy's warnings would only be noise
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                _, grads = model.loss_and_grads(xs[idx], y[idx])
                for k, g in grads.items():
                    model.params[k] = model.params[k] - config.learning_rate * g
            tl, ta = _evaluate(model, xs, y)
            vl, va = _evaluate(model, vx, vy)
        if not math.isfinite(tl) or not all(np.isfinite(p).all() for p in model.params.values()):
            raise TrainingDivergedError(epoch, tl)
        if not math.isfinite(vl):
            raise TrainingDivergedError(epoch, vl)
        hist.train_loss.append(tl)
        hist.train_acc.append(ta)
        hist.val_loss.append(vl)
        hist.val_acc.append(va)
    return model, hist


# ---------------------------------------------------------------------------
# checkpoints: <stem>.json manifest + <stem>.tensors (TENSOR v1 blocks)
# ---------------------------------------------------------------------------

def save_model(model, path) -> Path:
    """Write ``<path>.json`` and ``<path>.tensors``; returns the manifest path."""
    stem = Path(path)
    if stem.suffix == ".json":
        stem = stem.with_suffix("")
    names = list(model.params)
    arrays = [model.params[k] for k in names]
    manifest = {
        "format": "xensemble-model v1",
        "kind": model.kind,
        "name": model.name,
        "class_count": model.n_classes,
        "input_shape": list(model.input_shape),
        "seed": model.seed,
        "tensor_file": stem.name + ".tensors",
        "tensors": [{"name": k, "shape": list(model.params[k].shape)} for k in names],
    }
    if isinstance(model, SmallCnn):
        manifest["layers"] = (
            [{"kind": "conv", "out_channels": c, "kernel": model.kernel_size, "activation": "relu", "pool": p}
             for c, p in zip(model.conv_channels, model.pool)]
            + [{"kind": "dense", "units": u, "activation": "relu"} for u in model.hidden]
            + [{"kind": "dense", "units": model.n_outputs,
                "activation": "sigmoid" if model.n_outputs == 1 else "softmax"}]
        )
    else:
        manifest["layers"] = [{"kind": "dense", "units": 1, "activation": "sigmoid"}]
        if model.pca is not None:
            manifest["pca"] = {"n_components": model.pca.n_components, "dim": model.pca.dim}
            for k, a in model.pca.named_arrays().items():
                names.append("pca." + k)
                arrays.append(a)
                manifest["tensors"].append({"name": "pca." + k, "shape": list(np.shape(a))})
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_tensors(stem.with_suffix(".tensors"), arrays)
    out = stem.with_suffix(".json")
    out.write_text(json.dumps(manifest, indent=2) + "\n")
    return out


def load_model(path):
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    manifest = json.loads(path.read_text())
    if manifest.get("format") != "xensemble-model v1":
        raise ValueError(f"{path}: not a model manifest")
    tensors = read_tensors(path.parent / manifest["tensor_file"])
    if len(tensors) != len(manifest["tensors"]):
        raise ValueError(f"{path}: manifest lists {len(manifest['tensors'])} tensors, file has {len(tensors)}")
    arrays = {}
    for spec, t in zip(manifest["tensors"], tensors):
        if t.shape != spec["shape"]:
            raise ValueError(f"{path}: tensor {spec['name']} has shape {t.shape}, manifest says {spec['shape']}")
        arrays[spec["name"]] = np.array(t.numpy())
    if manifest["kind"] == "cnn":
        convs = [l for l in manifest["layers"] if l["kind"] == "conv"]
        dense = [l for l in manifest["layers"] if l["kind"] == "dense"]
        model = SmallCnn(
            manifest["input_shape"],
            [l["out_channels"] for l in convs],
            pool=[l["pool"] for l in convs],
            hidden=[l["units"] for l in dense[:-1]],
            n_outputs=dense[-1]["units"],
            kernel_size=convs[0]["kernel"],
            name=manifest["name"],
            seed=manifest["seed"],
        )
    elif manifest["kind"] == "logistic":
        pca = None
        if "pca" in manifest:
            pca = PcaModel.from_arrays({k[4:]: v for k, v in arrays.items() if k.startswith("pca.")})
        model = LogisticModel(manifest["input_shape"], name=manifest["name"], pca=pca, seed=manifest["seed"])
    else:
        raise ValueError(f"{path}: unknown model kind {manifest['kind']!r}")
    for k in model.params:
        if arrays[k].shape != model.params[k].shape:
            raise ValueError(f"{path}: tensor {k} shape mismatch")
        model.params[k] = arrays[k]
    return model
