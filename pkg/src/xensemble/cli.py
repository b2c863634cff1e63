"""Batch command line: make-synthetic, train, evaluate, explain, predict.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
Every command is deterministic given ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import CLASS_DIRS, DatasetError, load_dataset, make_synthetic_dataset, split, write_dataset
from .ensemble import EnsembleError, VotingEnsemble, WeightedConfig, ensemble_predict
from .gradcam import CapabilityError, explain_gradcam
from .lime import LimeConfig, SingularSystemError, explain_lime, render_lime_mask, segment_image
from .metrics import confusion, prf1_accuracy, roc_auc
from .models import LayerShapeError, LogisticModel, SgdConfig, SmallCnn, TrainingDivergedError, load_model, save_model, train_sgd
from .netpbm import NetpbmError, read_image, write_image
from .pca import pca_fit
from .seeding import subseed
from .shap import ShapConfig, explain_shap, render_shap

log = logging.getLogger("xensemble")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

MODEL_KINDS = ("cnn", "logistic", "pca-logistic")
# per-kind SGD defaults: epochs, learning rate, batch size
CNN_HIDDEN = (32,)
TRAIN_DEFAULTS = {
    "cnn": (20, 0.02, 16),
    "logistic": (40, 0.05, 16),
    "pca-logistic": (40, 0.1, 16),
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _csv_list(text: str | None) -> list[str]:
    return [t.strip() for t in (text or "").split(",") if t.strip()]


def _weights(text: str | None, m: int) -> WeightedConfig:
    if not text:
        return WeightedConfig.uniform(m)
    try:
        w = tuple(float(t) for t in _csv_list(text))
    except ValueError:
        raise UsageError(f"--weights must be comma-separated numbers, got {text!r}") from None
    if len(w) != m:
        raise UsageError(f"--weights has {len(w)} values for {m} models")
    try:
        return WeightedConfig(w)
    except EnsembleError as exc:
        raise UsageError(str(exc)) from None


def _load_models(text: str | None):
    paths = _csv_list(text)
    if not paths:
        raise UsageError("--models needs at least one checkpoint")
    models = []
    for p in paths:
        if not Path(p).with_suffix(".json").exists():
            raise DatasetError(f"checkpoint {p} not found")
        models.append(load_model(p))
    return models


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _check_shape(models, shape) -> None:
    for m in models:
        if tuple(m.input_shape) != tuple(shape):
            raise DatasetError(
                f"checkpoint {m.name!r} expects input {list(m.input_shape)}, data has {list(shape)}"
            )


def _batched_proba(model, xs, batch=256):
    return np.concatenate([model.predict_proba_batch(xs[i:i + batch]) for i in range(0, len(xs), batch)])


def _nll(p1, y):
    from .models import bce_loss
    return bce_loss(p1, y)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_make_synthetic(args) -> int:
    ds = make_synthetic_dataset(args.n_per_class, args.size, args.seed)
    out = Path(args.out)
    write_dataset(ds, out)
    print(f"wrote {len(ds)} images to {out}")
    return EXIT_OK


def _build_model(kind, name, shape, train, args):
    seed = subseed(args.seed, "model", name)
    if kind == "cnn":
        return SmallCnn(shape, hidden=CNN_HIDDEN, name=name, seed=seed)
    if kind == "logistic":
        return LogisticModel(shape, name=name, seed=seed)
    k = min(args.pca_components, len(train) - 1, int(np.prod(shape)))
    pca = pca_fit(train.images.reshape(len(train), -1), k)
    return LogisticModel(shape, name=name, pca=pca, seed=seed)


def _data_dir(text: str) -> Path:
    path = Path(text)
    if not path.is_dir():
        raise UsageError(f"--data {text!r} is not a directory")
    return path


def cmd_train(args) -> int:
    kinds = _csv_list(args.models) or list(MODEL_KINDS)
    for k in kinds:
        if k not in MODEL_KINDS:
            raise UsageError(f"unknown model kind {k!r}; choose from {', '.join(MODEL_KINDS)}")
    ds = load_dataset(_data_dir(args.data))
    train, val = split(ds, args.train_fraction, args.seed)
    if len(train) == 0 or len(val) == 0:
        raise DatasetError("train and validation splits must both be non-empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seen: dict[str, int] = {}
    for kind in kinds:
        seen[kind] = seen.get(kind, 0) + 1
        name = kind if kinds.count(kind) == 1 else f"{kind}-{seen[kind]}"
        epochs, lr, bs = TRAIN_DEFAULTS[kind]
        cfg = SgdConfig(
            epochs=args.epochs if args.epochs is not None else epochs,
            learning_rate=args.lr if args.lr is not None else lr,
            batch_size=args.batch_size if args.batch_size is not None else bs,
            seed=subseed(args.seed, "sgd", name),
        )
        model = _build_model(kind, name, ds.image_shape, train, args)
        model, hist = train_sgd(model, train, val, cfg)
        save_model(model, out / name)
        (out / f"{name}.history.csv").write_text(hist.to_csv())
        _write_json(out / f"{name}.history.json", hist.to_dict())
        print(f"{name}: train_acc={hist.train_acc[-1]:.4f} val_acc={hist.val_acc[-1]:.4f}" if len(hist) else name)
    return EXIT_OK


def _row(name, p1_train, y_train, p1_val, y_val, pred_train, pred_val):
    cm = confusion(pred_val, y_val)
    scores = prf1_accuracy(cm)
    row = {
        "model": name,
        "precision": scores["precision"],
        "recall": scores["recall"],
        "f1": scores["f1"],
        "train_accuracy": float(np.mean(pred_train == y_train)),
        "train_loss": _nll(p1_train, y_train),
        "val_accuracy": scores["accuracy"],
        "val_loss": _nll(p1_val, y_val),
        "confusion": cm.to_dict(),
        "degenerate": scores["degenerate"],
    }
    return row, cm


def cmd_evaluate(args) -> int:
    models = _load_models(args.models)
    config = _weights(args.weights, len(models))
    ds = load_dataset(_data_dir(args.data))
    _check_shape(models, ds.image_shape)
    train, val = split(ds, args.train_fraction, args.seed)
    if len(val) == 0:
        raise DatasetError("validation set is empty")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    for m in models:
        pt, pv = _batched_proba(m, train.images), _batched_proba(m, val.images)
        row, _ = _row(m.name, pt[:, 1], train.labels, pv[:, 1], val.labels, pt.argmax(1), pv.argmax(1))
        if len(np.unique(val.labels)) == 2:
            curve, row["auc"] = roc_auc(pv[:, 1], val.labels)
            (out / f"roc_{m.name}.csv").write_text(curve.to_csv())
        rows.append(row)

    ens = VotingEnsemble(models, config.weights)
    mean_t, mean_v = ens.mean_proba_batch(train.images)[:, 1], ens.mean_proba_batch(val.images)[:, 1]
    pred_t, pred_v = ens.predict(train.images), ens.predict(val.images)
    row, cm = _row("ensemble", mean_t, train.labels, mean_v, val.labels, pred_t, pred_v)
    if len(np.unique(val.labels)) == 2:
        curve, row["auc"] = roc_auc(mean_v, val.labels)
        (out / "roc.csv").write_text(curve.to_csv())
    rows.append(row)

    _write_json(out / "metrics.json", rows)
    _write_json(out / "confusion.json", cm.to_dict())
    for r in rows:
        print(f"{r['model']}: val_acc={r['val_accuracy']:.4f} f1={r['f1']:.4f}")
    return EXIT_OK


def _baseline(args) -> float:
    if args.baseline is not None:
        return float(args.baseline)
    if args.data:
        return load_dataset(_data_dir(args.data)).mean_intensity()
    return 0.0


def cmd_explain(args) -> int:
    models = _load_models(args.models)
    if len(models) != 1:
        raise UsageError("explain takes exactly one checkpoint")
    model = models[0]
    methods = ["lime", "shap", "gradcam"] if args.method == "all" else [args.method]
    if "gradcam" in methods and not isinstance(model, SmallCnn):
        raise CapabilityError(f"gradcam needs a convolutional checkpoint; {model.name!r} is {model.kind}")
    image = read_image(args.image)
    _check_shape(models, image.shape)
    image_id = Path(args.image).stem
    cls = args.class_index if args.class_index is not None else int(np.argmax(model.predict_proba(image)))
    if not 0 <= cls < model.n_classes:
        raise UsageError(f"--class {cls} out of range for {model.n_classes} classes")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    baseline = _baseline(args)
    mask = segment_image(image, args.segments)

    if "lime" in methods:
        cfg = LimeConfig(
            grid_size=args.segments, n_samples=args.samples, kernel_width=args.sigma, ridge=args.ridge,
            top_k=min(args.topk, mask.n_segments), class_index=cls, baseline=baseline,
            seed=subseed(args.seed, "explain", "lime"),
        )
        exp = explain_lime(model, image, cfg, mask)
        d = exp.to_dict()
        d.update(image_id=image_id, model=model.name, grid_size=args.segments, baseline=baseline)
        _write_json(out / f"{image_id}.lime.json", d)
        write_image(out / f"{image_id}.lime.pgm", render_lime_mask(image, mask, exp))
    if "shap" in methods:
        cfg = ShapConfig(class_index=cls, baseline=baseline, mode=args.shap_mode, budget=args.budget,
                         seed=subseed(args.seed, "explain", "shap"))
        exp = explain_shap(model, image, mask, cfg)
        img, legend = render_shap(mask, exp)
        d = exp.to_dict()
        d.update(image_id=image_id, model=model.name, grid_size=args.segments, legend=legend)
        _write_json(out / f"{image_id}.shap.json", d)
        write_image(out / f"{image_id}.shap.pgm", img)
    if "gradcam" in methods:
        hm = explain_gradcam(model, image, cls)
        d = hm.to_dict()
        d.update(image_id=image_id, model=model.name)
        _write_json(out / f"{image_id}.gradcam.json", d)
        peak = hm.upsampled.max()
        write_image(out / f"{image_id}.gradcam.pgm", hm.upsampled / peak if peak > 0 else hm.upsampled)
    print(f"explained {image_id} (class {cls}) with {', '.join(methods)}")
    return EXIT_OK


def cmd_predict(args) -> int:
    models = _load_models(args.models)
    config = _weights(args.weights, len(models))
    if not args.images:
        raise UsageError("predict needs at least one image")
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    for path in args.images:
        image = read_image(path)
        _check_shape(models, image.shape)
        rec = ensemble_predict(models, image, config, input_id=Path(path).stem)
        if out:
            (out / f"{rec.input_id}.vote.json").write_text(rec.to_json())
        print(f"final_prediction: {CLASS_DIRS[rec.final]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xensemble", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data_required=False):
        sp.add_argument("--seed", type=int, default=42)
        sp.add_argument("--out", default="out")
        sp.add_argument("--data", required=data_required)
        sp.add_argument("--train-fraction", type=float, default=0.8)

    sp = sub.add_parser("make-synthetic", help="write a synthetic lesion dataset")
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n-per-class", type=int, default=200)
    sp.add_argument("--size", type=int, default=28)
    sp.set_defaults(func=cmd_make_synthetic)

    sp = sub.add_parser("train", help="train base models and write checkpoints")
    common(sp, data_required=True)
    sp.add_argument("--models", default=",".join(MODEL_KINDS), help="comma-separated model kinds")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--pca-components", type=int, default=16)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="metrics for each model and the voting ensemble")
    common(sp, data_required=True)
    sp.add_argument("--models", required=True, help="comma-separated checkpoint manifests")
    sp.add_argument("--weights")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("explain", help="LIME / SHAP / Grad-CAM for one image")
    common(sp)
    sp.add_argument("--models", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--method", choices=("lime", "shap", "gradcam", "all"), default="all")
    sp.add_argument("--segments", type=int, default=7, help="grid size; segments = size^2")
    sp.add_argument("--samples", type=int, default=1000)
    sp.add_argument("--sigma", type=float, default=0.25)
    sp.add_argument("--lambda", dest="ridge", type=float, default=1e-3)
    sp.add_argument("--topk", type=int, default=10)
    sp.add_argument("--class", dest="class_index", type=int)
    sp.add_argument("--baseline", type=float)
    sp.add_argument("--shap-mode", choices=("auto", "exact", "sampled"), default="auto")
    sp.add_argument("--budget", type=int, default=200, help="permutations for sampled SHAP")
    sp.set_defaults(func=cmd_explain)

    sp = sub.add_parser("predict", help="ensemble vote for each image")
    sp.add_argument("--seed", type=int, default=42)
    sp.add_argument("--models", required=True)
    sp.add_argument("--weights")
    sp.add_argument("--out")
    sp.add_argument("images", nargs="*")
    sp.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, CapabilityError, EnsembleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, NetpbmError, LayerShapeError, FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, SingularSystemError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
