"""Explainable voting ensembles: base predictors, majority voting, LIME, Shapley and Grad-CAM."""

from ._kernels import backend
from .data import Dataset, load_dataset, make_synthetic_dataset, split
from .ensemble import VoteRecord, VotingEnsemble, WeightedConfig, ensemble_predict, majority_vote, weighted_vote
from .gradcam import explain_gradcam
from .lime import explain_lime, segment_image
from .metrics import confusion, prf1_accuracy, roc_auc
from .models import LogisticModel, SmallCnn, bce_loss, bce_per_class, load_model, save_model, train_sgd
from .shap import exact_shapley, explain_shap, sampled_shapley
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Dataset", "load_dataset", "make_synthetic_dataset", "split",
    "VoteRecord", "VotingEnsemble", "WeightedConfig", "ensemble_predict", "majority_vote", "weighted_vote",
    "explain_gradcam", "explain_lime", "segment_image", "exact_shapley", "explain_shap", "sampled_shapley",
    "confusion", "prf1_accuracy", "roc_auc",
    "LogisticModel", "SmallCnn", "bce_loss", "bce_per_class", "load_model", "save_model", "train_sgd",
    "Tensor", "backend",
]
