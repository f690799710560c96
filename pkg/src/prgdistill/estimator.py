"""Scikit-learn style front door.

``PRGDistiller`` wraps the whole pipeline behind ``fit`` / ``predict`` /
``predict_proba`` / ``score`` with flat ``get_params`` hyperparameters, so
the distiller drops into sklearn tooling (clone, grid search, pipelines).
``fit`` takes a teacher bundle (object or directory path) instead of an
(X, y) pair: the training signal is the frozen teacher, never labels.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .autodiff import softmax_rows_np
from .bundle import TeacherBundle, load_bundle
from .errors import StateError, ValidationError
from .student import forward
from .trainer import TrainConfig, evaluate, train
from .validation import as_matrix, check_finite


class PRGDistiller(BaseEstimator):
    """Distill a small classifier from an exported zero-shot teacher.

    Parameters mirror the trainer configuration; see
    :class:`~prgdistill.trainer.TrainConfig` for semantics and defaults.
    """

    def __init__(self, epochs=150, batch_size=64, lr_max=0.03, weight_decay=0.05,
                 t0=10, t_mult=2, lr_min=0.0, lambda_node=0.4, lambda_edge=0.2,
                 alpha=None, tau=100.0, seed=0, mode="prg", kd_temperature=4.0,
                 reduction="frobenius", standardize_nodes=False,
                 backbone_hidden=(128,), feature_dim=64):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr_max = lr_max
        self.weight_decay = weight_decay
        self.t0 = t0
        self.t_mult = t_mult
        self.lr_min = lr_min
        self.lambda_node = lambda_node
        self.lambda_edge = lambda_edge
        self.alpha = alpha
        self.tau = tau
        self.seed = seed
        self.mode = mode
        self.kd_temperature = kd_temperature
        self.reduction = reduction
        self.standardize_nodes = standardize_nodes
        self.backbone_hidden = backbone_hidden
        self.feature_dim = feature_dim

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, epochs=self.epochs, lr_max=self.lr_max,
            weight_decay=self.weight_decay, t0=self.t0, t_mult=self.t_mult,
            lr_min=self.lr_min, lambda_node=self.lambda_node,
            lambda_edge=self.lambda_edge, alpha=self.alpha, tau=self.tau,
            seed=self.seed, mode=self.mode, kd_temperature=self.kd_temperature,
            reduction=self.reduction, standardize_nodes=self.standardize_nodes,
        )

    def fit(self, X, y=None):
        """Train against a teacher bundle (a TeacherBundle or its path).

        ``y`` is ignored; its presence would contradict the annotation-free
        contract, so a non-None value is rejected.
        """
        if y is not None:
            raise ValidationError("fit() is annotation-free; do not pass labels")
        bundle = X if isinstance(X, TeacherBundle) else load_bundle(X)
        from .student import StudentConfig

        mani = bundle.manifest
        student_cfg = StudentConfig(
            input_dim=mani.input_dim,
            backbone_hidden=tuple(self.backbone_hidden),
            feature_dim=self.feature_dim,
            n_classes=mani.n_classes,
            teacher_dim=mani.feature_dim,
            init_seed=self.seed,
        )
        params, history = train(bundle, student_cfg, self._train_config())
        self.params_ = params
        self.history_ = history
        self.classes_ = np.arange(mani.n_classes)
        self.class_names_ = list(mani.class_names)
        self.n_features_in_ = mani.input_dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise StateError("this PRGDistiller instance is not fitted yet")

    def decision_function(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_finite(as_matrix(X, "X"), "X")
        return forward(self.params_, X).logits.value

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)

    def predict_proba(self, X) -> np.ndarray:
        return softmax_rows_np(self.decision_function(X))

    def score(self, X, y) -> float:
        """Plain accuracy; evaluation is where labels are allowed."""
        y = np.asarray(y)
        return float(np.mean(self.predict(X) == y))

    def teacher_agreement(self, bundle: TeacherBundle, split: str = "eval") -> float:
        """Fraction of the split where student and teacher argmax agree."""
        self._check_fitted()
        return evaluate(self.params_, bundle, split=split, tau=self.tau)["teacher_agreement"]
