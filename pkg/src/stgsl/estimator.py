"""Scikit-learn style front end for the spatio-temporal graph classifier."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .data import BoldSeries
from .train_eval import TrainConfig, predict_subject, train
from .rng import substream


def _check_series_array(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 3:
        raise ValueError(
            f"expected X of shape (n_subjects, n_rois, n_timepoints), got {X.shape}")
    if X.shape[1] < 2:
        raise ValueError("need at least 2 ROIs")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    return X


class StgcClassifier(BaseEstimator, ClassifierMixin):
    """Binary classifier over multichannel time series.

    fit expects X of shape (n_subjects, n_rois, n_timepoints) and binary
    y; a stratified validation split is carved from the training data for
    checkpoint selection. predict_proba averages window-level sigmoid
    outputs per subject.
    """

    def __init__(self, epochs=100, batch_size=16, lr=3e-4, weight_decay=1e-3,
                 window=12, sparsity_weight=1e-4, temperature=0.2, dropout=0.5,
                 channels=64, n_blocks=3, patience=20, eval_stride=1,
                 validation_fraction=0.1, random_state=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.window = window
        self.sparsity_weight = sparsity_weight
        self.temperature = temperature
        self.dropout = dropout
        self.channels = channels
        self.n_blocks = n_blocks
        self.patience = patience
        self.eval_stride = eval_stride
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            weight_decay=self.weight_decay, window=self.window,
            sparsity_weight=self.sparsity_weight, temperature=self.temperature,
            dropout=self.dropout, channels=self.channels,
            n_blocks=self.n_blocks, patience=self.patience,
            eval_stride=self.eval_stride,
            validation_fraction=self.validation_fraction,
            seed=self.random_state)

    def fit(self, X, y):
        X = _check_series_array(X)
        y = np.asarray(y, dtype=int)
        if y.shape != (X.shape[0],):
            raise ValueError("y length must match the number of subjects")
        classes = np.unique(y)
        if not np.array_equal(classes, [0, 1]):
            raise ValueError(f"y must contain both classes 0 and 1, got {classes}")
        if X.shape[2] < self.window:
            raise ValueError("series shorter than the training window")

        series = [BoldSeries(f"s{i:04d}", int(y[i]), X[i]) for i in range(len(y))]
        # stratified validation carve-out
        rng = substream(self.random_state, "folds")
        val_idx = []
        for c in (0, 1):
            members = np.flatnonzero(y == c)
            n_val = max(1, int(round(self.validation_fraction * len(members))))
            val_idx.extend(rng.choice(members, size=n_val, replace=False))
        val_set = [series[i] for i in sorted(val_idx)]
        train_set = [series[i] for i in range(len(series)) if i not in set(val_idx)]

        self.model_, self.history_ = train(self._config(), train_set, val_set,
                                           seed=self.random_state)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit before predicting")

    def predict_proba(self, X):
        self._check_fitted()
        X = _check_series_array(X)
        probs = np.array([
            predict_subject(self.model_,
                            BoldSeries(f"q{i:04d}", 0, X[i]),
                            self.window, self.eval_stride)
            for i in range(X.shape[0])])
        return np.column_stack([1.0 - probs, probs])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)

    def decision_function(self, X):
        return self.predict_proba(X)[:, 1] - 0.5
