"""Few-shot task heads on frozen pooled embeddings."""
from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


def _standardizer(X: np.ndarray, enabled: bool) -> tuple[np.ndarray, np.ndarray]:
    if not enabled:
        return np.zeros(X.shape[1]), np.ones(X.shape[1])
    scale = X.std(0)
    # features that do not vary across the few labeled points are left unscaled
    scale[scale < 1e-6] = 1.0
    return X.mean(0), scale


class FewShotPhaseClassifier(ClassifierMixin, BaseEstimator):
    """softmax(W z + b) trained full-batch with Adam and plateau early stopping.

    Features are standardized with the training-set statistics first, which
    is an affine reparametrization of the same head.
    """

    def __init__(self, max_steps=500, lr=0.05, patience=50, tol=1e-6, weight_decay=0.0,
                 standardize=True, random_state=0):
        self.max_steps = max_steps
        self.lr = lr
        self.patience = patience
        self.tol = tol
        self.weight_decay = weight_decay
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("fine-tuning a classifier needs at least two classes in the labeled set")
        self.n_features_in_ = X.shape[1]
        self.mean_, self.scale_ = _standardizer(X, self.standardize)
        targets = torch.as_tensor(np.searchsorted(self.classes_, y))
        Xt = torch.as_tensor((X - self.mean_) / self.scale_, dtype=torch.float64)

        gen = torch.Generator().manual_seed(int(self.random_state or 0))
        head = torch.nn.Linear(X.shape[1], len(self.classes_)).double()
        with torch.no_grad():
            bound = 1.0 / np.sqrt(X.shape[1])
            head.weight.copy_(torch.empty_like(head.weight).uniform_(-bound, bound, generator=gen))
            head.bias.zero_()
        opt = torch.optim.Adam(head.parameters(), lr=self.lr, weight_decay=self.weight_decay)
        best, stale = np.inf, 0
        self.loss_curve_ = []
        for _ in range(self.max_steps):
            opt.zero_grad()
            loss = torch.nn.functional.cross_entropy(head(Xt), targets)
            loss.backward()
            opt.step()
            value = loss.item()
            self.loss_curve_.append(value)
            if value < best - self.tol:
                best, stale = value, 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        self.coef_ = head.weight.detach().numpy().copy()
        self.intercept_ = head.bias.detach().numpy().copy()
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return ((X - self.mean_) / self.scale_) @ self.coef_.T + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        logits = logits - logits.max(1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


class FewShotEnergyRegressor(RegressorMixin, BaseEstimator):
    """Closed-form ridge head W z + b (intercept unpenalized)."""

    def __init__(self, alpha=1e-3, standardize=True):
        self.alpha = alpha
        self.standardize = standardize

    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        self.mean_, self.scale_ = _standardizer(X, self.standardize)
        Xs = (X - self.mean_) / self.scale_
        xm, ym = Xs.mean(0), y.mean()
        Xc, yc = Xs - xm, y - ym
        d = X.shape[1]
        # solve in the smaller of the sample / feature spaces
        if X.shape[0] < d:
            a = np.linalg.solve(Xc @ Xc.T + self.alpha * np.eye(X.shape[0]), yc)
            w = Xc.T @ a
        else:
            w = np.linalg.solve(Xc.T @ Xc + self.alpha * np.eye(d), Xc.T @ yc)
        self.coef_ = w
        self.intercept_ = ym - xm @ w
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return ((X - self.mean_) / self.scale_) @ self.coef_ + self.intercept_
