"""L2-regularized logistic regression fitted by damped Newton iterations.

Binary problems fit a single model; multiclass problems fit one-vs-rest.
The solver is full-batch and deterministic, so refitting the same rows always
yields the same weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class EstimatorError(ValueError):
    pass


class SingleClassError(EstimatorError):
    pass


class EmptyDataError(EstimatorError):
    pass


@dataclass(frozen=True)
class LogisticConfig:
    l2: float = 1e-4
    fit_iters: int = 100
    tol: float = 1e-6


@dataclass
class LogisticModel:
    coef: np.ndarray  # (n_models, d)
    intercept: np.ndarray  # (n_models,)
    classes: np.ndarray
    num_classes: int
    config: LogisticConfig
    loss_history: list[list[float]] = field(default_factory=list, repr=False)

    @property
    def weights(self) -> np.ndarray:
        return self.coef[0] if self.num_classes == 2 else self.coef

    @property
    def bias(self):
        return float(self.intercept[0]) if self.num_classes == 2 else self.intercept

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coef.T + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        """P(y=1) for binary models, per-class OvR scores otherwise."""
        z = self.decision_function(np.asarray(X, dtype=float))
        p = _sigmoid(z)
        return p[:, 0] if self.num_classes == 2 else p

    def predict(self, X: np.ndarray) -> np.ndarray:
        z = self.decision_function(np.asarray(X, dtype=float))
        if self.num_classes == 2:
            return (z[:, 0] > 0).astype(np.int64)
        full = np.full((z.shape[0], self.num_classes), -np.inf)
        full[:, self.classes] = z
        return full.argmax(axis=1)


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _objective(A: np.ndarray, t: np.ndarray, beta: np.ndarray, l2: float) -> float:
    z = A @ beta
    # mean log(1 + exp(-s z)) with s = 2t-1, written stably
    nll = np.mean(np.logaddexp(0.0, z) - t * z)
    return float(nll + 0.5 * l2 * beta[:-1] @ beta[:-1])


def _newton_binary(X: np.ndarray, t: np.ndarray, cfg: LogisticConfig):
    m, d = X.shape
    A = np.empty((m, d + 1))
    A[:, :d] = X
    A[:, d] = 1.0
    reg = np.full(d + 1, cfg.l2)
    reg[d] = 1e-12  # keep the Hessian nonsingular without penalizing the bias
    beta = np.zeros(d + 1)
    loss = _objective(A, t, beta, cfg.l2)
    history = [loss]
    for _ in range(cfg.fit_iters):
        p = _sigmoid(A @ beta)
        grad = A.T @ (p - t) / m + reg * beta
        grad[d] -= 1e-12 * beta[d]
        w = p * (1.0 - p) / m
        H = (A.T * w) @ A
        H[np.diag_indices_from(H)] += reg
        step = np.linalg.solve(H, grad)
        scale = 1.0
        decrement = float(grad @ step)
        while True:
            cand = beta - scale * step
            new_loss = _objective(A, t, cand, cfg.l2)
            if new_loss <= loss - 1e-4 * scale * decrement or scale < 1e-10:
                break
            scale *= 0.5
        if new_loss > loss:
            break
        beta = cand
        history.append(new_loss)
        converged = scale * np.max(np.abs(step)) < cfg.tol or new_loss == loss
        loss = new_loss
        if converged:
            break
    return beta[:d], beta[d], history


def fit(
    features: np.ndarray,
    labels: np.ndarray,
    config: LogisticConfig | None = None,
    num_classes: int | None = None,
) -> LogisticModel:
    """Fit on (M, d) features and integer labels in [0, num_classes)."""
    cfg = config or LogisticConfig()
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels).astype(np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataError("cannot fit on an empty training set")
    if y.shape[0] != X.shape[0]:
        raise EstimatorError(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if X.shape[0] < 2:
        raise SingleClassError("need at least two rows")
    classes = np.unique(y)
    if classes.size < 2:
        raise SingleClassError(f"all labels equal {classes[0]}")
    k = int(num_classes) if num_classes is not None else int(max(2, y.max() + 1))
    if k == 2:
        w, b, hist = _newton_binary(X, (y == 1).astype(float), cfg)
        return LogisticModel(w[None, :], np.array([b]), np.array([0, 1]), 2, cfg, [hist])
    coefs, biases, hists = [], [], []
    for c in classes:
        w, b, hist = _newton_binary(X, (y == c).astype(float), cfg)
        coefs.append(w)
        biases.append(b)
        hists.append(hist)
    return LogisticModel(np.array(coefs), np.array(biases), classes, k, cfg, hists)


def accuracy(model: LogisticModel, features: np.ndarray, labels: np.ndarray) -> float:
    y = np.asarray(labels)
    if y.size == 0:
        raise EmptyDataError("cannot score an empty evaluation set")
    return float(np.count_nonzero(model.predict(features) == y)) / y.size


def is_degenerate(labels: np.ndarray) -> bool:
    """True when a fit would be refused (fewer than two rows or one class)."""
    y = np.asarray(labels)
    return y.size < 2 or bool(np.all(y == y[0]))


class SubsetScorer:
    """Validation accuracy of the inner model fitted on a subset of training rows.

    Degenerate subsets score 0. ``fit_count`` counts actual fits.
    """

    def __init__(
        self,
        features: np.ndarray,
        labels: np.ndarray,
        val_features: np.ndarray,
        val_labels: np.ndarray,
        config: LogisticConfig | None = None,
        num_classes: int | None = None,
    ):
        self.X = np.asarray(features, dtype=float)
        self.y = np.asarray(labels).astype(np.int64)
        self.X_val = np.asarray(val_features, dtype=float)
        self.y_val = np.asarray(val_labels).astype(np.int64)
        if self.y_val.size == 0:
            raise EmptyDataError("validation set is empty")
        self.config = config or LogisticConfig()
        self.num_classes = num_classes or int(max(2, self.y.max(initial=1) + 1, self.y_val.max() + 1))
        self.fit_count = 0

    def __len__(self) -> int:
        return self.y.size

    def fit(self, indices) -> LogisticModel | None:
        idx = np.asarray(indices, dtype=np.int64)
        if is_degenerate(self.y[idx]):
            return None
        self.fit_count += 1
        return fit(self.X[idx], self.y[idx], self.config, self.num_classes)

    def score(self, indices) -> float:
        model = self.fit(indices)
        if model is None:
            return 0.0
        return accuracy(model, self.X_val, self.y_val)

    def score_on(self, indices, X: np.ndarray, y: np.ndarray) -> float:
        model = self.fit(indices)
        return 0.0 if model is None else accuracy(model, X, y)
