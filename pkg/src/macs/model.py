"""L2-regularized logistic regression with cross-validated regularization.

Objective (labels in {+1, -1}, intercept unpenalized)::

    J(w, b) = mean_i log(1 + exp(-y_i (w . x_i + b))) + (lam / 2) ||w||^2

Minimized with scipy's L-BFGS-B, which stops on the max-norm of the gradient;
the final gradient is re-checked here against ``gradient_tolerance``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import expit

from .errors import ConfigError, ConvergenceError, FoldingError, InputError, TrainingError
from .selection import roc_auc
from .stats import RngSpec

# mean log-loss on unit-norm TF-IDF rows needs far weaker penalties than 1e-2
DEFAULT_LAMBDA_GRID = tuple(float(x) for x in np.logspace(-9, -3, 13))


@dataclass
class TrainConfig:
    lambda_grid: tuple = DEFAULT_LAMBDA_GRID
    cv_folds: int = 5
    max_iterations: int = 500
    gradient_tolerance: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        self.lambda_grid = tuple(float(x) for x in self.lambda_grid)
        g = self.lambda_grid
        if not g or any(x <= 0 for x in g) or any(b <= a for a, b in zip(g, g[1:])):
            raise ConfigError("lambda_grid must be non-empty, positive and strictly increasing")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be at least 2")
        if self.max_iterations < 1 or self.gradient_tolerance <= 0:
            raise ConfigError("max_iterations and gradient_tolerance must be positive")

    def to_dict(self):
        return {
            "lambda_grid": list(self.lambda_grid),
            "cv_folds": self.cv_folds,
            "max_iterations": self.max_iterations,
            "gradient_tolerance": self.gradient_tolerance,
            "seed": self.seed,
        }


@dataclass(eq=False)
class TrainedModel:
    weights: np.ndarray
    intercept: float
    reg_lambda: float
    vocab_fingerprint: str = ""
    iterations: int = 0

    def __eq__(self, other):
        # bit-level equality of the fitted parameters; iteration count is bookkeeping
        if not isinstance(other, TrainedModel):
            return NotImplemented
        return (np.array_equal(self.weights, other.weights) and self.intercept == other.intercept
                and self.reg_lambda == other.reg_lambda and self.vocab_fingerprint == other.vocab_fingerprint)

    def to_dict(self):
        nz = np.nonzero(self.weights)[0]
        return {
            "n_features": int(self.weights.size),
            "weights": {str(int(j)): float(self.weights[j]) for j in nz},
            "intercept": float(self.intercept),
            "reg_lambda": float(self.reg_lambda),
            "vocab_fingerprint": self.vocab_fingerprint,
        }

    @classmethod
    def from_dict(cls, d):
        w = np.zeros(int(d["n_features"]))
        for k, v in d["weights"].items():
            w[int(k)] = v
        return cls(w, float(d["intercept"]), float(d["reg_lambda"]), d.get("vocab_fingerprint", ""))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def as_matrix(features, n_features=None) -> sp.csr_matrix:
    """Accept a CSR matrix, a dense array, or a list of SparseVectors."""
    if sp.issparse(features):
        return sp.csr_matrix(features, dtype=float)
    if isinstance(features, np.ndarray):
        return sp.csr_matrix(np.atleast_2d(features).astype(float))
    from .textfeat import to_matrix

    features = list(features)
    if n_features is None:
        n_features = max((int(v.indices.max()) + 1 for v in features if v.indices.size), default=0)
    return to_matrix(features, n_features)


def _labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=float)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InputError("labels must be +1 or -1")
    return y


def objective_and_gradient(w, b, features, labels, reg_lambda):
    """Exact J(w, b) and its gradient as (J, grad_w, grad_b)."""
    X = as_matrix(features, np.size(w))
    y = _labels(labels)
    w = np.asarray(w, dtype=float)
    return _objective(w, float(b), X, y, float(reg_lambda))


def _objective(w, b, X, y, lam):
    n = y.size
    margin = y * (X @ w + b)
    loss = np.logaddexp(0.0, -margin).sum() / n
    coef = -y * expit(-margin) / n
    grad_w = X.T @ coef + lam * w
    grad_b = float(coef.sum())
    return float(loss + 0.5 * lam * np.dot(w, w)), grad_w, grad_b


def fit_logreg(features, labels, reg_lambda: float, config: TrainConfig | None = None,
               init=None, vocab_fingerprint: str = "") -> TrainedModel:
    config = config or TrainConfig()
    X = as_matrix(features)
    y = _labels(labels)
    if X.shape[0] != y.size or y.size < 2:
        raise InputError("features and labels must align and contain at least two rows")
    if np.all(y == y[0]):
        raise TrainingError("training data contains a single class")
    if reg_lambda <= 0:
        raise InputError("reg_lambda must be positive")
    d = X.shape[1]
    x0 = np.zeros(d + 1) if init is None else np.concatenate([np.asarray(init[0], float), [float(init[1])]])

    def fun(theta):
        J, gw, gb = _objective(theta[:-1], theta[-1], X, y, reg_lambda)
        return J, np.append(gw, gb)

    res = minimize(
        fun, x0, jac=True, method="L-BFGS-B",
        options={"maxiter": config.max_iterations, "gtol": config.gradient_tolerance,
                 "ftol": 0.0, "maxcor": 20},
    )
    theta = res.x
    _, gw, gb = _objective(theta[:-1], theta[-1], X, y, reg_lambda)
    gnorm = max(float(np.max(np.abs(gw))) if d else 0.0, abs(gb))
    if gnorm > config.gradient_tolerance:
        theta, gnorm = _newton_polish(theta, X, y, reg_lambda, config, steps=min(20, config.max_iterations))
    if gnorm > config.gradient_tolerance or not np.all(np.isfinite(theta)):
        raise ConvergenceError(f"logistic regression did not converge: {res.message}", gnorm)
    return TrainedModel(theta[:-1].copy(), float(theta[-1]), float(reg_lambda), vocab_fingerprint,
                        int(res.nit))


def _newton_polish(theta, X, y, lam, config, steps=20):
    """A few Newton-CG steps when L-BFGS stalls in its line search near the optimum."""
    n, d = X.shape
    Xb = sp.hstack([X, np.ones((n, 1))], format="csr")
    reg = np.full(d + 1, lam)
    reg[-1] = 0.0
    for _ in range(steps):
        _, gw, gb = _objective(theta[:-1], theta[-1], X, y, lam)
        g = np.append(gw, gb)
        if np.max(np.abs(g)) <= config.gradient_tolerance:
            break
        p = expit(y * (Xb @ theta))
        s = p * (1 - p) / n

        def hv(v):
            return Xb.T @ (s * (Xb @ v)) + reg * v

        op = LinearOperator((d + 1, d + 1), matvec=hv, dtype=float)
        step, _ = cg(op, -g, rtol=1e-10, maxiter=200)
        theta = theta + step
    _, gw, gb = _objective(theta[:-1], theta[-1], X, y, lam)
    gnorm = float(np.max(np.abs(np.append(gw, gb))))
    return theta, gnorm


def predict_linear(model: TrainedModel, features) -> np.ndarray:
    X = as_matrix(features, model.weights.size)
    if X.shape[1] != model.weights.size:
        raise InputError("feature dimension does not match the model")
    return X @ model.weights + model.intercept


def predict_score(model: TrainedModel, x, vocab_fingerprint: str | None = None):
    """Sigmoid score(s); a single SparseVector gives a float, a matrix an array."""
    if vocab_fingerprint is not None and model.vocab_fingerprint and vocab_fingerprint != model.vocab_fingerprint:
        raise InputError("vocabulary fingerprint does not match the trained model")
    if hasattr(x, "indices") and hasattr(x, "values") and not sp.issparse(x):
        z = float(np.dot(model.weights[x.indices], x.values) + model.intercept)
        return float(expit(z))
    return expit(predict_linear(model, x))


# --------------------------------------------------------------------------
# Cross-validation
# --------------------------------------------------------------------------


def stratified_folds(labels, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row: each class shuffled separately and dealt round-robin."""
    y = np.asarray(labels)
    fold = np.empty(y.size, dtype=int)
    offset = 0
    for cls in (1, -1):
        idx = np.nonzero(y == cls)[0]
        idx = idx[rng.permutation(idx.size)]
        fold[idx] = (np.arange(idx.size) + offset) % k
        offset += idx.size
    for f in range(k):
        members = y[fold == f]
        if not (np.any(members == 1) and np.any(members == -1)):
            raise FoldingError(f"fold {f} lost a class; use at most {min((y == 1).sum(), (y == -1).sum())} folds")
    return fold


@dataclass
class CVResult:
    best_lambda: float
    mean_auc: dict
    fold_auc: dict

    def to_dict(self):
        return {
            "best_lambda": self.best_lambda,
            "mean_auc": {repr(k): v for k, v in self.mean_auc.items()},
            "fold_auc": {repr(k): v for k, v in self.fold_auc.items()},
        }


def cross_validate_lambda(features, labels, config: TrainConfig | None = None, workers: int = 1) -> CVResult:
    """Mean held-out AUC per lambda; best lambda wins, ties go to the larger one."""
    config = config or TrainConfig()
    X = as_matrix(features)
    y = _labels(labels)
    fold = stratified_folds(y, config.cv_folds, RngSpec(config.seed).generator(0))

    jobs = [(lam, f) for lam in config.lambda_grid for f in range(config.cv_folds)]

    def run(job):
        lam, f = job
        train, test = fold != f, fold == f
        m = fit_logreg(X[train], y[train], lam, config)
        return roc_auc(predict_linear(m, X[test]), y[test] > 0)[0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            aucs = list(pool.map(run, jobs))
    else:
        aucs = [run(j) for j in jobs]

    fold_auc = {lam: [] for lam in config.lambda_grid}
    for (lam, _), a in zip(jobs, aucs):
        fold_auc[lam].append(float(a))
    mean_auc = {lam: float(np.mean(v)) for lam, v in fold_auc.items()}
    best = max(config.lambda_grid, key=lambda lam: (mean_auc[lam], lam))
    return CVResult(best, mean_auc, fold_auc)
