"""Weighted linear classifiers for coreset and full-data training.

Both learners minimize a weighted empirical risk with an L2 penalty on the
coefficients (the intercept is never regularized):

    sum_i w_i * loss(y_i * (x_i . beta + b)) + ||beta||^2 / (2 C)

with labels mapped to {-1,+1} internally. The logistic loss is trained by
damped Newton iterations; the hinge loss by deterministic subgradient descent
with a fixed 1/t schedule and suffix averaging, so identical inputs always
produce identical models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.special import expit

LOSSES = ("logistic", "hinge")


class UnsupportedOperationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "logistic"
    regularization: float = 1.0
    tolerance: float = 1e-8
    max_iterations: int = 500
    fit_intercept: bool = True

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.regularization <= 0:
            raise ValueError("regularization C must be > 0")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "regularization": self.regularization,
            "tolerance": self.tolerance,
            "max_iterations": self.max_iterations,
            "fit_intercept": self.fit_intercept,
        }


@dataclass(frozen=True)
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    loss: str
    converged: bool
    regularization: float = 1.0

    def __post_init__(self):
        coef = np.asarray(self.coefficients, dtype=np.float64)
        object.__setattr__(self, "coefficients", coef)
        if not np.all(np.isfinite(coef)) or not np.isfinite(self.intercept):
            raise ValueError("model parameters must be finite")


def _as_pm_labels(labels: np.ndarray) -> np.ndarray:
    """{0,1} class ids to {-1,+1}."""
    labels = np.asarray(labels)
    uniq = set(np.unique(labels).tolist())
    if not uniq <= {0, 1}:
        raise ValueError(f"binary learner expects labels in {{0,1}}, got {sorted(uniq)}")
    return np.where(labels > 0, 1.0, -1.0)


def _check_train_inputs(features, labels, weights):
    n = features.shape[0]
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    if len(labels) != n or len(weights) != n:
        raise ValueError("features, labels, and weights must have equal length")
    feat_values = features.data if sp.issparse(features) else features
    if not np.all(np.isfinite(feat_values)):
        raise ValueError("features contain non-finite values")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("weights must be finite and >= 0")
    y_pm = _as_pm_labels(labels)
    pos = weights[y_pm > 0].sum()
    neg = weights[y_pm < 0].sum()
    if pos <= 0 or neg <= 0:
        raise ValueError("training needs positive weight in both classes")
    return y_pm, weights


def weighted_logistic_objective(coef: np.ndarray, intercept: float, features,
                                y_pm: np.ndarray, weights: np.ndarray,
                                C: float) -> float:
    """Weighted logistic loss plus ||coef||^2/(2C); intercept unpenalized."""
    z = features @ coef + intercept
    data = float(np.dot(weights, np.logaddexp(0.0, -y_pm * z)))
    return data + 0.5 * float(np.dot(coef, coef)) / C


def weighted_logistic_gradient(coef: np.ndarray, intercept: float, features,
                               y_pm: np.ndarray, weights: np.ndarray,
                               C: float) -> tuple[np.ndarray, float]:
    """Analytic gradient of :func:`weighted_logistic_objective`."""
    z = features @ coef + intercept
    r = weights * y_pm * expit(-y_pm * z)
    grad_coef = -(features.T @ r) + coef / C
    grad_coef = np.asarray(grad_coef).ravel()
    return grad_coef, -float(r.sum())


def _train_logistic(features, y_pm, weights, config: TrainConfig):
    n, d = features.shape
    C = config.regularization
    fit_b = config.fit_intercept
    coef = np.zeros(d)
    b = 0.0
    converged = False
    for _ in range(config.max_iterations):
        grad_coef, grad_b = weighted_logistic_gradient(coef, b, features, y_pm,
                                                       weights, C)
        grad = np.append(grad_coef, grad_b) if fit_b else grad_coef
        if np.linalg.norm(grad) < config.tolerance:
            converged = True
            break
        z = features @ coef + b
        mu = expit(z)
        dw = weights * mu * (1.0 - mu)
        if sp.issparse(features):
            core = (features.T @ features.multiply(dw[:, None])).toarray()
            cross = np.asarray(features.T @ dw).ravel()
        else:
            core = features.T @ (features * dw[:, None])
            cross = features.T @ dw
        if fit_b:
            H = np.empty((d + 1, d + 1))
            H[:d, :d] = core
            H[:d, d] = cross
            H[d, :d] = cross
            H[d, d] = dw.sum()
            H[:d, :d] += np.eye(d) / C
        else:
            H = core + np.eye(d) / C
        try:
            step = scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), grad)
        except scipy.linalg.LinAlgError:
            # Saturated sigmoids can zero out the intercept curvature.
            H += 1e-10 * max(1.0, np.trace(H) / len(H)) * np.eye(len(H))
            step = scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), grad)
        obj = weighted_logistic_objective(coef, b, features, y_pm, weights, C)
        slope = float(grad @ step)
        t = 1.0
        if slope > 1e-12 * (1.0 + abs(obj)):
            # Backtrack only while the expected decrease is measurable in
            # float64; near the optimum the pure Newton step is taken.
            while t > 1e-12:
                cand_coef = coef - t * step[:d]
                cand_b = b - t * step[d] if fit_b else b
                if weighted_logistic_objective(cand_coef, cand_b, features, y_pm,
                                               weights, C) <= obj - 1e-4 * t * slope:
                    break
                t *= 0.5
            else:
                break  # no measurable progress possible
        coef = coef - t * step[:d]
        if fit_b:
            b = b - t * step[d]
    return coef, b, converged


def _hinge_data_grad(features, y_pm, weights, coef, b):
    margins = y_pm * (features @ coef + b)
    active = margins < 1.0
    if not np.any(active):
        return np.zeros_like(coef), 0.0
    r = weights[active] * y_pm[active]
    g_coef = -np.asarray(features[active].T @ r).ravel()
    return g_coef, -float(r.sum())


def _train_hinge(features, y_pm, weights, config: TrainConfig):
    """Deterministic subgradient descent with a 1/t schedule.

    The coefficient iterate is projected onto the ball that must contain the
    optimum (objective at zero bounds the penalty term), and the returned
    model averages the second half of the trajectory. The converged flag
    reports whether the averaged objective had stabilized to within
    sqrt(tolerance) relative by the end of the schedule.
    """
    n, d = features.shape
    C = config.regularization
    fit_b = config.fit_intercept
    total_w = weights.sum()
    radius = np.sqrt(2.0 * C * total_w)
    coef = np.zeros(d)
    b = 0.0
    T = config.max_iterations
    half = T // 2
    sum_coef = np.zeros(d)
    sum_b = 0.0
    n_avg = 0
    mid_coef, mid_b, mid_n = None, 0.0, 0
    for t in range(1, T + 1):
        g_coef, g_b = _hinge_data_grad(features, y_pm, weights, coef, b)
        g_coef = g_coef + coef / C
        eta = C / t
        coef = coef - eta * g_coef
        norm = np.linalg.norm(coef)
        if norm > radius:
            coef = coef * (radius / norm)
        if fit_b:
            b = b - eta * g_b
        if t > half:
            sum_coef += coef
            sum_b += b
            n_avg += 1
        if t == half + (T - half) // 2:
            mid_coef, mid_b, mid_n = sum_coef.copy(), sum_b, n_avg
    avg_coef = sum_coef / max(n_avg, 1)
    avg_b = sum_b / max(n_avg, 1) if fit_b else 0.0
    converged = False
    if mid_coef is not None and mid_n > 0:
        obj_full = _hinge_objective(avg_coef, avg_b, features, y_pm, weights, C)
        obj_mid = _hinge_objective(mid_coef / mid_n, mid_b / mid_n, features,
                                   y_pm, weights, C)
        converged = abs(obj_full - obj_mid) <= np.sqrt(config.tolerance) * (
            1.0 + abs(obj_full))
    return avg_coef, avg_b, converged


def _hinge_objective(coef, b, features, y_pm, weights, C):
    margins = y_pm * (features @ coef + b)
    data = float(np.dot(weights, np.maximum(0.0, 1.0 - margins)))
    return data + 0.5 * float(np.dot(coef, coef)) / C


def train(features, labels, weights, config: TrainConfig) -> LinearModel:
    """Fit a weighted linear classifier; deterministic for fixed inputs."""
    y_pm, weights = _check_train_inputs(features, labels, weights)
    if config.loss == "logistic":
        coef, b, converged = _train_logistic(features, y_pm, weights, config)
    else:
        coef, b, converged = _train_hinge(features, y_pm, weights, config)
    return LinearModel(coef, float(b), config.loss, converged,
                       config.regularization)


def weighted_loss(model: LinearModel, features, labels, weights) -> float:
    """Data term of the training objective (no regularization), so coreset
    and full-data losses compare like with like."""
    y_pm = _as_pm_labels(labels)
    weights = np.asarray(weights, dtype=np.float64)
    z = np.asarray(features @ model.coefficients).ravel() + model.intercept
    if model.loss == "logistic":
        per_point = np.logaddexp(0.0, -y_pm * z)
    else:
        per_point = np.maximum(0.0, 1.0 - y_pm * z)
    return float(np.dot(weights, per_point))


def decision_scores(model: LinearModel, features) -> np.ndarray:
    return np.asarray(features @ model.coefficients).ravel() + model.intercept


def predict_labels(model: LinearModel, features) -> np.ndarray:
    """Class 1 iff the decision score is strictly positive."""
    return (decision_scores(model, features) > 0).astype(np.int64)


def predict_probabilities(model: LinearModel, features) -> np.ndarray:
    if model.loss != "logistic":
        raise UnsupportedOperationError(
            f"{model.loss} models expose decision scores only")
    return expit(decision_scores(model, features))


def save_model(model: LinearModel, path) -> None:
    """Flat text: loss, C, converged, intercept, coefficients."""
    from .data import FLOAT_FMT

    with open(path, "w") as fh:
        fh.write(f"loss {model.loss}\n")
        fh.write(f"regularization {FLOAT_FMT % model.regularization}\n")
        fh.write(f"converged {int(model.converged)}\n")
        fh.write(f"intercept {FLOAT_FMT % model.intercept}\n")
        fh.write("coefficients " + " ".join(FLOAT_FMT % c for c in model.coefficients)
                 + "\n")


def load_model(path) -> LinearModel:
    fields = {}
    with open(path) as fh:
        for line in fh:
            key, _, rest = line.strip().partition(" ")
            fields[key] = rest
    return LinearModel(
        np.array([float(v) for v in fields["coefficients"].split()]),
        float(fields["intercept"]), fields["loss"],
        bool(int(fields["converged"])), float(fields["regularization"]))
