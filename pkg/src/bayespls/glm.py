"""Bernoulli-logit GLM with a Gaussian prior.

Everything downstream (selection criteria, oracles, the self-training engine)
talks to the model only through :func:`log_likelihood`, :func:`predict_proba`
and the Fisher information stored on :class:`ModelFit`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import FitError, InputError, NumericalError, ShapeError

PROB_FLOOR = 1e-12
LOG_2PI = float(np.log(2.0 * np.pi))


def _frozen(arr):
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Labeled design matrix with binary responses and optional row weights.

    ``features`` is ``(n, d)``; ``n`` may be zero. Arrays are copied and made
    read-only on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise ShapeError(f"features must be 2-d, got shape {X.shape}")
        y = np.array(self.labels, dtype=float).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ShapeError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise InputError("features contain non-finite values")
        if not np.all((y == 0.0) | (y == 1.0)):
            raise InputError("labels must be 0 or 1")
        if self.weights is None:
            w = np.ones(X.shape[0])
        else:
            w = np.array(self.weights, dtype=float).reshape(-1)
            if w.shape[0] != X.shape[0]:
                raise ShapeError(f"{X.shape[0]} rows but {w.shape[0]} weights")
            if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
                raise InputError("weights must be finite and strictly positive")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dimension(self) -> int:
        return self.features.shape[1]

    def append(self, features, label, weight=1.0) -> "Dataset":
        """Return a new dataset with one extra row."""
        z = np.asarray(features, dtype=float).reshape(1, -1)
        return Dataset(
            np.vstack([self.features, z]),
            np.append(self.labels, float(label)),
            np.append(self.weights, float(weight)),
        )

    @classmethod
    def empty(cls, dimension: int) -> "Dataset":
        return cls(np.zeros((0, dimension)), np.zeros(0))


@dataclass(frozen=True)
class ModelSpec:
    """Gaussian prior N(prior_mean, prior_precision^{-1}) over the coefficients."""

    prior_mean: np.ndarray
    prior_precision: np.ndarray

    def __post_init__(self):
        m = np.array(self.prior_mean, dtype=float).reshape(-1)
        P = np.array(self.prior_precision, dtype=float)
        d = m.shape[0]
        if d < 1:
            raise ShapeError("dimension must be positive")
        if P.shape != (d, d):
            raise ShapeError(f"prior_precision shape {P.shape} does not match dimension {d}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(P))):
            raise InputError("prior parameters must be finite")
        if np.max(np.abs(P - P.T)) > 1e-10:
            raise InputError("prior_precision is not symmetric")
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError:
            raise NumericalError("prior_precision is not positive definite") from None
        object.__setattr__(self, "prior_mean", _frozen(m))
        object.__setattr__(self, "prior_precision", _frozen(P))
        object.__setattr__(self, "_logdet_precision", 2.0 * float(np.sum(np.log(np.diag(L)))))

    @property
    def dimension(self) -> int:
        return self.prior_mean.shape[0]

    @classmethod
    def default(cls, dimension: int, precision: float = 1.0) -> "ModelSpec":
        """Zero-mean prior with precision ``precision * I``."""
        return cls(np.zeros(dimension), precision * np.eye(dimension))

    def log_prior(self, theta) -> float:
        """Normalized Gaussian log density at ``theta``."""
        theta = _check_theta(theta, self.dimension)
        r = theta - self.prior_mean
        return float(
            -0.5 * self.dimension * LOG_2PI
            + 0.5 * self._logdet_precision
            - 0.5 * r @ self.prior_precision @ r
        )

    def log_prior_many(self, thetas: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`log_prior` over rows of a ``(k, d)`` array."""
        R = np.asarray(thetas, dtype=float) - self.prior_mean
        quad = np.einsum("ki,ij,kj->k", R, self.prior_precision, R)
        return -0.5 * self.dimension * LOG_2PI + 0.5 * self._logdet_precision - 0.5 * quad


@dataclass(frozen=True)
class FitSettings:
    tol: float = 1e-8
    max_iter: int = 100
    max_halvings: int = 30


@dataclass(frozen=True)
class ModelFit:
    """MAP fit with the curvature used by the Laplace criterion.

    ``fisher_info`` is the observed information of the log joint at the mode,
    prior precision included, so it is positive definite.
    """

    theta_hat: np.ndarray
    log_joint_at_mode: float
    log_lik_at_mode: float
    fisher_info: np.ndarray
    converged: bool
    iterations: int
    final_gradient_norm: float
    log_det_fisher: float = field(default=float("nan"))

    @property
    def covariance(self) -> np.ndarray:
        return np.linalg.inv(self.fisher_info)


def _check_theta(theta, d: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != d:
        raise ShapeError(f"theta has length {theta.shape[0]}, expected {d}")
    if not np.all(np.isfinite(theta)):
        raise InputError("theta contains non-finite values")
    return theta


def _check_features(features, d: int) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if d > 1 or X.shape[0] == 1 else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != d:
        raise ShapeError(f"features shape {X.shape} incompatible with dimension {d}")
    return X


def clamped_probs(eta):
    """Return ``(p1, p0)`` = (P(y=1), P(y=0)) clamped to [1e-12, 1 - 1e-12]."""
    p1 = np.clip(expit(eta), PROB_FLOOR, 1.0 - PROB_FLOOR)
    p0 = np.clip(expit(-eta), PROB_FLOOR, 1.0 - PROB_FLOOR)
    return p1, p0


def label_log_prob(eta, labels):
    """Elementwise log p(label | eta) under the clamped logistic link."""
    p1, p0 = clamped_probs(eta)
    return np.where(np.asarray(labels) == 1.0, np.log(p1), np.log(p0))


def log_likelihood(theta, data: Dataset) -> float:
    """Weighted Bernoulli log-likelihood, in nats."""
    theta = _check_theta(theta, data.dimension)
    if data.n == 0:
        return 0.0
    eta = data.features @ theta
    return float(np.sum(data.weights * label_log_prob(eta, data.labels)))


def log_likelihood_many(thetas, data: Dataset) -> np.ndarray:
    """Log-likelihood at each row of a ``(k, d)`` array of parameter vectors."""
    T = np.atleast_2d(np.asarray(thetas, dtype=float))
    if T.shape[1] != data.dimension:
        raise ShapeError(f"thetas shape {T.shape} incompatible with dimension {data.dimension}")
    if data.n == 0:
        return np.zeros(T.shape[0])
    eta = data.features @ T.T
    return data.weights @ label_log_prob(eta, data.labels[:, None])


def log_joint(theta, data: Dataset, spec: ModelSpec) -> float:
    return log_likelihood(theta, data) + spec.log_prior(theta)


def score_and_curvature(theta, data: Dataset, spec: ModelSpec):
    """Gradient and Hessian of the log joint (log-likelihood plus log prior)."""
    if spec.dimension != data.dimension:
        raise ShapeError(f"model dimension {spec.dimension} != data dimension {data.dimension}")
    theta = _check_theta(theta, data.dimension)
    X, w = data.features, data.weights
    p1, _ = clamped_probs(X @ theta)
    grad = X.T @ (w * (data.labels - p1)) - spec.prior_precision @ (theta - spec.prior_mean)
    hess = -(X.T * (w * p1 * (1.0 - p1))) @ X - spec.prior_precision
    return grad, 0.5 * (hess + hess.T)


def observed_information(theta, data: Dataset, spec: ModelSpec) -> np.ndarray:
    _, hess = score_and_curvature(theta, data, spec)
    return -hess


def log_det_pd(matrix) -> float:
    """log|A| of a symmetric positive-definite matrix via Cholesky."""
    try:
        L = np.linalg.cholesky(matrix)
    except np.linalg.LinAlgError:
        raise NumericalError("matrix is not positive definite") from None
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def fit_map(data: Dataset, spec: ModelSpec, settings: FitSettings | None = None,
            start=None) -> ModelFit:
    """MAP estimate by damped Newton iterations.

    Starts from the prior mean unless ``start`` is given. A step is halved (at
    most ``settings.max_halvings`` times) until the log joint does not
    decrease. Raises :class:`FitError` if the gradient norm has not reached
    ``settings.tol`` after ``settings.max_iter`` steps.
    """
    settings = settings or FitSettings()
    if data.n < 1:
        raise InputError("fit_map needs at least one row")
    if spec.dimension != data.dimension:
        raise ShapeError(f"model dimension {spec.dimension} != data dimension {data.dimension}")
    theta = spec.prior_mean.copy() if start is None else _check_theta(start, spec.dimension).copy()
    current = log_joint(theta, data, spec)
    iterations = 0
    converged = False
    while True:
        grad, hess = score_and_curvature(theta, data, spec)
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= settings.tol:
            converged = True
            break
        if iterations >= settings.max_iter:
            break
        try:
            L = np.linalg.cholesky(-hess)
        except np.linalg.LinAlgError:
            raise NumericalError("negative Hessian is not positive definite") from None
        step = np.linalg.solve(L.T, np.linalg.solve(L, grad))
        # rounding slack so a converging step is not rejected for an ulp
        slack = 64 * np.finfo(float).eps * max(1.0, abs(current))
        t = 1.0
        for _ in range(settings.max_halvings + 1):
            candidate = theta + t * step
            value = log_joint(candidate, data, spec)
            if value >= current - slack:
                break
            t *= 0.5
        else:
            raise NumericalError(
                f"step halving exhausted at gradient norm {gnorm:.3e}"
            )
        theta, current = candidate, value
        iterations += 1

    if not converged:
        raise FitError(
            f"Newton did not converge in {settings.max_iter} iterations "
            f"(gradient norm {gnorm:.3e})",
            theta=theta,
            gradient_norm=gnorm,
        )
    info = -hess
    return ModelFit(
        theta_hat=_frozen(theta),
        log_joint_at_mode=current,
        log_lik_at_mode=log_likelihood(theta, data),
        fisher_info=_frozen(info),
        converged=True,
        iterations=iterations,
        final_gradient_norm=gnorm,
        log_det_fisher=log_det_pd(info),
    )


def laplace_log_evidence(fit: ModelFit, spec: ModelSpec) -> float:
    """Laplace approximation of log p(data) under the prior of ``spec``."""
    return fit.log_joint_at_mode + 0.5 * spec.dimension * LOG_2PI - 0.5 * fit.log_det_fisher


def predict_proba(theta, features) -> np.ndarray:
    """P(y = 1 | x) for each row, clamped to [1e-12, 1 - 1e-12]."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    X = _check_features(features, theta.shape[0])
    theta = _check_theta(theta, X.shape[1])
    p1, _ = clamped_probs(X @ theta)
    return p1
