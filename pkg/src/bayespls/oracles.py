"""Brute-force reference computations.

These are deliberately simple: tensor-product trapezoid quadrature for
evidence integrals in one or two dimensions, self-normalized importance
sampling for posterior predictives, grid search for the MAP, and central
finite differences for derivatives. They share only the likelihood and prior
definitions with the production path.

Likelihood overrides (``log_lik=``) take a ``(k, d)`` array of parameter
vectors and return ``k`` log-likelihood values; they exist so the oracles can
be checked against conjugate closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DiagnosticError, InputError, OraclePrecisionError, ShapeError
from .glm import (
    Dataset,
    FitSettings,
    ModelSpec,
    fit_map,
    label_log_prob,
    log_likelihood_many,
)

MAX_NODES = 10**7
_CHUNK = 16384


@dataclass(frozen=True)
class QuadratureGrid:
    """Regular grid on a box; trapezoid weights per axis."""

    lower: tuple
    upper: tuple
    steps: tuple
    boundary_mass_check: float = 1e-6

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        st = tuple(int(v) for v in np.atleast_1d(self.steps))
        if not (len(lo) == len(hi) == len(st)):
            raise ShapeError("lower, upper and steps must have equal length")
        if len(lo) > 2:
            raise InputError("quadrature grids support at most two dimensions")
        if any(h <= l for l, h in zip(lo, hi)):
            raise InputError("upper must exceed lower in every dimension")
        if any(s < 3 for s in st):
            raise InputError("need at least 3 nodes per dimension")
        if int(np.prod(st)) > MAX_NODES:
            raise InputError(f"grid has more than {MAX_NODES} nodes")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "steps", st)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    def nodes_and_log_weights(self):
        """Return ``(nodes, log_w, on_boundary)`` flattened over the grid."""
        axes, weights = [], []
        for lo, hi, n in zip(self.lower, self.upper, self.steps):
            x = np.linspace(lo, hi, n)
            w = np.full(n, (hi - lo) / (n - 1))
            w[0] *= 0.5
            w[-1] *= 0.5
            axes.append(x)
            weights.append(w)
        mesh = np.meshgrid(*axes, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        wmesh = np.meshgrid(*weights, indexing="ij")
        log_w = np.sum([np.log(m.ravel()) for m in wmesh], axis=0)
        idx = np.meshgrid(*[np.arange(n) for n in self.steps], indexing="ij")
        boundary = np.zeros(nodes.shape[0], dtype=bool)
        for i, n in zip(idx, self.steps):
            boundary |= (i.ravel() == 0) | (i.ravel() == n - 1)
        return nodes, log_w, boundary

    def refined(self) -> "QuadratureGrid":
        """Same box with the step halved."""
        return QuadratureGrid(self.lower, self.upper,
                              tuple(2 * s - 1 for s in self.steps),
                              self.boundary_mass_check)


def default_grid(data: Dataset, spec: ModelSpec, width: float = 8.0, steps=None,
                 boundary_mass_check: float = 1e-6) -> QuadratureGrid:
    """Box of +-``width`` Laplace standard deviations around the MAP.

    With no data the prior mean and prior covariance are used instead.
    """
    d = spec.dimension
    if d > 2:
        raise InputError("quadrature is limited to dimension <= 2")
    if data.n == 0:
        center = spec.prior_mean
        sd = np.sqrt(np.diag(np.linalg.inv(spec.prior_precision)))
    else:
        fit = fit_map(data, spec)
        center = fit.theta_hat
        sd = np.sqrt(np.diag(fit.covariance))
    if steps is None:
        steps = (1601,) if d == 1 else (241, 241)
    steps = tuple(np.broadcast_to(np.atleast_1d(steps), (d,)))
    return QuadratureGrid(center - width * sd, center + width * sd, steps,
                          boundary_mass_check)


def _eval_chunked(fn, nodes):
    out = np.empty(nodes.shape[0])
    for s in range(0, nodes.shape[0], _CHUNK):
        out[s:s + _CHUNK] = fn(nodes[s:s + _CHUNK])
    return out


def _log_joint_on_grid(data, spec, grid, log_lik):
    if grid.dimension != spec.dimension:
        raise ShapeError(f"grid dimension {grid.dimension} != model dimension {spec.dimension}")
    nodes, log_w, boundary = grid.nodes_and_log_weights()
    lik = log_lik if log_lik is not None else (lambda T: log_likelihood_many(T, data))
    log_f = _eval_chunked(lik, nodes) + spec.log_prior_many(nodes)
    return nodes, log_w, boundary, log_f


def _check_boundary(grid, log_f, boundary):
    # density on the box edge relative to the peak; a Gaussian-like tail past
    # the edge carries mass of the same order
    ratio = float(np.exp(np.max(log_f[boundary]) - np.max(log_f)))
    if ratio > grid.boundary_mass_check:
        lo = np.asarray(grid.lower)
        hi = np.asarray(grid.upper)
        half = hi - lo
        raise OraclePrecisionError(
            f"boundary density ratio {ratio:.2e} exceeds {grid.boundary_mass_check:.1e}; "
            f"widen the grid, e.g. to [{lo - half / 2}, {hi + half / 2}]",
            suggested_lower=lo - half / 2,
            suggested_upper=hi + half / 2,
        )


def evidence_quadrature(data: Dataset, spec: ModelSpec, grid: QuadratureGrid | None = None,
                        *, log_lik=None) -> float:
    """log of the integral of p(data | theta) pi(theta) by the trapezoid rule."""
    if grid is None:
        if log_lik is not None:
            raise InputError("a grid is required when overriding the likelihood")
        grid = default_grid(data, spec)
    _, log_w, boundary, log_f = _log_joint_on_grid(data, spec, grid, log_lik)
    _check_boundary(grid, log_f, boundary)
    return float(logsumexp(log_f + log_w))


def _candidate_matrix(features, labels, d):
    Z = np.atleast_2d(np.asarray(features, dtype=float))
    if Z.shape[1] != d:
        raise ShapeError(f"candidate features have {Z.shape[1]} columns, expected {d}")
    y = np.asarray(labels, dtype=float).reshape(-1)
    if y.shape[0] != Z.shape[0]:
        raise ShapeError("one label per candidate row is required")
    return Z, y


def posterior_predictive_quadrature(data: Dataset, spec: ModelSpec, features, labels,
                                    grid: QuadratureGrid | None = None) -> np.ndarray:
    """log p(a | data) for each candidate row ``a = (z, y)`` on one grid.

    The posterior is normalized on the grid itself, so the result is the log
    of a ratio of two trapezoid sums sharing the same nodes.
    """
    Z, y = _candidate_matrix(features, labels, spec.dimension)
    if grid is None:
        grid = default_grid(data, spec)
    nodes, log_w, boundary, log_f = _log_joint_on_grid(data, spec, grid, None)
    _check_boundary(grid, log_f, boundary)
    log_post = log_f + log_w
    log_post -= logsumexp(log_post)
    out = np.empty(Z.shape[0])
    for j in range(Z.shape[0]):
        cand_ll = label_log_prob(nodes @ Z[j], y[j])
        out[j] = logsumexp(log_post + cand_ll)
    return out


@dataclass(frozen=True)
class McEstimate:
    """Self-normalized importance-sampling estimate on the log scale."""

    log_value: np.ndarray
    std_error: np.ndarray
    ess: float
    n_samples: int
    normalized_weights: np.ndarray


def laplace_proposal(data: Dataset, spec: ModelSpec, settings: FitSettings | None = None):
    fit = fit_map(data, spec, settings)
    return fit.theta_hat, fit.covariance


def _mc_core(log_target, cand_ll_fn, mean, cov, samples, seed, min_ess):
    if samples < 1000:
        raise InputError("Monte Carlo oracle needs at least 1000 samples")
    mean = np.asarray(mean, dtype=float)
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    L = np.linalg.cholesky(cov)
    rng = np.random.Generator(np.random.PCG64(seed))
    eps = rng.standard_normal((samples, mean.shape[0]))
    thetas = mean + eps @ L.T
    d = mean.shape[0]
    log_q = (-0.5 * np.sum(eps**2, axis=1) - 0.5 * d * np.log(2 * np.pi)
             - np.sum(np.log(np.diag(L))))
    log_w = _eval_chunked(log_target, thetas) - log_q
    log_w -= logsumexp(log_w)
    ess = float(np.exp(-logsumexp(2.0 * log_w)))
    if ess < min_ess:
        raise DiagnosticError(f"effective sample size {ess:.1f} below {min_ess}", ess=ess)
    wbar = np.exp(log_w)
    cand_ll = cand_ll_fn(thetas)  # (k, S)
    log_val = logsumexp(log_w[None, :] + cand_ll, axis=1)
    f = np.exp(cand_ll - log_val[:, None])  # f / estimate, scale-free
    # delta-method standard error of the ratio estimator, on the log scale
    se = np.sqrt(np.sum(wbar[None, :] ** 2 * (f - 1.0) ** 2, axis=1))
    return McEstimate(log_val, se, ess, samples, wbar)


def posterior_predictive_mc_batch(data: Dataset, spec: ModelSpec, features, labels,
                                  samples: int = 20000, seed: int = 0, *, proposal=None,
                                  min_ess: float = 50.0) -> McEstimate:
    """log p(a | data) for each candidate, with common random numbers."""
    Z, y = _candidate_matrix(features, labels, spec.dimension)
    mean, cov = proposal if proposal is not None else laplace_proposal(data, spec)

    def target(T):
        return log_likelihood_many(T, data) + spec.log_prior_many(T)

    def cand_ll(T):
        return label_log_prob(Z @ T.T, y[:, None])

    return _mc_core(target, cand_ll, mean, cov, samples, seed, min_ess)


def posterior_predictive_mc(data: Dataset, spec: ModelSpec, cand, samples: int = 20000,
                            seed: int = 0, *, proposal=None, log_lik=None, cand_log_lik=None,
                            min_ess: float = 50.0) -> McEstimate:
    """Importance-sampling estimate of log p(data + cand | data).

    The default proposal is the Laplace Gaussian at the MAP. ``log_lik`` and
    ``cand_log_lik`` replace the logistic likelihoods of the data and of the
    candidate; ``proposal`` is a ``(mean, covariance)`` pair. The returned
    estimate carries scalar ``log_value`` and ``std_error``.
    """
    if log_lik is None and cand_log_lik is None:
        est = posterior_predictive_mc_batch(
            data, spec, np.atleast_2d(cand.features), [cand.pseudo_label],
            samples, seed, proposal=proposal, min_ess=min_ess)
    else:
        if proposal is None:
            raise InputError("a proposal is required when overriding likelihoods")
        data_ll = log_lik or (lambda T: log_likelihood_many(T, data))
        if cand_log_lik is None:
            z = np.asarray(cand.features, dtype=float)
            cand_log_lik = lambda T: label_log_prob(T @ z, cand.pseudo_label)  # noqa: E731
        est = _mc_core(lambda T: data_ll(T) + spec.log_prior_many(T),
                       lambda T: np.atleast_2d(cand_log_lik(T)),
                       proposal[0], proposal[1], samples, seed, min_ess)
    return McEstimate(float(est.log_value[0]), float(est.std_error[0]), est.ess,
                      est.n_samples, est.normalized_weights)


def grid_search_map(data: Dataset, spec: ModelSpec, lower: float = -10.0, upper: float = 10.0,
                    step: float = 1e-3) -> np.ndarray:
    """Maximize the log joint over a dense 1-d grid."""
    if spec.dimension != 1:
        raise InputError("grid_search_map is one-dimensional")
    nodes = np.arange(lower, upper + 0.5 * step, step).reshape(-1, 1)
    values = _eval_chunked(lambda T: log_likelihood_many(T, data) + spec.log_prior_many(T), nodes)
    return nodes[int(np.argmax(values))]


def finite_difference_gradient(f, theta, step: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function."""
    theta = np.asarray(theta, dtype=float)
    g = np.empty_like(theta)
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = step
        g[i] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return g


def finite_difference_jacobian(g, theta, step: float = 1e-6) -> np.ndarray:
    """Central differences of a vector function; column i is d g / d theta_i."""
    theta = np.asarray(theta, dtype=float)
    cols = []
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = step
        cols.append((np.asarray(g(theta + e)) - np.asarray(g(theta - e))) / (2.0 * step))
    return np.stack(cols, axis=1)
