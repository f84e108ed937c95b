"""Pseudo-label selection criteria.

Every criterion maps a candidate ``(z, y_hat)`` to a real score that is
maximized. The Bayes criterion is the posterior predictive of the augmented
data given the labeled data; ``bayes_laplace`` approximates it by

    l_aug(theta_hat) - 0.5 * log|I_aug(theta_hat)|

where ``l_aug`` is the log-likelihood of the labeled data plus the candidate
and ``I_aug`` the observed information of the augmented log joint. The
``(q/2) log 2 pi`` term of the Laplace expansion is dropped: it is the same for
every candidate, so neither the argmax nor the softmax inclusion
probabilities change. The oracle kinds compute ``log p(a | D)`` itself by
quadrature or importance sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from . import oracles
from .errors import ConfigError, InputError, NumericalError, ShapeError
from .glm import (
    Dataset,
    FitSettings,
    ModelFit,
    ModelSpec,
    clamped_probs,
    fit_map,
    label_log_prob,
    log_likelihood,
)

BAYES_LAPLACE = "bayes_laplace"
ORACLE_QUADRATURE = "bayes_oracle_quadrature"
ORACLE_MONTECARLO = "bayes_oracle_montecarlo"
MAX_PROB = "max_predicted_prob"
PRED_VARIANCE = "predictive_variance"
LIKELIHOOD_ONLY = "likelihood_only"
OPTIMISTIC = "optimistic_superset"
PESSIMISTIC = "pessimistic_superset"

HEURISTIC_KINDS = (MAX_PROB, PRED_VARIANCE, LIKELIHOOD_ONLY)
ORACLE_KINDS = (ORACLE_QUADRATURE, ORACLE_MONTECARLO)
KINDS = (BAYES_LAPLACE, *ORACLE_KINDS, *HEURISTIC_KINDS, OPTIMISTIC, PESSIMISTIC)


@dataclass(frozen=True)
class Candidate:
    """An unlabeled point. ``pseudo_label`` is set by the current fit."""

    id: int
    features: np.ndarray
    pseudo_label: int | None = None

    def __post_init__(self):
        z = np.array(self.features, dtype=float).reshape(-1)
        if not np.all(np.isfinite(z)):
            raise InputError(f"candidate {self.id} has non-finite features")
        z.setflags(write=False)
        object.__setattr__(self, "features", z)
        object.__setattr__(self, "id", int(self.id))
        if self.pseudo_label is not None:
            if self.pseudo_label not in (0, 1):
                raise InputError("pseudo_label must be 0 or 1")
            object.__setattr__(self, "pseudo_label", int(self.pseudo_label))

    def with_label(self, label: int) -> "Candidate":
        return replace(self, pseudo_label=int(label))


@dataclass(frozen=True)
class OracleSettings:
    """Knobs for the brute-force criteria.

    Quadrature uses a box of +-``width`` Laplace standard deviations with
    ``steps`` nodes per axis (or explicit ``lower``/``upper``). Monte Carlo
    draws ``samples`` points from the Laplace Gaussian with ``seed``.
    """

    width: float = 8.0
    steps: tuple | None = None
    lower: tuple | None = None
    upper: tuple | None = None
    boundary_mass_check: float = 1e-6
    samples: int = 20000
    seed: int = 0
    min_ess: float = 50.0


@dataclass(frozen=True)
class CriterionSpec:
    kind: str
    oracle_settings: OracleSettings | None = None
    refit_per_candidate: bool = False
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown criterion kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in ORACLE_KINDS and self.oracle_settings is None:
            raise ConfigError(f"criterion {self.kind} requires oracle_settings")
        if self.name is None:
            object.__setattr__(self, "name", self.kind)


@dataclass(frozen=True)
class ScoredPool:
    scores: dict
    chosen: int
    log_inclusion_probs: dict = field(default_factory=dict)


def _require_label(cand: Candidate) -> int:
    if cand.pseudo_label is None:
        raise InputError(f"candidate {cand.id} has no pseudo-label")
    return cand.pseudo_label


def pseudo_label_utility(theta, data: Dataset, cand: Candidate) -> float:
    """log p(D + (z, y_hat) | theta): the pseudo-label likelihood."""
    y = _require_label(cand)
    theta = np.asarray(theta, dtype=float)
    if cand.features.shape[0] != theta.shape[0]:
        raise ShapeError("candidate features and theta differ in length")
    return log_likelihood(theta, data) + float(label_log_prob(cand.features @ theta, y))


def _stack(cands):
    Z = np.stack([c.features for c in cands])
    y = np.array([_require_label(c) for c in cands], dtype=float)
    return Z, y


def _laplace_from_fit(fit: ModelFit, Z, y) -> np.ndarray:
    """Score candidates at a fixed mode with a rank-one information update each."""
    eta = Z @ fit.theta_hat
    p1, _ = clamped_probs(eta)
    curv = p1 * (1.0 - p1)
    info = fit.fisher_info[None, :, :] + curv[:, None, None] * (Z[:, :, None] * Z[:, None, :])
    try:
        L = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise NumericalError("augmented information is not positive definite") from None
    logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
    return fit.log_lik_at_mode + label_log_prob(eta, y) - 0.5 * logdet


def _laplace_refit(data, spec, cand_z, label, settings, start):
    aug = data.append(cand_z, label)
    fit = fit_map(aug, spec, settings, start=start)
    return fit.log_lik_at_mode - 0.5 * fit.log_det_fisher


def bayes_laplace_score(data: Dataset, spec: ModelSpec, cand: Candidate,
                        settings: FitSettings | None = None, *, refit_per_candidate: bool = False,
                        fit: ModelFit | None = None) -> float:
    """Laplace-approximated pseudo posterior predictive, up to a constant.

    Without refitting, the mode fitted on ``data`` (``fit``, computed if not
    given) is reused and only the candidate's curvature is added. With
    ``refit_per_candidate`` the mode of the augmented data is used.
    """
    y = _require_label(cand)
    if refit_per_candidate:
        start = fit.theta_hat if fit is not None else None
        return _laplace_refit(data, spec, cand.features, y, settings, start)
    fit = fit or fit_map(data, spec, settings)
    return float(_laplace_from_fit(fit, cand.features[None, :], np.array([y]))[0])


def _oracle_settings(os: OracleSettings | None) -> OracleSettings:
    return os if os is not None else OracleSettings()


def _quadrature_grid(data, spec, os, fit):
    if spec.dimension > 2:
        raise ConfigError("bayes_oracle_quadrature requires model dimension <= 2")
    if os.lower is not None and os.upper is not None:
        steps = os.steps or ((1601,) if spec.dimension == 1 else (241, 241))
        return oracles.QuadratureGrid(os.lower, os.upper, steps, os.boundary_mass_check)
    return oracles.default_grid(data, spec, width=os.width, steps=os.steps,
                                boundary_mass_check=os.boundary_mass_check)


def _oracle_batch(kind, data, spec, Z, y, os, fit=None):
    os = _oracle_settings(os)
    if kind == ORACLE_QUADRATURE:
        grid = _quadrature_grid(data, spec, os, fit)
        return oracles.posterior_predictive_quadrature(data, spec, Z, y, grid)
    if data.n == 0:
        proposal = (spec.prior_mean, np.linalg.inv(spec.prior_precision))
    elif fit is not None:
        proposal = (fit.theta_hat, fit.covariance)
    else:
        proposal = None
    est = oracles.posterior_predictive_mc_batch(data, spec, Z, y, os.samples, os.seed,
                                                proposal=proposal, min_ess=os.min_ess)
    return est.log_value


def bayes_oracle_score(data: Dataset, spec: ModelSpec, cand: Candidate,
                       oracle_settings: OracleSettings | None = None,
                       method: str = "quadrature") -> float:
    """log p(D + (z, y_hat) | D) by brute force (``quadrature`` or ``montecarlo``)."""
    kind = {"quadrature": ORACLE_QUADRATURE, "montecarlo": ORACLE_MONTECARLO}.get(method)
    if kind is None:
        raise ConfigError(f"unknown oracle method {method!r}")
    y = _require_label(cand)
    return float(_oracle_batch(kind, data, spec, cand.features[None, :], np.array([y]),
                               oracle_settings)[0])


def _heuristic_batch(kind, fit: ModelFit, Z, y) -> np.ndarray:
    eta = Z @ fit.theta_hat
    p1, _ = clamped_probs(eta)
    if kind == MAX_PROB:
        return np.maximum(p1, 1.0 - p1)
    if kind == PRED_VARIANCE:
        return -p1 * (1.0 - p1)
    if kind == LIKELIHOOD_ONLY:
        return fit.log_lik_at_mode + label_log_prob(eta, y)
    raise ConfigError(f"unknown heuristic kind {kind!r}")


def heuristic_score(kind: str, fit: ModelFit, cand: Candidate) -> float:
    """Confidence heuristics evaluated at the current fit.

    ``predictive_variance`` is negated so that every criterion is maximized.
    """
    if kind not in HEURISTIC_KINDS:
        raise ConfigError(f"unknown heuristic kind {kind!r}")
    y = np.array([_require_label(cand)]) if kind == LIKELIHOOD_ONLY else np.zeros(1)
    return float(_heuristic_batch(kind, fit, cand.features[None, :], y)[0])


def superset_score(data: Dataset, spec: ModelSpec, cand: Candidate, mode: str,
                   settings: FitSettings | None = None, *, refit_per_candidate: bool = False,
                   fit: ModelFit | None = None) -> float:
    """Best (optimistic) or worst (pessimistic) Laplace score over both labels."""
    if mode not in ("optimistic", "pessimistic"):
        raise ConfigError(f"superset mode must be optimistic or pessimistic, got {mode!r}")
    if not refit_per_candidate:
        fit = fit or fit_map(data, spec, settings)
    scores = [
        bayes_laplace_score(data, spec, cand.with_label(lab), settings,
                            refit_per_candidate=refit_per_candidate, fit=fit)
        for lab in (0, 1)
    ]
    return max(scores) if mode == "optimistic" else min(scores)


def log_inclusion_probabilities(scores) -> np.ndarray:
    """Softmax over the pool, on the log scale."""
    s = np.asarray(scores, dtype=float)
    return s - logsumexp(s)


def _batch_scores(data, spec, cands, crit, fit, settings, seed):
    kind = crit.kind
    Z, y = _stack(cands)
    if kind in HEURISTIC_KINDS:
        return _heuristic_batch(kind, fit, Z, y)
    if kind in ORACLE_KINDS:
        os = _oracle_settings(crit.oracle_settings)
        if seed is not None:
            os = replace(os, seed=seed)
        return _oracle_batch(kind, data, spec, Z, y, os, fit)
    if crit.refit_per_candidate:
        per_label = {
            lab: np.array([_laplace_refit(data, spec, z, lab, settings, fit.theta_hat) for z in Z])
            for lab in (0, 1)
        }
    else:
        per_label = {lab: _laplace_from_fit(fit, Z, np.full(len(cands), float(lab)))
                     for lab in (0, 1)}
    if kind == BAYES_LAPLACE:
        return np.where(y == 1.0, per_label[1], per_label[0])
    if kind == OPTIMISTIC:
        return np.maximum(per_label[0], per_label[1])
    return np.minimum(per_label[0], per_label[1])


def score_pool(data: Dataset, spec: ModelSpec, pool, crit: CriterionSpec,
               settings: FitSettings | None = None, *, fit: ModelFit | None = None,
               seed: int | None = None) -> ScoredPool:
    """Score every candidate, pick the argmax, and normalize to inclusion probabilities.

    Candidates are processed in id order, so the result does not depend on the
    order of ``pool``; ties go to the lowest id. ``fit`` is the MAP fit on
    ``data`` and is computed if omitted. ``seed`` overrides the Monte Carlo
    oracle seed.
    """
    cands = sorted(pool, key=lambda c: c.id)
    if not cands:
        raise InputError("cannot score an empty pool")
    ids = [c.id for c in cands]
    if len(set(ids)) != len(ids):
        raise InputError("candidate ids must be unique within a pool")
    needs_fit = crit.kind not in ORACLE_KINDS or crit.kind == ORACLE_MONTECARLO
    if fit is None and needs_fit and data.n > 0:
        fit = fit_map(data, spec, settings)
    if fit is None and crit.kind not in ORACLE_KINDS:
        raise InputError(f"criterion {crit.kind} needs at least one labeled row")
    scores = _batch_scores(data, spec, cands, crit, fit, settings, seed)
    if not np.all(np.isfinite(scores)):
        raise NumericalError(f"criterion {crit.kind} produced non-finite scores")
    log_incl = log_inclusion_probabilities(scores)
    best = int(np.argmax(scores))
    return ScoredPool(
        scores={i: float(s) for i, s in zip(ids, scores)},
        chosen=ids[best],
        log_inclusion_probs={i: float(v) for i, v in zip(ids, log_incl)},
    )
