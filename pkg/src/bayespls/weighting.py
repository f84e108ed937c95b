"""Inverse-probability weights from a self-training trajectory.

Inclusion probabilities are the per-step softmax masses of the chosen
candidates. Two conventions turn them into weights:

``per_step``
    ``w_t = min(cap, 1 / pi_t)``.
``cumulative``
    ``w_t = min(cap, 1 / prod_{s <= t} pi_s)``, the running product of the
    chosen candidates' own per-step probabilities. This is a heuristic: the
    probability of having survived earlier draws is not recoverable from the
    softmax scores without a sampling model.

Both conventions agree on one-step trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .criteria import CriterionSpec
from .data import DgpConfig, generate
from .engine import EngineConfig, StopRule, Trajectory, _atomic_write, run
from .errors import ConfigError, DataError
from .glm import Dataset, FitSettings, ModelFit, ModelSpec, fit_map

CONVENTIONS = ("per_step", "cumulative")
DEFAULT_CAP = 100.0


@dataclass(frozen=True)
class AddedPoint:
    candidate_id: int
    step: int
    features: np.ndarray
    pseudo_label: int
    inclusion_prob: float
    weight: float


@dataclass(frozen=True)
class WeightedAugmentedSet:
    base: Dataset
    added: tuple
    convention: str = "per_step"
    cap: float = DEFAULT_CAP
    cap_hits: int = 0

    def __post_init__(self):
        ids = [a.candidate_id for a in self.added]
        if len(set(ids)) != len(ids):
            raise DataError("added candidate ids must be distinct")
        for a in self.added:
            if not (math.isfinite(a.weight) and a.weight >= 1.0):
                raise DataError(f"weight of candidate {a.candidate_id} must be finite and >= 1")

    def to_dataset(self, weighted: bool = True) -> Dataset:
        if not self.added:
            return Dataset(self.base.features, self.base.labels)
        Z = np.stack([a.features for a in self.added])
        X = np.vstack([self.base.features, Z])
        y = np.concatenate([self.base.labels, [a.pseudo_label for a in self.added]])
        w = np.ones(X.shape[0])
        if weighted:
            w[self.base.n:] = [a.weight for a in self.added]
        return Dataset(X, y, w)


def ipw_weights(traj: Trajectory, convention: str = "per_step",
                cap: float = DEFAULT_CAP) -> WeightedAugmentedSet:
    if convention not in CONVENTIONS:
        raise ConfigError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    if not cap > 0:
        raise ConfigError("cap must be positive")
    log_pi = []
    for s in traj.steps:
        v = s.log_inclusion_prob
        if v is None or not np.isfinite(v):
            raise DataError(f"step {s.iteration} has no inclusion probability")
        # exact zero for a one-candidate pool; clip rounding above it
        log_pi.append(min(float(v), 0.0))
    log_pi = np.asarray(log_pi)
    log_mass = np.cumsum(log_pi) if convention == "cumulative" else log_pi
    with np.errstate(over="ignore"):
        raw = np.exp(-log_mass)
    weights = np.minimum(cap, raw)
    cap_hits = int(np.sum(raw > cap))
    n0 = traj.initial_labeled_size
    base_src = traj.final_labeled
    base = Dataset(base_src.features[:n0], base_src.labels[:n0])
    added = tuple(
        AddedPoint(s.chosen_id, s.iteration, s.chosen_features, s.pseudo_label,
                   float(np.exp(lp)), float(w))
        for s, lp, w in zip(traj.steps, log_pi, weights)
    )
    return WeightedAugmentedSet(base, added, convention, float(cap), cap_hits)


def weighted_refit(wset: WeightedAugmentedSet, spec: ModelSpec,
                   settings: FitSettings | None = None) -> ModelFit:
    return fit_map(wset.to_dataset(weighted=True), spec, settings)


def write_weights(wset: WeightedAugmentedSet, path):
    rows = [[a.candidate_id, a.step, repr(a.inclusion_prob), repr(a.weight)] for a in wset.added]
    _atomic_write(path, ("candidate_id", "step", "inclusion_prob", "weight"), rows)


@dataclass(frozen=True)
class Moments:
    mean: float
    bias: float
    variance: float

    @classmethod
    def of(cls, values, truth: float) -> "Moments":
        v = np.asarray(values, dtype=float)
        return cls(float(v.mean()), float(v.mean() - truth), float(v.var(ddof=1)))


@dataclass(frozen=True)
class ReplicationReport:
    theta_true: float
    n_seeds: int
    weighted: Moments
    unweighted: Moments
    labeled_only: Moments
    cap_hits: int

    def table(self) -> str:
        lines = ["estimator,mean,bias,variance"]
        for name in ("weighted", "unweighted", "labeled_only"):
            m = getattr(self, name)
            lines.append(f"{name},{m.mean:.6f},{m.bias:.6f},{m.variance:.6f}")
        return "\n".join(lines)


def ipw_replication(seeds, theta_true: float = 1.0, n_labeled: int = 50, n_pool: int = 100,
                    iterations: int | None = 20, convention: str = "per_step",
                    cap: float = DEFAULT_CAP, criterion: str = "max_predicted_prob",
                    spec: ModelSpec | None = None) -> ReplicationReport:
    """Slope estimates with and without IPW on one-feature logistic data.

    Each seed draws fresh data with known slope ``theta_true``, runs
    self-training under ``criterion`` and records the slope of the weighted
    refit, the unweighted final fit and the fit on the labeled rows alone.
    """
    spec = spec or ModelSpec.default(2)
    stop = StopRule("max_iterations", iterations) if iterations else StopRule()
    crit = CriterionSpec(criterion)
    w, u, b, hits = [], [], [], 0
    for seed in seeds:
        g = generate(DgpConfig("logistic_linear", 1, n_labeled, n_pool, 1, seed=seed,
                               theta_true=(theta_true,)))
        traj = run(g.labeled, g.pool, spec, EngineConfig(crit, stop=stop, seed=seed))
        wset = ipw_weights(traj, convention, cap)
        hits += wset.cap_hits
        w.append(weighted_refit(wset, spec).theta_hat[1])
        u.append(traj.final_fit.theta_hat[1])
        b.append(fit_map(g.labeled, spec).theta_hat[1])
    return ReplicationReport(theta_true, len(w), Moments.of(w, theta_true), Moments.of(u, theta_true),
                             Moments.of(b, theta_true), hits)
