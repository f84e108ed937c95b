"""Self-training loop with a full audit trail.

Each iteration fits the model on the current labeled set, predicts
pseudo-labels for the whole remaining pool, scores the pool with the
configured criterion and moves the winner (with its pseudo-label) into the
labeled set. Labels of points already added are never revisited.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .criteria import CriterionSpec, score_pool
from .errors import BayesPLSError, ConfigError, DegenerateStartError, EngineError, InputError
from .glm import Dataset, FitSettings, ModelFit, ModelSpec, fit_map, label_log_prob, predict_proba

log = logging.getLogger(__name__)

STEP_COLUMNS = ("iteration", "chosen_id", "pseudo_label", "log_score_chosen",
                "log_inclusion_prob", "test_accuracy", "test_log_loss")
SCORE_COLUMNS = ("iteration", "candidate_id", "score", "log_inclusion_prob")

STOP_RULES = ("pool_exhausted", "max_iterations", "score_floor")


@dataclass(frozen=True)
class StopRule:
    """Primary stopping rule; pool exhaustion always applies as a backstop.

    ``score_floor`` stops before adding a point whose log inclusion
    probability falls below ``value``.
    """

    kind: str = "pool_exhausted"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in STOP_RULES:
            raise ConfigError(f"unknown stop rule {self.kind!r}")
        if self.kind == "max_iterations":
            if self.value is None or int(self.value) != self.value or self.value < 1:
                raise ConfigError("max_iterations must be an integer >= 1")
        if self.kind == "score_floor" and self.value is None:
            raise ConfigError("score_floor needs a threshold value")


@dataclass(frozen=True)
class EngineConfig:
    criterion: CriterionSpec
    stop: StopRule = field(default_factory=StopRule)
    fit_settings: FitSettings = field(default_factory=FitSettings)
    eval_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")

    def config_hash(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    log_loss: float


@dataclass(frozen=True)
class StepRecord:
    iteration: int
    chosen_id: int
    pseudo_label: int
    chosen_features: np.ndarray
    scores: dict
    log_inclusion_probs: dict
    log_score_chosen: float
    log_inclusion_prob: float
    theta_hat: np.ndarray
    labeled_size: int
    pool_size: int
    metrics: Metrics | None = None


@dataclass(frozen=True)
class Trajectory:
    steps: tuple
    final_fit: ModelFit | None
    final_labeled: Dataset
    initial_labeled_size: int
    provenance: dict
    stopped_by: str
    final_metrics: Metrics | None = None

    @property
    def chosen_ids(self) -> list:
        return [s.chosen_id for s in self.steps]


def evaluate(fit: ModelFit, test: Dataset) -> Metrics:
    """Accuracy (ties at p = 0.5 go to class 1) and mean log loss in nats."""
    if test.n == 0:
        raise InputError("test set is empty")
    theta = fit.theta_hat if isinstance(fit, ModelFit) else np.asarray(fit, dtype=float)
    p = predict_proba(theta, test.features)
    hard = (p >= 0.5).astype(float)
    acc = float(np.mean(hard == test.labels))
    ll = label_log_prob(test.features @ theta, test.labels)
    return Metrics(acc, float(-np.mean(ll)))


def _check_start(labeled: Dataset, pool):
    for cls in (0, 1):
        if not np.any(labeled.labels == cls):
            raise DegenerateStartError(cls)
    ids = [c.id for c in pool]
    if len(set(ids)) != len(ids):
        raise InputError("pool candidate ids must be unique")


def _oracle_seed(seed: int, iteration: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(iteration)]).generate_state(1)[0])


def run(labeled: Dataset, pool, spec: ModelSpec, config: EngineConfig,
        test: Dataset | None = None) -> Trajectory:
    """Run self-training until the stop rule fires or the pool is empty.

    Raises :class:`EngineError` with the partial trajectory attached if a fit
    or scoring step fails.
    """
    _check_start(labeled, pool)
    remaining = {c.id: c for c in pool}
    data = labeled
    steps = []
    provenance = {"config_hash": config.config_hash(), "seed": config.seed}
    stop = config.stop
    stopped_by = "pool_exhausted"

    def partial(fit=None):
        return Trajectory(tuple(steps), fit, data, labeled.n, provenance, "error")

    t = 0
    while remaining:
        if stop.kind == "max_iterations" and t >= stop.value:
            stopped_by = "max_iterations"
            break
        try:
            fit = fit_map(data, spec, config.fit_settings)
            cands = [remaining[i] for i in sorted(remaining)]
            Z = np.stack([c.features for c in cands])
            labels = (predict_proba(fit.theta_hat, Z) >= 0.5).astype(int)
            cands = [c.with_label(lab) for c, lab in zip(cands, labels)]
            scored = score_pool(data, spec, cands, config.criterion, config.fit_settings,
                                fit=fit, seed=_oracle_seed(config.seed, t))
        except BayesPLSError as exc:
            raise EngineError(f"iteration {t} failed: {exc}", partial=partial()) from exc

        chosen = next(c for c in cands if c.id == scored.chosen)
        log_incl = scored.log_inclusion_probs[chosen.id]
        if stop.kind == "score_floor" and log_incl < stop.value:
            stopped_by = "score_floor"
            break
        metrics = evaluate(fit, test) if test is not None and t % config.eval_every == 0 else None
        steps.append(StepRecord(
            iteration=t,
            chosen_id=chosen.id,
            pseudo_label=chosen.pseudo_label,
            chosen_features=chosen.features,
            scores=scored.scores,
            log_inclusion_probs=scored.log_inclusion_probs,
            log_score_chosen=scored.scores[chosen.id],
            log_inclusion_prob=log_incl,
            theta_hat=fit.theta_hat,
            labeled_size=data.n,
            pool_size=len(remaining),
            metrics=metrics,
        ))
        log.debug("iteration %d: chose %d (label %d)", t, chosen.id, chosen.pseudo_label)
        data = data.append(chosen.features, chosen.pseudo_label)
        del remaining[chosen.id]
        t += 1

    try:
        final_fit = fit_map(data, spec, config.fit_settings)
    except BayesPLSError as exc:
        raise EngineError(f"final fit failed: {exc}", partial=partial()) from exc
    final_metrics = evaluate(final_fit, test) if test is not None else None
    return Trajectory(tuple(steps), final_fit, data, labeled.n, provenance, stopped_by,
                      final_metrics)


def _fmt(v):
    return "" if v is None else repr(float(v))


def _atomic_write(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trajectory(traj: Trajectory, steps_path, scores_path=None):
    """Write one line per step, plus the full score maps keyed by (iteration, id)."""
    rows = []
    for s in traj.steps:
        m = s.metrics
        rows.append([s.iteration, s.chosen_id, s.pseudo_label, _fmt(s.log_score_chosen),
                     _fmt(s.log_inclusion_prob), _fmt(m.accuracy if m else None),
                     _fmt(m.log_loss if m else None)])
    _atomic_write(steps_path, STEP_COLUMNS, rows)
    if scores_path is not None:
        rows = [[s.iteration, cid, _fmt(score), _fmt(s.log_inclusion_probs[cid])]
                for s in traj.steps for cid, score in sorted(s.scores.items())]
        _atomic_write(scores_path, SCORE_COLUMNS, rows)
