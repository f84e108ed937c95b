import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import bayespls.engine as engine_module
from bayespls.criteria import Candidate, CriterionSpec, OracleSettings, score_pool
from bayespls.data import DgpConfig, generate, parse_float, read_table
from bayespls.engine import (
    SCORE_COLUMNS,
    STEP_COLUMNS,
    EngineConfig,
    StopRule,
    evaluate,
    run,
    write_trajectory,
)
from bayespls.errors import ConfigError, DegenerateStartError, EngineError, FitError
from bayespls.glm import Dataset, ModelFit, ModelSpec, fit_map, predict_proba

LIGHT_KINDS = ["bayes_laplace", "max_predicted_prob", "predictive_variance", "likelihood_only",
               "optimistic_superset", "pessimistic_superset"]


def small_problem(seed, n_labeled=8, n_pool=5, dimension=1):
    g = generate(DgpConfig("logistic_linear", dimension, n_labeled, n_pool, 50, seed=seed,
                           theta_true=tuple(np.linspace(1.0, 2.0, dimension))))
    return g, ModelSpec.default(dimension + 1)


def check_bookkeeping(traj, labeled, pool):
    ids = traj.chosen_ids
    assert len(ids) == len(set(ids))
    total = labeled.n + len(pool)
    remaining = {c.id for c in pool}
    for t, step in enumerate(traj.steps):
        assert step.iteration == t
        assert step.labeled_size == labeled.n + t
        assert step.labeled_size + step.pool_size == total
        assert set(step.scores) == remaining
        remaining = remaining - {step.chosen_id}
    assert traj.final_labeled.n == labeled.n + len(ids)


def test_pool_exhaustion_bookkeeping():
    g, spec = small_problem(0, n_pool=3)
    traj = run(g.labeled, g.pool, spec, EngineConfig(CriterionSpec("bayes_laplace")))
    assert len(traj.steps) == 3
    assert traj.final_labeled.n == g.labeled.n + 3
    assert traj.stopped_by == "pool_exhausted"
    check_bookkeeping(traj, g.labeled, g.pool)


def test_single_iteration_matches_score_pool():
    g, spec = small_problem(1, n_pool=6)
    crit = CriterionSpec("bayes_laplace")
    traj = run(g.labeled, g.pool, spec, EngineConfig(crit, stop=StopRule("max_iterations", 1)))
    assert len(traj.steps) == 1
    fit = fit_map(g.labeled, spec)
    Z = np.stack([c.features for c in g.pool])
    labels = (predict_proba(fit.theta_hat, Z) >= 0.5).astype(int)
    expected = score_pool(g.labeled, spec, [c.with_label(l) for c, l in zip(g.pool, labels)], crit)
    assert traj.steps[0].chosen_id == expected.chosen
    assert traj.steps[0].scores == expected.scores


def test_replay_each_step_from_scratch():
    g = generate(DgpConfig("logistic_linear", 1, 20, 100, 200, seed=3, theta_true=(1.5,)))
    spec = ModelSpec.default(2)
    crit = CriterionSpec("max_predicted_prob")
    traj = run(g.labeled, g.pool, spec, EngineConfig(crit, stop=StopRule("max_iterations", 40)))
    data, remaining = g.labeled, {c.id: c for c in g.pool}
    for step in traj.steps:
        fit = fit_map(data, spec)
        np.testing.assert_array_equal(fit.theta_hat, step.theta_hat)
        eta = float(remaining[step.chosen_id].features @ fit.theta_hat)
        assert step.pseudo_label == int(eta >= 0)
        cands = []
        for i in sorted(remaining):
            z = remaining[i].features
            cands.append(remaining[i].with_label(int(z @ fit.theta_hat >= 0)))
        assert score_pool(data, spec, cands, crit, fit=fit).chosen == step.chosen_id
        data = data.append(remaining[step.chosen_id].features, step.pseudo_label)
        del remaining[step.chosen_id]


def test_degenerate_start_names_missing_class():
    data = Dataset(np.ones((3, 1)), [1, 1, 1])
    with pytest.raises(DegenerateStartError) as info:
        run(data, [Candidate(0, [1.0])], ModelSpec.default(1), EngineConfig(CriterionSpec("bayes_laplace")))
    assert info.value.missing_class == 0
    assert "class 0" in str(info.value)


def test_fit_failure_attaches_partial_trajectory(monkeypatch):
    g, spec = small_problem(2, n_pool=6)
    calls = {"n": 0}
    real = engine_module.fit_map

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 4:
            raise FitError("forced", theta=np.zeros(2), gradient_norm=1.0)
        return real(*args, **kwargs)

    monkeypatch.setattr(engine_module, "fit_map", flaky)
    with pytest.raises(EngineError) as info:
        run(g.labeled, g.pool, spec, EngineConfig(CriterionSpec("bayes_laplace")))
    assert len(info.value.partial.steps) == 3
    assert info.value.partial.stopped_by == "error"


def test_score_floor_stops_before_adding():
    g, spec = small_problem(4, n_pool=10)
    crit = CriterionSpec("bayes_laplace")
    free = run(g.labeled, g.pool, spec, EngineConfig(crit))
    log_pi = [s.log_inclusion_prob for s in free.steps]
    floor = float(np.median(log_pi))
    expected = next(t for t, v in enumerate(log_pi) if v < floor)
    traj = run(g.labeled, g.pool, spec, EngineConfig(crit, stop=StopRule("score_floor", floor)))
    assert traj.stopped_by == "score_floor"
    assert len(traj.steps) == expected
    assert traj.chosen_ids == free.chosen_ids[:expected]


@pytest.mark.parametrize("rule", [StopRule, lambda: StopRule("max_iterations", 0),
                                  lambda: StopRule("max_iterations", 1.5), lambda: StopRule("score_floor")])
def test_stop_rule_validation(rule):
    if rule is StopRule:
        StopRule("pool_exhausted")
        with pytest.raises(ConfigError):
            StopRule("never")
    else:
        with pytest.raises(ConfigError):
            rule()


def test_eval_cadence_and_final_metrics():
    g, spec = small_problem(5, n_pool=7)
    traj = run(g.labeled, g.pool, spec, EngineConfig(CriterionSpec("bayes_laplace"), eval_every=3), test=g.test)
    evaluated = [s.iteration for s in traj.steps if s.metrics is not None]
    assert evaluated == [0, 3, 6]
    assert traj.final_metrics == evaluate(traj.final_fit, g.test)


def test_monte_carlo_criterion_is_seed_deterministic():
    g, spec = small_problem(6, n_pool=4)
    crit = CriterionSpec("bayes_oracle_montecarlo", OracleSettings(samples=2000))
    a = run(g.labeled, g.pool, spec, EngineConfig(crit, seed=11))
    b = run(g.labeled, g.pool, spec, EngineConfig(crit, seed=11))
    assert [s.scores for s in a.steps] == [s.scores for s in b.steps]
    c = run(g.labeled, g.pool, spec, EngineConfig(crit, seed=12))
    assert [s.scores for s in a.steps] != [s.scores for s in c.steps]


def test_provenance_records_config_hash_and_seed():
    g, spec = small_problem(7, n_pool=2)
    cfg = EngineConfig(CriterionSpec("bayes_laplace"), seed=99)
    traj = run(g.labeled, g.pool, spec, cfg)
    assert traj.provenance == {"config_hash": cfg.config_hash(), "seed": 99}
    other = EngineConfig(CriterionSpec("max_predicted_prob"), seed=99)
    assert other.config_hash() != cfg.config_hash()


class TestEvaluate:
    def fit_at(self, theta):
        theta = np.asarray(theta, dtype=float)
        return ModelFit(theta, 0.0, 0.0, np.eye(theta.size), True, 0, 0.0, 0.0)

    def test_half_everywhere(self):
        test = Dataset(np.random.default_rng(0).standard_normal((10, 2)), [1, 1, 1, 1, 1, 1, 0, 0, 0, 1])
        m = evaluate(self.fit_at([0.0, 0.0]), test)
        assert m.accuracy == 0.7
        assert m.log_loss == pytest.approx(math.log(2.0), rel=1e-15)

    def test_perfect_separation(self):
        X = np.array([[-2.0], [-1.0], [1.0], [3.0]])
        data = Dataset(X, [0, 0, 1, 1])
        assert evaluate(fit_map(data, ModelSpec.default(1)), data).accuracy == 1.0

    def test_log_loss_naive(self, rng):
        X = rng.standard_normal((30, 3))
        y = rng.integers(0, 2, 30)
        theta = rng.standard_normal(3)
        naive = 0.0
        for x, t in zip(X, y):
            p = 1.0 / (1.0 + math.exp(-sum(a * b for a, b in zip(x, theta))))
            naive -= math.log(p) if t == 1 else math.log(1.0 - p)
        assert evaluate(self.fit_at(theta), Dataset(X, y)).log_loss == pytest.approx(naive / 30, rel=1e-12)


def test_trajectory_files_round_trip(tmp_path):
    g, spec = small_problem(8, n_pool=5)
    traj = run(g.labeled, g.pool, spec, EngineConfig(CriterionSpec("bayes_laplace"), eval_every=2), test=g.test)
    write_trajectory(traj, tmp_path / "steps.csv", tmp_path / "scores.csv")
    header, rows = read_table(tmp_path / "steps.csv")
    assert tuple(header) == STEP_COLUMNS
    assert len(rows) == 5
    for row, step in zip(rows, traj.steps):
        assert int(row[1]) == step.chosen_id
        assert parse_float(row[4], 0, "log_inclusion_prob") == step.log_inclusion_prob
        if step.metrics is None:
            assert row[5] == "" and row[6] == ""
        else:
            assert float(row[5]) == step.metrics.accuracy
    header, rows = read_table(tmp_path / "scores.csv")
    assert tuple(header) == SCORE_COLUMNS
    assert len(rows) == 5 + 4 + 3 + 2 + 1
    keyed = {(int(r[0]), int(r[1])): float(r[2]) for r in rows}
    for step in traj.steps:
        for cid, s in step.scores.items():
            assert keyed[(step.iteration, cid)] == s


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(LIGHT_KINDS), st.integers(1, 6), st.integers(1, 2))
def test_invariants_hold_for_random_runs(seed, kind, n_pool, dimension):
    g, spec = small_problem(seed, n_labeled=6, n_pool=n_pool, dimension=dimension)
    cfg = EngineConfig(CriterionSpec(kind), seed=seed)
    a = run(g.labeled, g.pool, spec, cfg)
    check_bookkeeping(a, g.labeled, g.pool)
    b = run(g.labeled, g.pool, spec, cfg)
    assert a.chosen_ids == b.chosen_ids
    assert [s.scores for s in a.steps] == [s.scores for s in b.steps]
    assert np.array_equal(a.final_fit.theta_hat, b.final_fit.theta_hat)
