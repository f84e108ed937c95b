"""Synthetic data generation, CSV ingestion and splitting.

Random numbers come from numpy's PCG64 bit generator seeded through a
``SeedSequence([seed, retry])``, which is portable across platforms and numpy
versions that keep the PCG64 stream stable.

Ground-truth labels of pool points are returned in a separate mapping
(:attr:`GeneratedData.hidden_labels`). :class:`~bayespls.criteria.Candidate`
has no field for them, so no criterion can read them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .criteria import Candidate
from .errors import ConfigError, DataError, GenerationError, SchemaError
from .glm import Dataset

LOGISTIC_LINEAR = "logistic_linear"
TWO_GAUSSIANS = "two_gaussians"
MISSING_MARKER = "?"


@dataclass(frozen=True)
class DgpConfig:
    """Synthetic data-generating process.

    ``theta_true`` (logistic_linear) has one entry per raw feature; the
    intercept column, if added, has true coefficient zero. For two_gaussians
    ``class_means`` holds the class-0 and class-1 means and
    ``covariance_scale`` the shared isotropic standard deviation.
    """

    kind: str
    dimension: int
    n_labeled: int
    n_pool: int
    n_test: int
    seed: int = 0
    theta_true: tuple | None = None
    class_means: tuple | None = None
    covariance_scale: float = 1.0
    add_intercept: bool = True
    max_retries: int = 100

    def __post_init__(self):
        if self.kind not in (LOGISTIC_LINEAR, TWO_GAUSSIANS):
            raise ConfigError(f"unknown DGP kind {self.kind!r}")
        if self.dimension < 1:
            raise ConfigError("dimension must be positive")
        for name in ("n_labeled", "n_pool", "n_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.kind == LOGISTIC_LINEAR:
            theta = np.zeros(self.dimension) if self.theta_true is None else self.theta_true
            theta = tuple(float(v) for v in np.atleast_1d(theta))
            if len(theta) != self.dimension:
                raise ConfigError("theta_true length must equal dimension")
            object.__setattr__(self, "theta_true", theta)
        else:
            if self.class_means is None:
                m = np.zeros(self.dimension)
                m[0] = 2.0
                means = (tuple(-m), tuple(m))
            else:
                means = tuple(tuple(float(v) for v in row) for row in self.class_means)
            if len(means) != 2 or any(len(row) != self.dimension for row in means):
                raise ConfigError("class_means must be two vectors of length dimension")
            if self.covariance_scale <= 0:
                raise ConfigError("covariance_scale must be positive")
            object.__setattr__(self, "class_means", means)


@dataclass(frozen=True)
class GeneratedData:
    labeled: Dataset
    pool: list
    test: Dataset
    hidden_labels: dict = field(repr=False)


def make_rng(seed: int, sub_seed: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(sub_seed)])))


def _draw(config: DgpConfig, rng, n):
    d = config.dimension
    if config.kind == LOGISTIC_LINEAR:
        X = rng.standard_normal((n, d))
        y = (rng.random(n) < expit(X @ np.asarray(config.theta_true))).astype(float)
    else:
        y = (rng.random(n) < 0.5).astype(float)
        means = np.asarray(config.class_means)
        X = means[y.astype(int)] + config.covariance_scale * rng.standard_normal((n, d))
    return X, y


def with_intercept(X):
    X = np.asarray(X, dtype=float)
    return np.hstack([np.ones((X.shape[0], 1)), X])


def generate(config: DgpConfig) -> GeneratedData:
    """Draw labeled, pool and test splits from the configured DGP.

    Splits are consecutive blocks of one draw, so they are disjoint. If the
    labeled block misses a class the draw is repeated with the next sub-seed.
    """
    n_total = config.n_labeled + config.n_pool + config.n_test
    for retry in range(config.max_retries):
        X, y = _draw(config, make_rng(config.seed, retry), n_total)
        y_lab = y[: config.n_labeled]
        if y_lab.min() != y_lab.max():
            break
    else:
        raise GenerationError(
            f"labeled split lacked a class after {config.max_retries} retries"
        )
    if config.add_intercept:
        X = with_intercept(X)
    a, b = config.n_labeled, config.n_labeled + config.n_pool
    pool = [Candidate(i, X[a + i]) for i in range(config.n_pool)]
    hidden = {i: int(y[a + i]) for i in range(config.n_pool)}
    return GeneratedData(
        labeled=Dataset(X[:a], y[:a]),
        pool=pool,
        test=Dataset(X[b:], y[b:]),
        hidden_labels=hidden,
    )


def read_table(path):
    """Read a UTF-8 CSV with header; returns ``(header, rows)`` of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} cells, header has {len(header)}")
            rows.append(row)
    return header, rows


def parse_float(text: str, row: int, column: str) -> float:
    try:
        # float() is locale-independent: decimal point only
        return float(text)
    except ValueError:
        raise DataError(f"unparseable value {text!r} at row {row}, column {column!r}") from None


def load_csv(path, label_column: str, feature_columns, missing_marker: str = MISSING_MARKER,
             add_intercept: bool = True):
    """Split a CSV into labeled rows and unlabeled pool candidates.

    Rows whose label cell equals ``missing_marker`` become candidates with ids
    in file order (0, 1, ...). Feature columns keep their listed order, after
    the intercept column when ``add_intercept`` is set. Row numbers in error
    messages count the header as row 1.
    """
    feature_columns = list(feature_columns)
    if not feature_columns:
        raise SchemaError("at least one feature column is required")
    header, rows = read_table(path)
    for col in [label_column, *feature_columns]:
        if col not in header:
            raise SchemaError(f"column {col!r} not found in {path}")
    li = header.index(label_column)
    fi = [header.index(c) for c in feature_columns]
    X_lab, y_lab, pool = [], [], []
    for r, row in enumerate(rows, start=2):
        x = [parse_float(row[j], r, c) for j, c in zip(fi, feature_columns)]
        if not np.all(np.isfinite(x)):
            raise DataError(f"non-finite feature at row {r}")
        cell = row[li].strip()
        if cell == missing_marker:
            pool.append(x)
            continue
        try:
            label = float(cell)
        except ValueError:
            label = None
        if label not in (0.0, 1.0):
            raise SchemaError(f"unknown label value {cell!r} at row {r}, column {label_column!r}")
        X_lab.append(x)
        y_lab.append(label)
    d = len(feature_columns)
    X = np.asarray(X_lab, dtype=float).reshape(-1, d)
    P = np.asarray(pool, dtype=float).reshape(-1, d)
    if add_intercept:
        X, P = with_intercept(X), with_intercept(P)
    return Dataset(X, np.asarray(y_lab)), [Candidate(i, z) for i, z in enumerate(P)]


def write_csv(path, labeled: Dataset, pool=(), label_column: str = "y", feature_names=None,
              drop_intercept: bool = True, missing_marker: str = MISSING_MARKER):
    """Write labeled rows then pool rows (label ``missing_marker``) in :func:`load_csv` layout."""
    start = 1 if drop_intercept else 0
    d = labeled.dimension - start
    names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(d)]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, label_column])
        for x, y in zip(labeled.features, labeled.labels):
            w.writerow([repr(float(v)) for v in x[start:]] + [str(int(y))])
        for c in sorted(pool, key=lambda c: c.id):
            w.writerow([repr(float(v)) for v in c.features[start:]] + [missing_marker])
    return names
