"""Command-line harness for criterion comparisons.

    bayespls run CONFIG [--force] [--jobs N]
    bayespls compare SUMMARY... [--baseline NAME]

Exit codes: 0 success, 1 runtime failure, 2 invalid config, 3 refusal to
overwrite existing outputs. A relative ``output_dir`` is resolved against
``$BAYESPLS_OUTPUT_ROOT`` when set, else the current directory.

Config files are YAML. Every key and its default:

=========================  ==========================================
key                        default
=========================  ==========================================
output_dir                 required
seeds                      required, non-empty list of integers
data.source                ``dgp`` (or ``csv``)
data.kind                  required for dgp: two_gaussians | logistic_linear
data.dimension             required for dgp
data.n_labeled/n_pool/n_test  required for dgp
data.theta_true            zeros (logistic_linear)
data.class_means           ``[[-2, 0, ...], [2, 0, ...]]`` (two_gaussians)
data.covariance_scale      1.0
data.add_intercept         true
data.path                  required for csv
data.label_column          required for csv
data.feature_columns       required for csv
data.missing_marker        ``"?"``
data.test_path             none (no test metrics)
prior.mean                 0.0 (scalar broadcast or list)
prior.precision            1.0 (scalar times identity, list = diagonal, or matrix)
engine.stop                pool_exhausted | max_iterations | score_floor
engine.stop_value          required for max_iterations and score_floor
engine.eval_every          1
fit.tol / max_iter / max_halvings  1e-8 / 100 / 30
criteria[].kind            required
criteria[].name            the kind
criteria[].refit_per_candidate  false
criteria[].oracle          oracle settings (required for oracle kinds)
=========================  ==========================================
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from .criteria import CriterionSpec, OracleSettings
from .data import DgpConfig, generate, load_csv, read_table
from .engine import EngineConfig, StopRule, run, write_trajectory
from .errors import BayesPLSError, ComparisonError, DataError, EngineError
from .glm import FitSettings, ModelSpec

log = logging.getLogger("bayespls")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_REFUSED = 0, 1, 2, 3
OUTPUT_ROOT_ENV = "BAYESPLS_OUTPUT_ROOT"
SUMMARY_COLUMNS = ("criterion", "seed", "n_steps", "initial_accuracy", "final_accuracy",
                   "final_log_loss", "wall_time")
CURVE_COLUMNS = ("criterion", "seed", "iteration", "test_accuracy")


class ConfigFileError(BayesPLSError):
    def __init__(self, field, message, line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{field}: {message}")
        self.field = field
        self.line = line


@dataclass(frozen=True)
class ExperimentConfig:
    output_dir: Path
    seeds: tuple
    criteria: tuple
    spec: ModelSpec
    stop: StopRule
    fit: FitSettings
    eval_every: int
    dgp: DgpConfig | None = None
    csv: dict | None = None


class _Fields:
    """Typed access to a parsed YAML mapping, with line numbers for errors."""

    def __init__(self, data, node, prefix=""):
        self.data = data if data is not None else {}
        self.node = node
        self.prefix = prefix
        if not isinstance(self.data, dict):
            raise ConfigFileError(prefix.rstrip(".") or "<root>", "expected a mapping", self._line())

    def _line(self, key=None):
        node = self.node
        if node is None or not isinstance(node, yaml.MappingNode):
            return None if node is None else node.start_mark.line + 1
        if key is None:
            return node.start_mark.line + 1
        for k, v in node.value:
            if k.value == key:
                return v.start_mark.line + 1
        return node.start_mark.line + 1

    def child_node(self, key):
        if isinstance(self.node, yaml.MappingNode):
            for k, v in self.node.value:
                if k.value == key:
                    return v
        return None

    def error(self, key, message):
        return ConfigFileError(self.prefix + key, message, self._line(key))

    def get(self, key, kind, default=..., check=None, message=""):
        if key not in self.data:
            if default is ...:
                raise self.error(key, "missing required field")
            return default
        value = self.data[key]
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
            elif kind is float:
                value = float(value)
            elif kind is int:
                if isinstance(value, bool) or float(value) != int(float(value)):
                    raise TypeError
                value = int(float(value))
            elif kind is str:
                if not isinstance(value, str):
                    raise TypeError
            elif kind is list:
                if not isinstance(value, list):
                    raise TypeError
        except (TypeError, ValueError):
            raise self.error(key, f"expected {kind.__name__}, got {value!r}") from None
        if check is not None and not check(value):
            raise self.error(key, message or f"invalid value {value!r}")
        return value

    def section(self, key, required=False):
        if key not in self.data:
            if required:
                raise self.error(key, "missing required section")
            return _Fields({}, None, f"{self.prefix}{key}.")
        return _Fields(self.data[key], self.child_node(key), f"{self.prefix}{key}.")

    def reject_unknown(self, allowed):
        for key in self.data:
            if key not in allowed:
                raise self.error(key, f"unknown field (allowed: {', '.join(sorted(allowed))})")


def _prior(sec: _Fields, d: int) -> ModelSpec:
    sec.reject_unknown({"mean", "precision"})
    mean = sec.data.get("mean", 0.0)
    prec = sec.data.get("precision", 1.0)
    try:
        m = np.broadcast_to(np.asarray(mean, dtype=float), (d,)).copy()
    except ValueError:
        raise sec.error("mean", f"must be a scalar or a list of length {d}") from None
    P = np.asarray(prec, dtype=float)
    if P.ndim == 0:
        P = float(P) * np.eye(d)
    elif P.ndim == 1:
        P = np.diag(P) if P.shape == (d,) else None
    if P is None or P.shape != (d, d):
        raise sec.error("precision", f"must be a scalar, a length-{d} diagonal or a {d}x{d} matrix")
    try:
        return ModelSpec(m, P)
    except BayesPLSError as exc:
        raise sec.error("precision", str(exc)) from None


def _criterion(sec: _Fields) -> CriterionSpec:
    sec.reject_unknown({"kind", "name", "refit_per_candidate", "oracle"})
    kind = sec.get("kind", str)
    oracle = None
    if "oracle" in sec.data:
        osec = sec.section("oracle")
        allowed = {f.name for f in fields(OracleSettings)}
        osec.reject_unknown(allowed)
        kw = {}
        for key in ("width", "boundary_mass_check", "min_ess"):
            if key in osec.data:
                kw[key] = osec.get(key, float, check=lambda v: v > 0, message="must be positive")
        for key in ("samples", "seed"):
            if key in osec.data:
                kw[key] = osec.get(key, int)
        for key in ("steps", "lower", "upper"):
            if key in osec.data:
                kw[key] = tuple(np.atleast_1d(osec.data[key]).tolist())
        oracle = OracleSettings(**kw)
    try:
        return CriterionSpec(kind, oracle, sec.get("refit_per_candidate", bool, False),
                             sec.get("name", str, None))
    except BayesPLSError as exc:
        raise sec.error("kind", str(exc)) from None


def parse_config(text: str, base_dir=None) -> ExperimentConfig:
    """Validate a YAML experiment description."""
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigFileError("<syntax>", str(getattr(exc, "problem", exc)),
                              mark.line + 1 if mark else None) from None
    root = _Fields(raw, node)
    root.reject_unknown({"output_dir", "seeds", "data", "prior", "engine", "fit", "criteria"})

    out = Path(root.get("output_dir", str))
    if not out.is_absolute():
        out = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / out
    seeds = root.get("seeds", list, check=lambda v: len(v) > 0, message="need at least one seed")
    if not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise root.error("seeds", "seeds must be integers")
    if len(set(seeds)) != len(seeds):
        raise root.error("seeds", "seeds must be distinct")

    data = root.section("data", required=True)
    source = data.get("source", str, "dgp", check=lambda v: v in ("dgp", "csv"),
                      message="must be dgp or csv")
    dgp = csv_cfg = None
    if source == "dgp":
        data.reject_unknown({"source", "kind", "dimension", "theta_true", "class_means",
                             "covariance_scale", "n_labeled", "n_pool", "n_test", "add_intercept"})
        positive = dict(check=lambda v: v >= 1, message="must be an integer >= 1")
        kw = dict(
            kind=data.get("kind", str),
            dimension=data.get("dimension", int, **positive),
            n_labeled=data.get("n_labeled", int, **positive),
            n_pool=data.get("n_pool", int, **positive),
            n_test=data.get("n_test", int, **positive),
            covariance_scale=data.get("covariance_scale", float, 1.0),
            add_intercept=data.get("add_intercept", bool, True),
        )
        if "theta_true" in data.data:
            kw["theta_true"] = tuple(data.get("theta_true", list))
        if "class_means" in data.data:
            kw["class_means"] = tuple(tuple(r) for r in data.get("class_means", list))
        try:
            dgp = DgpConfig(**kw)
        except BayesPLSError as exc:
            raise data.error("kind", str(exc)) from None
        d = dgp.dimension + int(dgp.add_intercept)
    else:
        data.reject_unknown({"source", "path", "label_column", "feature_columns", "missing_marker",
                             "test_path", "add_intercept"})
        base = Path(base_dir) if base_dir is not None else Path(".")
        csv_cfg = dict(
            path=base / data.get("path", str),
            label_column=data.get("label_column", str),
            feature_columns=data.get("feature_columns", list, check=lambda v: len(v) > 0,
                                     message="need at least one feature column"),
            missing_marker=data.get("missing_marker", str, "?"),
            add_intercept=data.get("add_intercept", bool, True),
        )
        test_path = data.get("test_path", str, None)
        csv_cfg["test_path"] = base / test_path if test_path else None
        d = len(csv_cfg["feature_columns"]) + int(csv_cfg["add_intercept"])

    spec = _prior(root.section("prior"), d)

    eng = root.section("engine")
    eng.reject_unknown({"stop", "stop_value", "eval_every"})
    try:
        stop = StopRule(eng.get("stop", str, "pool_exhausted"), eng.data.get("stop_value"))
    except BayesPLSError as exc:
        raise eng.error("stop", str(exc)) from None
    eval_every = eng.get("eval_every", int, 1, check=lambda v: v >= 1, message="must be >= 1")

    fsec = root.section("fit")
    fsec.reject_unknown({"tol", "max_iter", "max_halvings"})
    fit = FitSettings(
        tol=fsec.get("tol", float, 1e-8, check=lambda v: v > 0, message="must be positive"),
        max_iter=fsec.get("max_iter", int, 100, check=lambda v: v >= 1, message="must be >= 1"),
        max_halvings=fsec.get("max_halvings", int, 30, check=lambda v: v >= 0, message="must be >= 0"),
    )

    crit_list = root.get("criteria", list, check=lambda v: len(v) > 0,
                         message="need at least one criterion")
    crit_node = root.child_node("criteria")
    criteria = []
    for i, item in enumerate(crit_list):
        node = crit_node.value[i] if isinstance(crit_node, yaml.SequenceNode) else None
        criteria.append(_criterion(_Fields(item, node, f"criteria[{i}].")))
    names = [c.name for c in criteria]
    if len(set(names)) != len(names):
        raise root.error("criteria", f"criterion names must be unique, got {names}")

    return ExperimentConfig(out, tuple(seeds), tuple(criteria), spec, stop, fit, eval_every,
                            dgp, csv_cfg)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError("<file>", str(exc)) from None
    return parse_config(text, base_dir=path.parent)


def _cell_data(cfg: ExperimentConfig, seed: int):
    if cfg.dgp is not None:
        from dataclasses import replace

        g = generate(replace(cfg.dgp, seed=seed))
        return g.labeled, g.pool, g.test
    c = cfg.csv
    labeled, pool = load_csv(c["path"], c["label_column"], c["feature_columns"],
                             c["missing_marker"], c["add_intercept"])
    test = None
    if c["test_path"] is not None:
        test, _ = load_csv(c["test_path"], c["label_column"], c["feature_columns"],
                           c["missing_marker"], c["add_intercept"])
    return labeled, pool, test


def _fmt(v):
    return "" if v is None else repr(float(v))


def run_cell(cfg: ExperimentConfig, crit: CriterionSpec, seed: int) -> dict:
    """Run one (criterion, seed) cell and write its trajectory files."""
    t0 = time.perf_counter()
    labeled, pool, test = _cell_data(cfg, seed)
    engine_cfg = EngineConfig(crit, cfg.stop, cfg.fit, cfg.eval_every, seed)
    stem = cfg.output_dir / "trajectories" / f"{crit.name}_seed{seed}"
    steps_path, scores_path = Path(f"{stem}_steps.csv"), Path(f"{stem}_scores.csv")
    try:
        traj = run(labeled, pool, cfg.spec, engine_cfg, test=test)
    except EngineError as exc:
        if exc.partial is not None:
            write_trajectory(exc.partial, steps_path, scores_path)
        return {"criterion": crit.name, "seed": seed, "error": str(exc)}
    write_trajectory(traj, steps_path, scores_path)
    curve = [(s.iteration, s.metrics.accuracy) for s in traj.steps if s.metrics is not None]
    initial = traj.steps[0].metrics.accuracy if traj.steps and traj.steps[0].metrics else None
    final = traj.final_metrics
    if final is not None:
        curve.append((len(traj.steps), final.accuracy))
    return {
        "criterion": crit.name,
        "seed": seed,
        "n_steps": len(traj.steps),
        "initial_accuracy": initial,
        "final_accuracy": final.accuracy if final else None,
        "final_log_loss": final.log_loss if final else None,
        "wall_time": time.perf_counter() - t0,
        "curve": curve,
    }


def _cell_args(args):
    return run_cell(*args)


def run_experiment(cfg: ExperimentConfig, force: bool = False, jobs: int = 1):
    """Run every (criterion, seed) cell; returns ``(rows, failures)``.

    Returns ``None`` when outputs already exist and ``force`` is not set.
    """
    from .engine import _atomic_write

    summary_path = cfg.output_dir / "summary.csv"
    if summary_path.exists() and not force:
        return None
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    cells = [(cfg, crit, seed) for crit in cfg.criteria for seed in cfg.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cell_args, cells))
    else:
        results = [run_cell(*c) for c in cells]
    rows = [r for r in results if "error" not in r]
    failures = [r for r in results if "error" in r]
    _atomic_write(summary_path, SUMMARY_COLUMNS,
                  [[r["criterion"], r["seed"], r["n_steps"], _fmt(r["initial_accuracy"]),
                    _fmt(r["final_accuracy"]), _fmt(r["final_log_loss"]), _fmt(r["wall_time"])]
                   for r in rows])
    _atomic_write(cfg.output_dir / "accuracy_curves.csv", CURVE_COLUMNS,
                  [[r["criterion"], r["seed"], it, _fmt(acc)] for r in rows for it, acc in r["curve"]])
    return rows, failures


@dataclass(frozen=True)
class ComparisonRow:
    criterion: str
    n: int
    mean_accuracy: float
    sd_accuracy: float
    mean_diff: float | None = None
    sd_diff: float | None = None
    wins: int | None = None
    losses: int | None = None
    ties: int | None = None


def read_summaries(paths) -> dict:
    """Final accuracy keyed by criterion then seed, in first-seen order."""
    table = {}
    for path in paths:
        header, rows = read_table(path)
        missing = [c for c in ("criterion", "seed", "final_accuracy") if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        ci, si, ai = (header.index(c) for c in ("criterion", "seed", "final_accuracy"))
        for lineno, row in enumerate(rows, start=2):
            try:
                seed, acc = int(row[si]), float(row[ai])
            except ValueError:
                raise DataError(f"{path}: unparseable seed/accuracy at row {lineno}") from None
            per = table.setdefault(row[ci], {})
            if seed in per:
                raise ComparisonError(f"duplicate entry for ({row[ci]}, seed {seed})")
            per[seed] = acc
    if not table:
        raise ComparisonError("no summary rows found")
    return table


def compare(table: dict, baseline: str | None = None) -> list:
    names = list(table)
    if baseline is not None and baseline not in table:
        raise ComparisonError(f"baseline {baseline!r} not among criteria {names}")
    if len(names) > 1:
        baseline = baseline or names[0]
        all_seeds = set().union(*(set(v) for v in table.values()))
        missing = [(name, s) for name in names for s in sorted(all_seeds - set(table[name]))]
        if missing:
            raise ComparisonError(
                "seed sets differ; missing pairs: " + ", ".join(f"({n}, {s})" for n, s in missing),
                missing,
            )
    out = []
    for name in names:
        acc = np.array([table[name][s] for s in sorted(table[name])])
        sd = float(np.std(acc, ddof=1)) if acc.size > 1 else float("nan")
        row = dict(criterion=name, n=int(acc.size), mean_accuracy=float(acc.mean()), sd_accuracy=sd)
        if len(names) > 1 and name != baseline:
            base = np.array([table[baseline][s] for s in sorted(table[name])])
            diff = acc - base
            row.update(
                mean_diff=float(diff.mean()),
                sd_diff=float(np.std(diff, ddof=1)) if diff.size > 1 else float("nan"),
                wins=int(np.sum(diff > 0)), losses=int(np.sum(diff < 0)), ties=int(np.sum(diff == 0)),
            )
        out.append(ComparisonRow(**row))
    return out


def format_comparison(rows, baseline=None) -> str:
    with_base = any(r.mean_diff is not None for r in rows)
    cols = ["criterion", "n", "mean_accuracy", "sd_accuracy"]
    if with_base:
        cols += ["mean_diff_vs_" + (baseline or "baseline"), "sd_diff", "wins", "losses", "ties"]
    lines = [",".join(cols)]
    for r in rows:
        cells = [r.criterion, str(r.n), f"{r.mean_accuracy:.6f}", f"{r.sd_accuracy:.6f}"]
        if with_base:
            if r.mean_diff is None:
                cells += ["", "", "", "", ""]
            else:
                cells += [f"{r.mean_diff:.6f}", f"{r.sd_diff:.6f}", str(r.wins), str(r.losses), str(r.ties)]
        lines.append(",".join(cells))
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayespls", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run every (criterion, seed) cell of a config")
    p.add_argument("config")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("compare", help="tabulate one or more summary files")
    p.add_argument("files", nargs="+")
    p.add_argument("--baseline", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    if args.command == "run":
        try:
            cfg = load_config(args.config)
        except ConfigFileError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if args.jobs < 1:
            print("config error: --jobs must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        try:
            result = run_experiment(cfg, args.force, args.jobs)
        except (BayesPLSError, OSError) as exc:
            print(f"runtime error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        if result is None:
            print(f"refusing to overwrite outputs in {cfg.output_dir} (use --force)", file=sys.stderr)
            return EXIT_REFUSED
        rows, failures = result
        for f in failures:
            print(f"runtime error in {f['criterion']} seed {f['seed']}: {f['error']}", file=sys.stderr)
        log.info("wrote %d summary rows to %s", len(rows), cfg.output_dir / "summary.csv")
        return EXIT_RUNTIME if failures else EXIT_OK
    try:
        table = read_summaries(args.files)
        rows = compare(table, args.baseline)
    except (BayesPLSError, OSError) as exc:
        print(f"comparison error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    baseline = args.baseline or (next(iter(table)) if len(table) > 1 else None)
    print(format_comparison(rows, baseline))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
