"""Metrics, splitting, cross-validated tuning and the repeated-split harness."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import MultitaskDataset, RegularizerSpec, TaskData
from .optimizer import FitOptions, fit, fit_single_task

log = logging.getLogger(__name__)

DEFAULT_GAMMAS = (1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0)
METHODS = ("STL", "MMTFL(2,2)", "MMTFL(1,1)", "MMTFL(2,1)", "MMTFL(1,2)")


def default_gamma_grid() -> tuple[tuple[float, float], ...]:
    return tuple((g1, g2) for g1 in DEFAULT_GAMMAS for g2 in DEFAULT_GAMMAS)


# -- metrics --------------------------------------------------------------


def r_squared(y_true, y_pred) -> float:
    """``1 - SS_res / SS_tot``."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.size < 2:
        raise ValueError("r_squared needs two equal-length vectors of length >= 2")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r_squared is undefined for constant y_true")
    return 1.0 - float(np.sum((y_true - y_pred) ** 2)) / ss_tot


def f1_score(y_true, y_pred) -> float:
    """F1 of the +1 class. Returns 0 when precision + recall is 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError("f1_score needs equal-length label vectors")
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    fp = int(np.sum((y_true != 1) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred != 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def predict_labels(scores) -> np.ndarray:
    """Sign of the linear score; a score of exactly 0 maps to +1."""
    return np.where(np.asarray(scores) >= 0, 1.0, -1.0)


def multitask_score(A, data: MultitaskDataset, loss: str) -> float:
    """Mean over tasks of per-task R^2 (regression) or F1 (classification)."""
    scores = []
    for t, task in enumerate(data):
        z = task.X @ A[:, t]
        if loss == "logistic":
            scores.append(f1_score(task.y, predict_labels(z)))
        else:
            scores.append(r_squared(task.y, z))
    return math.fsum(scores) / len(scores)


def support_recovery_metrics(c, truth, threshold: float = 1e-3) -> tuple[float, float]:
    """Precision/recall of ``c_j >= threshold * max(c)`` against truly used rows."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    c = np.asarray(c, dtype=float)
    relevant = np.asarray(truth.support).any(axis=1)
    if c.max() <= 0:
        return 1.0, 0.0
    selected = c >= threshold * c.max()
    tp = int(np.sum(selected & relevant))
    precision = tp / int(selected.sum())
    recall = tp / int(relevant.sum()) if relevant.any() else 1.0
    return precision, recall


# -- splitting ------------------------------------------------------------


def _subset(data: MultitaskDataset, index: list[np.ndarray]) -> MultitaskDataset:
    return MultitaskDataset(tuple(TaskData(t.X[i], t.y[i], t.task_id) for t, i in zip(data, index)))


def random_split(data: MultitaskDataset, fraction: float, seed) -> tuple[MultitaskDataset, MultitaskDataset]:
    """Per-task uniform split without replacement; ``round(fraction * n)`` go to training."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for task in data:
        n_train = int(round(fraction * task.n))
        if n_train < 2 or task.n - n_train < 1:
            raise ValueError(
                f"task {task.task_id!r} with {task.n} examples cannot be split at fraction {fraction}"
            )
        perm = rng.permutation(task.n)
        train.append(np.sort(perm[:n_train]))
        test.append(np.sort(perm[n_train:]))
    return _subset(data, train), _subset(data, test)


def kfold_splits(data: MultitaskDataset, folds: int, seed) -> list[tuple[MultitaskDataset, MultitaskDataset]]:
    """Per-task K-fold partitions, returned as (fit, held-out) pairs."""
    rng = np.random.default_rng(seed)
    parts = [np.array_split(rng.permutation(task.n), folds) for task in data]
    out = []
    for f in range(folds):
        fit_idx = [np.sort(np.concatenate([p[g] for g in range(folds) if g != f])) for p in parts]
        held = [np.sort(p[f]) for p in parts]
        out.append((_subset(data, fit_idx), _subset(data, held)))
    return out


# -- methods --------------------------------------------------------------


@dataclass(frozen=True)
class Method:
    name: str
    p: int = 2
    k: int = 1
    single_task: bool = False

    @classmethod
    def parse(cls, name: str) -> "Method":
        key = name.replace(" ", "").upper()
        if key == "STL":
            return cls("STL", 2, 1, True)
        if key.startswith("MMTFL(") and key.endswith(")"):
            p, k = (int(v) for v in key[6:-1].split(","))
            RegularizerSpec(p, k)  # validates
            return cls(f"MMTFL({p},{k})", p, k)
        raise ValueError(f"unknown method {name!r}; expected STL or MMTFL(p,k)")

    def spec(self, gamma1: float, gamma2: float, loss: str) -> RegularizerSpec:
        return RegularizerSpec(self.p, self.k, gamma1, gamma2, loss)

    def fit(self, data, gamma1, gamma2, loss, opts=None):
        spec = self.spec(gamma1, gamma2, loss)
        if self.single_task:
            return fit_single_task(data, spec, opts)
        return fit(data, spec, opts)


@dataclass(frozen=True)
class ExperimentPlan:
    train_fractions: tuple[float, ...] = (0.25, 0.33, 0.5)
    repeats: int = 15
    cv_folds: int = 3
    methods: tuple[str, ...] = METHODS
    gamma_grid: tuple[tuple[float, float], ...] = field(default_factory=default_gamma_grid)
    loss: str = "least-squares"
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        if not self.train_fractions or not all(0 < f < 1 for f in self.train_fractions):
            raise ValueError("train fractions must lie in (0, 1)")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if not self.gamma_grid:
            raise ValueError("gamma grid is empty")
        for m in self.methods:
            Method.parse(m)
        object.__setattr__(self, "gamma_grid", tuple((float(a), float(b)) for a, b in self.gamma_grid))


# -- cross validation -----------------------------------------------------


def _grid_point_score(args):
    method, folds, g1, g2, loss, opts = args
    scores, errors = [], []
    for fit_part, held in folds:
        try:
            res = method.fit(fit_part, g1, g2, loss, opts)
            scores.append(multitask_score(res.A, held, loss))
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
            errors.append(f"{type(exc).__name__}: {exc}")
    return (math.fsum(scores) / len(scores) if scores else None), errors


def _map(func, items, jobs):
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


def cross_validate(train: MultitaskDataset, plan: ExperimentPlan, method: str | Method, seed, jobs: int = 1):
    """Pick the grid point with the best mean held-out score.

    Ties go to the larger ``gamma1 + gamma2``. Returns ``((gamma1, gamma2), table)``
    where ``table`` maps each grid point to its mean fold score (None on failure).
    """
    method = Method.parse(method) if isinstance(method, str) else method
    folds = kfold_splits(train, plan.cv_folds, seed)
    grid = plan.gamma_grid
    if method.single_task:
        # gamma2 does not enter single-task fits; score each gamma1 once
        g1s = sorted({g1 for g1, _ in grid})
        items = [(method, folds, g1, 1.0, plan.loss, plan.fit_options) for g1 in g1s]
        by_g1 = dict(zip(g1s, _map(_grid_point_score, items, jobs)))
        results = [by_g1[g1] for g1, _ in grid]
    else:
        items = [(method, folds, g1, g2, plan.loss, plan.fit_options) for g1, g2 in grid]
        results = _map(_grid_point_score, items, jobs)
    table = {}
    failures = []
    best, best_key = None, None
    for (g1, g2), (score, errors) in zip(grid, results):
        table[(g1, g2)] = score
        failures.extend(f"gamma=({g1:g},{g2:g}): {e}" for e in errors)
        if score is None:
            continue
        key = (score, g1 + g2)
        if best_key is None or key > best_key:
            best, best_key = (g1, g2), key
    if best is None:
        raise RuntimeError("every grid point failed:\n" + "\n".join(failures))
    return best, table


# -- benchmark ------------------------------------------------------------


@dataclass
class ExperimentReport:
    metric: str
    rows: list[dict]
    runs: list[dict]

    def to_csv(self) -> str:
        lines = ["dataset,method,fraction,mean,std"]
        for r in self.rows:
            lines.append(f"{r['dataset']},{r['method']},{r['fraction']!r},{r['mean']!r},{r['std']!r}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def mean(self, dataset: str, method: str, fraction: float) -> float:
        for r in self.rows:
            if r["dataset"] == dataset and r["method"] == method and r["fraction"] == fraction:
                return r["mean"]
        raise KeyError((dataset, method, fraction))


def _fit_diagnostics(res) -> dict:
    trace = np.asarray(res.objective_trace)
    if trace.size > 1:
        worst_rise = float(np.max((trace[1:] - trace[:-1]) / np.maximum(1.0, np.abs(trace[:-1]))))
    else:
        worst_rise = 0.0
    return {
        "iterations": res.iterations,
        "converged": bool(res.converged),
        "max_delta": float(res.max_delta),
        "max_kkt": float(res.max_kkt),
        "worst_relative_rise": worst_rise,
        "selected_features": int(np.count_nonzero(res.c)),
    }


def run_benchmark(datasets: dict[str, MultitaskDataset], plan: ExperimentPlan, seed: int = 0, jobs: int = 1) -> ExperimentReport:
    """Repeated random splits, CV-tuned fits, held-out scoring.

    All methods see the same splits. Per-cell failures are recorded in
    ``runs`` and leave the aggregate for that cell computed from the rest.
    """
    metric = "F1" if plan.loss == "logistic" else "R2"
    methods = [Method.parse(m) for m in plan.methods]
    runs = []
    rows = []
    for di, (name, data) in enumerate(datasets.items()):
        for fi, frac in enumerate(plan.train_fractions):
            scores: dict[str, list[float]] = {m.name: [] for m in methods}
            for rep in range(plan.repeats):
                train, test = random_split(data, frac, [seed, di, fi, rep, 0])
                for m in methods:
                    record = {"dataset": name, "method": m.name, "fraction": frac, "repeat": rep}
                    try:
                        (g1, g2), _ = cross_validate(train, plan, m, [seed, di, fi, rep, 1], jobs)
                        res = m.fit(train, g1, g2, plan.loss, plan.fit_options)
                        score = multitask_score(res.A, test, plan.loss)
                        record.update(gamma1=g1, gamma2=g2, score=score, **_fit_diagnostics(res))
                        scores[m.name].append(score)
                    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
                        record["error"] = f"{type(exc).__name__}: {exc}"
                        log.warning("%s %s %.2f rep %d failed: %s", name, m.name, frac, rep, exc)
                    runs.append(record)
                    log.info("%s %s frac=%.2f rep=%d score=%s", name, m.name, frac, rep, record.get("score"))
            for m in methods:
                s = scores[m.name]
                rows.append(
                    {
                        "dataset": name,
                        "method": m.name,
                        "fraction": frac,
                        "mean": math.fsum(s) / len(s) if s else float("nan"),
                        "std": float(np.std(s, ddof=1)) if len(s) > 1 else 0.0,
                        "n_ok": len(s),
                        "n_failed": plan.repeats - len(s),
                    }
                )
    return ExperimentReport(metric, rows, runs)


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)
