import json

import numpy as np
import pytest

from mmtfl.core import MultitaskDataset
from mmtfl.datagen import SyntheticSpec, generate
from mmtfl.evaluation import (
    ExperimentPlan,
    Method,
    cross_validate,
    default_gamma_grid,
    f1_score,
    kfold_splits,
    multitask_score,
    predict_labels,
    r_squared,
    random_split,
    run_benchmark,
    support_recovery_metrics,
)
from mmtfl.optimizer import FitOptions


def small(seed=0, T=3, n=40, d=12):
    data, truth = generate(SyntheticSpec("D1", T=T, n=n, d=d, seed=seed))
    return data, truth


def test_r_squared_examples():
    y = np.array([1.0, 2.0, 3.0])
    assert r_squared(y, y) == 1.0
    assert r_squared(y, np.full(3, 2.0)) == 0.0
    assert r_squared(y, np.array([1.0, 2.0, 5.0])) == pytest.approx(-1.0)
    with pytest.raises(ValueError):
        r_squared(np.ones(3), np.ones(3))
    with pytest.raises(ValueError):
        r_squared(np.ones(1), np.ones(1))


def test_f1_examples():
    y = np.array([1, 1, -1, 1, -1, -1])
    assert f1_score(y, y) == 1.0
    assert f1_score(y, -np.ones(6)) == 0.0
    # TP=2, FP=1, FN=1
    pred = np.array([1, 1, 1, -1, -1, -1])
    assert f1_score(y, pred) == pytest.approx(2 / 3)


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(0)
    y, p = rng.standard_normal(30), rng.standard_normal(30)
    perm = rng.permutation(30)
    assert r_squared(y, p) == pytest.approx(r_squared(y[perm], p[perm]), rel=1e-12)
    yl, pl = np.sign(y), np.sign(p)
    assert f1_score(yl, pl) == f1_score(yl[perm], pl[perm])


def test_tie_predicts_positive():
    np.testing.assert_array_equal(predict_labels([0.0, -1e-300, 2.0]), [1.0, -1.0, 1.0])


def test_random_split():
    data, _ = small(n=200)
    tr, te = random_split(data, 0.5, 3)
    assert [t.n for t in tr] == [100] * 3 and [t.n for t in te] == [100] * 3
    for full, a, b in zip(data, tr, te):
        rows = {tuple(r) for r in full.X}
        assert {tuple(r) for r in a.X} | {tuple(r) for r in b.X} == rows
        assert not {tuple(r) for r in a.X} & {tuple(r) for r in b.X}
    tr2, _ = random_split(data, 0.5, 3)
    np.testing.assert_array_equal(tr[1].X, tr2[1].X)
    with pytest.raises(ValueError):
        random_split(small(n=3)[0], 0.25, 0)
    with pytest.raises(ValueError):
        random_split(data, 1.0, 0)


def test_kfold_partitions():
    data, _ = small(n=31)
    folds = kfold_splits(data, 3, 0)
    assert sum(h[0].n for _, h in folds) == 31
    for f, h in folds:
        assert f[0].n + h[0].n == 31


def test_method_parsing():
    assert Method.parse("stl").single_task
    m = Method.parse("MMTFL(1, 2)")
    assert (m.p, m.k, m.name) == (1, 2, "MMTFL(1,2)")
    for bad in ["MTFL", "MMTFL(3,1)", "MMTFL(1)"]:
        with pytest.raises(ValueError):
            Method.parse(bad)


def test_plan_validation():
    assert len(ExperimentPlan().gamma_grid) == 36
    assert default_gamma_grid()[0] == (1e-3, 1e-3)
    for bad in [dict(train_fractions=(1.2,)), dict(repeats=0), dict(cv_folds=1), dict(gamma_grid=()), dict(methods=("X",))]:
        with pytest.raises(ValueError):
            ExperimentPlan(**bad)


def test_support_recovery_examples():
    _, truth = generate(SyntheticSpec("D1"))
    assert support_recovery_metrics(truth.support.any(axis=1).astype(float), truth, 0.5) == (1.0, 1.0)
    assert support_recovery_metrics(np.ones(100), truth) == (0.6, 1.0)
    assert support_recovery_metrics(np.zeros(100), truth) == (1.0, 0.0)
    with pytest.raises(ValueError):
        support_recovery_metrics(np.ones(100), truth, 1.0)


def test_cross_validate_single_point_and_ties():
    data, _ = small()
    plan = ExperimentPlan(gamma_grid=((0.5, 2.0),), methods=("MMTFL(2,1)",))
    assert cross_validate(data, plan, "MMTFL(2,1)", 0)[0] == (0.5, 2.0)
    # STL ignores gamma2, so every gamma2 ties and the largest wins
    plan = ExperimentPlan(gamma_grid=((1.0, 0.1), (1.0, 10.0), (1.0, 1.0)))
    best, table = cross_validate(data, plan, "STL", 0)
    assert best == (1.0, 10.0)
    assert len(set(table.values())) == 1


def test_cross_validate_deterministic():
    data, _ = small(seed=4)
    plan = ExperimentPlan(gamma_grid=((0.1, 0.1), (1.0, 1.0), (10.0, 1.0)))
    assert cross_validate(data, plan, "MMTFL(2,2)", 7) == cross_validate(data, plan, "MMTFL(2,2)", 7)


def test_cv_choice_is_near_oracle():
    data, _ = small(seed=5, T=4, n=80, d=20)
    train, test = random_split(data, 0.5, 0)
    grid = tuple((a, b) for a in (0.1, 1.0, 10.0) for b in (0.1, 1.0, 10.0))
    plan = ExperimentPlan(gamma_grid=grid)
    m = Method.parse("MMTFL(2,1)")
    held = {g: multitask_score(m.fit(train, *g, "least-squares").A, test, "least-squares") for g in grid}
    best, _ = cross_validate(train, plan, m, 0)
    assert held[best] >= max(held.values()) - 0.05


def test_cross_validate_all_fail():
    X = np.zeros((6, 2))
    data = MultitaskDataset.from_arrays([X, X], [np.ones(6), np.ones(6)])
    with pytest.raises(RuntimeError, match="every grid point failed"):
        cross_validate(data, ExperimentPlan(gamma_grid=((1.0, 1.0),)), "STL", 0)


def test_stl_equals_zero_iteration_fit():
    data, _ = small()
    m = Method.parse("STL")
    a = m.fit(data, 0.7, 3.0, "least-squares")
    b = Method.parse("MMTFL(2,1)").fit(data, 0.7, 99.0, "least-squares", FitOptions(max_outer_iters=0))
    np.testing.assert_array_equal(a.A, b.A)


def test_run_benchmark_small_and_reproducible():
    data, _ = small(n=60)
    plan = ExperimentPlan(
        train_fractions=(0.5,), repeats=2, methods=("STL", "MMTFL(2,1)"), gamma_grid=((0.1, 1.0), (1.0, 1.0))
    )
    a = run_benchmark({"tiny": data}, plan, seed=1)
    b = run_benchmark({"tiny": data}, plan, seed=1)
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    assert a.metric == "R2"
    assert a.to_csv().splitlines()[0] == "dataset,method,fraction,mean,std"
    assert len(a.rows) == 2 and all(r["std"] >= 0 for r in a.rows)
    assert len(a.runs) == 4
    assert json.loads(a.to_json())["rows"][0]["n_ok"] == 2
    assert a.mean("tiny", "STL", 0.5) == a.rows[0]["mean"]


def test_run_benchmark_records_failures():
    X = np.zeros((10, 2))
    data = MultitaskDataset.from_arrays([X, X], [np.ones(10), np.ones(10)])
    plan = ExperimentPlan(train_fractions=(0.5,), repeats=1, methods=("STL",), gamma_grid=((1.0, 1.0),))
    rep = run_benchmark({"flat": data}, plan)
    assert "error" in rep.runs[0] and rep.rows[0]["n_failed"] == 1


def test_classification_metric():
    rng = np.random.default_rng(2)
    w = rng.standard_normal(5)
    Xs = [rng.standard_normal((60, 5)) for _ in range(2)]
    data = MultitaskDataset.from_arrays(Xs, [np.where(X @ w >= 0, 1.0, -1.0) for X in Xs])
    plan = ExperimentPlan(train_fractions=(0.5,), repeats=1, methods=("MMTFL(2,2)",), gamma_grid=((1.0, 1.0),), loss="logistic")
    rep = run_benchmark({"cls": data}, plan)
    assert rep.metric == "F1"
    assert rep.rows[0]["mean"] > 0.8
