import numpy as np
import pytest

from mmtfl.datagen import SyntheticSpec, d2_layout, even_sizes, generate, generate_d1, generate_d2


def test_spec_defaults_and_validation():
    assert SyntheticSpec("d1").T == 10
    assert SyntheticSpec("D2").T == 20
    with pytest.raises(ValueError):
        SyntheticSpec("D3")
    with pytest.raises(ValueError):
        SyntheticSpec("D1", n=0)
    with pytest.raises(ValueError):
        SyntheticSpec("D1", weight_scale=0)


def test_even_sizes():
    assert even_sizes(20, 6) == [4, 4, 3, 3, 3, 3]
    assert even_sizes(12, 6) == [2] * 6
    assert even_sizes(50, 6) == [9, 9, 8, 8, 8, 8]


def test_d1_support():
    data, truth = generate_d1(SyntheticSpec("D1"))
    assert (data.T, data.d, data[0].n) == (10, 100, 200)
    rows = truth.support.any(axis=1)
    assert not rows[:40].any()
    assert truth.support[40:].all()
    assert truth.irrelevant_features == tuple(range(40))
    np.testing.assert_array_equal(truth.A_true != 0, truth.support)
    with pytest.raises(ValueError):
        generate_d1(SyntheticSpec("D2"))


def test_d1_noise_variance():
    data, truth = generate(SyntheticSpec("D1", seed=0))
    resid = np.concatenate([task.y - task.X @ truth.A_true[:, t] for t, task in enumerate(data)])
    assert np.var(resid, ddof=1) == pytest.approx(1.0, rel=0.1)
    for t, task in enumerate(data):
        expect = float(truth.A_true[:, t] @ truth.A_true[:, t]) + 1.0
        assert np.var(task.y, ddof=1) == pytest.approx(expect, rel=0.15)


@pytest.mark.parametrize("pattern", ["D1", "D2"])
def test_target_variance_on_average(pattern):
    # single tasks at n=200 scatter by about 10%, so check the task mean
    for seed in range(3):
        data, truth = generate(SyntheticSpec(pattern, seed=seed))
        A = truth.A_true
        ratio = np.mean([np.var(task.y, ddof=1) / (A[:, t] @ A[:, t] + 1) for t, task in enumerate(data)])
        assert ratio == pytest.approx(1.0, rel=0.15)


def test_d2_staircase_counts():
    data, truth = generate_d2(SyntheticSpec("D2"))
    S = truth.support
    assert (data.T, data.d) == (20, 100)
    assert int((~S.any(axis=1)).sum()) == 5
    assert int(S.all(axis=1).sum()) == 10
    groups = np.array(truth.task_groups)
    assert np.bincount(groups).tolist() == [4, 4, 3, 3, 3, 3]
    used = np.array([S[:, groups == g].any(axis=1) for g in range(6)])
    for g in range(6):
        for h in range(g + 1, 6):
            shared = int((used[g] & used[h]).sum())
            assert shared == (17 if h == g + 1 else 10), (g, h)
    # every non-common relevant row belongs to one or two adjacent groups
    per_row = used.sum(axis=0)[15:]
    assert set(per_row.tolist()) <= {1, 2} and per_row.size == 85
    # within a group all tasks share the same support
    for g in range(6):
        cols = S[:, groups == g]
        assert (cols == cols[:, :1]).all()
    assert S.sum(axis=0).max() < 100


def test_d2_layout_and_small_groups():
    exclusive, overlap = d2_layout(100, 6)
    assert [b - a for a, b in exclusive] == [9, 9, 8, 8, 8, 8]
    assert all(b - a == 7 for a, b in overlap)
    assert exclusive[-1][1] == 100
    _, truth = generate(SyntheticSpec("D2", T=12))
    assert np.bincount(truth.task_groups).tolist() == [2] * 6
    with pytest.raises(ValueError):
        generate(SyntheticSpec("D2", T=5))
    with pytest.raises(ValueError):
        d2_layout(40, 6)


def test_generation_is_deterministic():
    a, ta = generate(SyntheticSpec("D2", seed=9))
    b, tb = generate(SyntheticSpec("D2", seed=9))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.X, y.X)
        np.testing.assert_array_equal(x.y, y.y)
    np.testing.assert_array_equal(ta.A_true, tb.A_true)
    c, _ = generate(SyntheticSpec("D2", seed=10))
    assert not np.array_equal(a[0].X, c[0].X)


def test_weight_magnitudes():
    _, truth = generate(SyntheticSpec("D1", weight_scale=2.0))
    nz = np.abs(truth.A_true[truth.support])
    assert nz.min() >= 1.0 and nz.max() <= 3.0
    signs = np.sign(truth.A_true[40:])
    assert (signs == signs[:, :1]).all()
