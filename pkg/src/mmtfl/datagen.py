"""Synthetic multitask regression sets with known feature sharing.

D1: the first 40% of features are irrelevant to every task; every other
feature is used by every task.

D2: tasks fall into contiguous groups. Feature rows are laid out as

    [5 irrelevant | 10 common | E_0 | O_01 | E_1 | O_12 | ... | E_{G-1}]

where ``E_g`` is a block used only by group g and ``O_g,g+1`` is a 7-feature
block shared by neighbouring groups g and g+1. The exclusive blocks take
whatever is left of ``d`` and are sized as evenly as possible, larger
blocks first. With d=100 and 6 groups this gives exclusive sizes
(9, 9, 8, 8, 8, 8) and 85 = 50 + 5 * 7 non-common relevant features.
Group sizes follow the same "even, larger first" rule, so 20 tasks in
6 groups are (4, 4, 3, 3, 3, 3).

Nonzero weights are drawn uniformly from [0.5, 1.5] * weight_scale, with
one random sign per feature row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MultitaskDataset

D2_IRRELEVANT = 5
D2_COMMON = 10
D2_OVERLAP = 7


@dataclass(frozen=True)
class SyntheticSpec:
    pattern: str = "D1"
    T: int | None = None
    n: int = 200
    d: int = 100
    seed: int = 0
    weight_scale: float = 1.0
    groups: int = 6

    def __post_init__(self):
        pattern = self.pattern.upper()
        if pattern not in ("D1", "D2"):
            raise ValueError(f"pattern must be D1 or D2, got {self.pattern!r}")
        object.__setattr__(self, "pattern", pattern)
        if self.T is None:
            object.__setattr__(self, "T", 10 if pattern == "D1" else 20)
        if min(self.T, self.n, self.d) < 1:
            raise ValueError("T, n and d must be at least 1")
        if not self.weight_scale > 0:
            raise ValueError("weight_scale must be positive")


@dataclass(frozen=True)
class GroundTruth:
    A_true: np.ndarray
    support: np.ndarray
    irrelevant_features: tuple[int, ...]
    task_groups: tuple[int, ...] = ()


def even_sizes(total: int, parts: int) -> list[int]:
    """Split ``total`` into ``parts`` sizes differing by at most one, larger first."""
    base, extra = divmod(total, parts)
    return [base + 1 if i < extra else base for i in range(parts)]


def d2_layout(d: int, groups: int) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Feature ranges ``(start, stop)`` of exclusive and overlap blocks."""
    exclusive_total = d - D2_IRRELEVANT - D2_COMMON - D2_OVERLAP * (groups - 1)
    if exclusive_total < 0:
        raise ValueError(f"d={d} is too small for a {groups}-group staircase")
    sizes = even_sizes(exclusive_total, groups)
    exclusive, overlap = [], []
    pos = D2_IRRELEVANT + D2_COMMON
    for g in range(groups):
        exclusive.append((pos, pos + sizes[g]))
        pos += sizes[g]
        if g < groups - 1:
            overlap.append((pos, pos + D2_OVERLAP))
            pos += D2_OVERLAP
    return exclusive, overlap


def _draw(rng, support, scale):
    d, T = support.shape
    mags = rng.uniform(0.5, 1.5, size=(d, T)) * scale
    signs = rng.choice([-1.0, 1.0], size=d)
    return np.where(support, mags * signs[:, None], 0.0)


def _sample(rng, A, n):
    Xs, ys = [], []
    for t in range(A.shape[1]):
        X = rng.standard_normal((n, A.shape[0]))
        ys.append(X @ A[:, t] + rng.standard_normal(n))
        Xs.append(X)
    return MultitaskDataset.from_arrays(Xs, ys)


def generate_d1(spec: SyntheticSpec) -> tuple[MultitaskDataset, GroundTruth]:
    if spec.pattern != "D1":
        raise ValueError("generate_d1 needs a D1 spec")
    rng = np.random.default_rng(spec.seed)
    n_zero = int(0.4 * spec.d)
    support = np.zeros((spec.d, spec.T), dtype=bool)
    support[n_zero:] = True
    A = _draw(rng, support, spec.weight_scale)
    data = _sample(rng, A, spec.n)
    return data, GroundTruth(A, support, tuple(range(n_zero)))


def generate_d2(spec: SyntheticSpec) -> tuple[MultitaskDataset, GroundTruth]:
    if spec.pattern != "D2":
        raise ValueError("generate_d2 needs a D2 spec")
    G = spec.groups
    if spec.T < G:
        raise ValueError(f"D2 needs at least {G} tasks, got {spec.T}")
    rng = np.random.default_rng(spec.seed)
    task_group = np.repeat(np.arange(G), even_sizes(spec.T, G))
    exclusive, overlap = d2_layout(spec.d, G)
    support = np.zeros((spec.d, spec.T), dtype=bool)
    support[D2_IRRELEVANT : D2_IRRELEVANT + D2_COMMON] = True
    for g in range(G):
        in_g = task_group == g
        a, b = exclusive[g]
        support[a:b, in_g] = True
        if g < G - 1:
            a, b = overlap[g]
            support[a:b, in_g | (task_group == g + 1)] = True
    A = _draw(rng, support, spec.weight_scale)
    data = _sample(rng, A, spec.n)
    return data, GroundTruth(A, support, tuple(range(D2_IRRELEVANT)), tuple(int(g) for g in task_group))


def generate(spec: SyntheticSpec) -> tuple[MultitaskDataset, GroundTruth]:
    return generate_d1(spec) if spec.pattern == "D1" else generate_d2(spec)
