"""Domain types, losses and the three objective functions.

Losses are plain sums over examples (no 1/2, no 1/n), so ``gamma1`` and
``gamma2`` are on the scale of the summed residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

LOSSES = ("least-squares", "logistic")
EXPONENTS = (1, 2)


def _frozen(a, ndim):
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TaskData:
    X: np.ndarray
    y: np.ndarray
    task_id: str = ""

    def __post_init__(self):
        X = _frozen(self.X, 2)
        y = _frozen(self.y, 1)
        if X.shape[0] != y.shape[0]:
            raise ValueError(
                f"task {self.task_id!r}: X has {X.shape[0]} rows but y has {y.shape[0]}"
            )
        if X.shape[0] < 1:
            raise ValueError(f"task {self.task_id!r} is empty")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError(f"task {self.task_id!r} contains non-finite values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class MultitaskDataset:
    """T tasks sharing one feature space of dimension ``d``."""

    tasks: tuple[TaskData, ...]

    def __post_init__(self):
        tasks = tuple(self.tasks)
        if not tasks:
            raise ValueError("a dataset needs at least one task")
        widths = {t.X.shape[1] for t in tasks}
        if len(widths) != 1:
            detail = ", ".join(f"{t.task_id or i}: d={t.X.shape[1]}" for i, t in enumerate(tasks))
            raise ValueError(f"tasks disagree on feature count ({detail})")
        object.__setattr__(self, "tasks", tasks)

    @classmethod
    def from_arrays(cls, Xs: Sequence, ys: Sequence, ids: Sequence[str] | None = None):
        if len(Xs) != len(ys):
            raise ValueError("need one target vector per design matrix")
        ids = ids if ids is not None else [f"task_{t + 1}" for t in range(len(Xs))]
        return cls(tuple(TaskData(X, y, str(i)) for X, y, i in zip(Xs, ys, ids)))

    @property
    def d(self) -> int:
        return self.tasks[0].X.shape[1]

    @property
    def T(self) -> int:
        return len(self.tasks)

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, t) -> TaskData:
        return self.tasks[t]


@dataclass(frozen=True)
class RegularizerSpec:
    """The (p, k, gamma1, gamma2) configuration of the multiplicative model.

    ``q`` and ``lam`` are the parameters of the equivalent jointly
    regularized problem.
    """

    p: int = 2
    k: int = 1
    gamma1: float = 1.0
    gamma2: float = 1.0
    loss: str = "least-squares"

    def __post_init__(self):
        if self.p not in EXPONENTS or self.k not in EXPONENTS:
            raise ValueError(f"p and k must be 1 or 2, got p={self.p}, k={self.k}")
        if not (self.gamma1 > 0 and self.gamma2 > 0):
            raise ValueError("gamma1 and gamma2 must be positive")
        if not (math.isfinite(self.gamma1) and math.isfinite(self.gamma2)):
            raise ValueError("gamma1 and gamma2 must be finite")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")

    @property
    def q(self) -> float:
        return (self.k + self.p) / (2 * self.k)

    @property
    def lam(self) -> float:
        return map_multiplicative_to_joint(self.p, self.k, self.gamma1, self.gamma2)[1]

    @property
    def name(self) -> str:
        return f"MMTFL({self.p},{self.k})"


@dataclass(frozen=True)
class Decomposition:
    """Across-task gate ``c`` (length d) and task-specific weights ``B`` (d x T)."""

    c: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        c = _frozen(self.c, 1)
        B = _frozen(self.B, 2)
        if B.shape[0] != c.shape[0]:
            raise ValueError(f"c has length {c.shape[0]} but B has {B.shape[0]} rows")
        if np.any(c < 0):
            raise ValueError("c must be nonnegative")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "B", B)

    @property
    def A(self) -> np.ndarray:
        return self.c[:, None] * self.B


@dataclass(frozen=True)
class FitResult:
    decomposition: Decomposition
    objective_trace: tuple[float, ...]
    iterations: int
    converged: bool
    max_delta: float
    reason: str = ""
    max_kkt: float = 0.0
    spec: RegularizerSpec | None = field(default=None, compare=False)

    @property
    def c(self) -> np.ndarray:
        return self.decomposition.c

    @property
    def B(self) -> np.ndarray:
        return self.decomposition.B

    @property
    def A(self) -> np.ndarray:
        return self.decomposition.A


def row_operator_norm(v, p: float, q: float) -> float:
    """``(sum_t |v_t|^p)^(1/q)``; the q-th root of the p-th power sum."""
    if not (p > 0 and q > 0):
        raise ValueError("p and q must be positive")
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("row_operator_norm got non-finite entries")
    s = float(np.sum(np.abs(v) ** p))
    return s ** (1.0 / q) if s > 0 else 0.0


def _row_power_sums(A: np.ndarray, p: float) -> np.ndarray:
    return np.sum(np.abs(A) ** p, axis=1)


def loss_and_gradient(w, X, y, loss_kind: str = "least-squares"):
    """Summed loss of the linear model ``X @ w`` and its gradient in ``w``.

    least-squares: ``sum (x_i.w - y_i)^2``.
    logistic: ``sum log(1 + exp(-y_i x_i.w))`` with labels in {-1, +1}.
    """
    w = np.asarray(w, dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape != (y.shape[0], w.shape[0]):
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}, w {w.shape}")
    z = X @ w
    if loss_kind == "least-squares":
        r = z - y
        return float(r @ r), 2.0 * (X.T @ r)
    if loss_kind == "logistic":
        _check_labels(y)
        m = y * z
        # d/dm log(1+e^-m) = -sigmoid(-m)
        s = _sigmoid(-m)
        return float(np.sum(np.logaddexp(0.0, -m))), -(X.T @ (y * s))
    raise ValueError(f"unknown loss {loss_kind!r}")


def loss_value(w, X, y, loss_kind: str = "least-squares") -> float:
    z = X @ w
    if loss_kind == "least-squares":
        r = z - y
        return float(r @ r)
    return float(np.sum(np.logaddexp(0.0, -y * z)))


def _sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _check_labels(y):
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ValueError("logistic loss needs labels in {-1, +1}")


def total_loss(A: np.ndarray, data: MultitaskDataset, loss_kind: str) -> float:
    return math.fsum(loss_value(A[:, t], task.X, task.y, loss_kind) for t, task in enumerate(data))


def _check_A(A, data):
    A = np.asarray(A, dtype=float)
    if A.shape != (data.d, data.T):
        raise ValueError(f"A must be {data.d} x {data.T}, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("A contains non-finite entries")
    return A


def multiplicative_objective(dec: Decomposition, data: MultitaskDataset, spec: RegularizerSpec) -> float:
    """Loss at ``A = diag(c) B`` plus ``gamma1 sum|B|^p + gamma2 sum c^k``."""
    A = _check_A(dec.A, data)
    penalty = spec.gamma1 * float(np.sum(np.abs(dec.B) ** spec.p)) + spec.gamma2 * float(
        np.sum(dec.c**spec.k)
    )
    return total_loss(A, data, spec.loss) + penalty


def joint_penalty(A, p: float, q: float) -> float:
    """``sum_j (sum_t |a_jt|^p)^(1/(2q))`` -- the row penalty without lambda."""
    return float(np.sum(_row_power_sums(np.asarray(A, dtype=float), p) ** (1.0 / (2 * q))))


def joint_objective(A, data: MultitaskDataset, spec: RegularizerSpec, lam: float | None = None) -> float:
    """Jointly regularized objective with the mapped ``(q, lam)`` of ``spec``."""
    A = _check_A(A, data)
    lam = spec.lam if lam is None else lam
    return total_loss(A, data, spec.loss) + lam * joint_penalty(A, spec.p, spec.q)


def variational_objective(A, sigma, data: MultitaskDataset, spec: RegularizerSpec, mu1: float, mu2: float) -> float:
    """Auxiliary-sigma form: loss + mu1 sum ||a^j||^{p/q} / sigma_j + mu2 sum sigma_j."""
    A = _check_A(A, data)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (data.d,):
        raise ValueError(f"sigma must have length {data.d}")
    if np.any(sigma <= 0) or not np.all(np.isfinite(sigma)):
        raise ValueError("sigma must be strictly positive and finite")
    rows = _row_power_sums(A, spec.p) ** (1.0 / spec.q)
    reg = mu1 * float(np.sum(rows / sigma)) + mu2 * float(np.sum(sigma))
    return total_loss(A, data, spec.loss) + reg


def map_multiplicative_to_joint(p: float, k: float, gamma1: float, gamma2: float) -> tuple[float, float]:
    """Return ``(q, lam)`` of the joint problem equivalent to (p, k, gamma1, gamma2)."""
    if not (p > 0 and k > 0):
        raise ValueError("p and k must be positive")
    if not (gamma1 > 0 and gamma2 > 0):
        raise ValueError("gamma1 and gamma2 must be positive")
    q = (k + p) / (2 * k)
    e = p / (k * q)
    lam = 2.0 * math.sqrt(gamma1 ** (2.0 - e) * gamma2**e)
    return q, lam


def map_joint_to_multiplicative(p: float, q: float, lam: float, ratio: float = 1.0) -> tuple[float, float, float]:
    """Invert the hyperparameter map. Returns ``(k, gamma1, gamma2)``.

    The inverse is one-parameter underdetermined; ``ratio`` fixes
    ``gamma1 / gamma2``.
    """
    if not 2 * q - 1 > 0:
        raise ValueError(f"q must exceed 1/2, got {q}")
    if not (lam > 0 and ratio > 0 and p > 0):
        raise ValueError("p, lam and ratio must be positive")
    k = p / (2 * q - 1)
    # lam = 2 sqrt(g1^(2-e) g2^e), g1 = ratio*g2  =>  lam/2 = ratio^(1-e/2) g2
    e = p / (k * q)
    gamma2 = (lam / 2.0) / ratio ** (1.0 - e / 2.0)
    return k, ratio * gamma2, gamma2


def matched_mu(spec: RegularizerSpec) -> tuple[float, float]:
    """(mu1, mu2) of the auxiliary-sigma problem matched to ``spec``."""
    p, k, q = spec.p, spec.k, spec.q
    mu1 = spec.gamma1 ** ((2 * k * q - p) / (k * q)) * spec.gamma2 ** ((p - k * q) / (k * q))
    return mu1, spec.gamma2
