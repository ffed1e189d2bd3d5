"""Alternating optimization of the multiplicative model.

Each outer iteration solves T independent single-task problems on the
feature-scaled data ``X_t diag(c)``, forms ``A = diag(c_old) B`` and then
updates the across-task gate in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Decomposition, FitResult, MultitaskDataset, RegularizerSpec, multiplicative_objective
from .solvers import SolverOptions, solve_subproblem


@dataclass(frozen=True)
class FitOptions:
    epsilon: float = 1e-6
    max_outer_iters: int = 500
    solver_opts: SolverOptions = field(default_factory=SolverOptions)
    c_init: float = 1.0
    # 0 disables the relative-objective stop; only max|dA| < epsilon ends a run
    rel_obj_tol: float = 0.0
    # Use the alternative gamma2 exponent
    # (1/2 - p/(2kp)) instead of the derived p/(2kq) - 1. Only for demonstrations.
    paper_exponent: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be nonnegative")
        if not self.c_init > 0:
            raise ValueError("c_init must be positive")


def scale_features(X, c) -> np.ndarray:
    """Multiply column j of ``X`` by ``c[j]``."""
    X = np.asarray(X, dtype=float)
    c = np.asarray(c, dtype=float)
    if X.ndim != 2 or c.shape != (X.shape[1],):
        raise ValueError(f"cannot scale X of shape {X.shape} by c of shape {c.shape}")
    if np.any(c < 0):
        raise ValueError("c must be nonnegative")
    return X * c


def sigma_exponents(spec: RegularizerSpec, paper_exponent: bool = False) -> tuple[float, float]:
    """Exponents of gamma1 and gamma2 in the closed-form sigma update."""
    p, k, q = spec.p, spec.k, spec.q
    e1 = 1.0 - p / (2 * k * q)
    e2 = 0.5 - p / (2 * k * p) if paper_exponent else p / (2 * k * q) - 1.0
    return e1, e2


def update_sigma(A, spec: RegularizerSpec, paper_exponent: bool = False) -> np.ndarray:
    """Optimal auxiliary sigma for fixed A.

    ``sigma_j = gamma1^(1 - p/2kq) gamma2^(p/2kq - 1) (sum_t |a_jt|^p)^(1/2q)``
    """
    A = np.asarray(A, dtype=float)
    e1, e2 = sigma_exponents(spec, paper_exponent)
    rows = np.sum(np.abs(A) ** spec.p, axis=1)
    return spec.gamma1**e1 * spec.gamma2**e2 * rows ** (1.0 / (2 * spec.q))


def sigma_to_c(sigma, k: float) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    return sigma ** (1.0 / k)


def closed_form_c_from_B(B, spec: RegularizerSpec) -> np.ndarray:
    """``c_j = (gamma1/gamma2)^(1/k) (sum_t |b_jt|^p)^(1/(2kq - p))``."""
    B = np.asarray(B, dtype=float)
    p, k, q = spec.p, spec.k, spec.q
    rows = np.sum(np.abs(B) ** p, axis=1)
    return (spec.gamma1 / spec.gamma2) ** (1.0 / k) * rows ** (1.0 / (2 * k * q - p))


def consistent_B(A, c) -> np.ndarray:
    """``B = diag(c)^+ A``: rows with ``c_j = 0`` become zero."""
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)
    B = np.zeros_like(A)
    nz = c > 0
    B[nz] = A[nz] / c[nz, None]
    return B


def _solve_tasks(data, c, gamma1, spec, opts, B_warm):
    B = np.empty((data.d, data.T))
    worst = 0.0
    all_ok = True
    for t, task in enumerate(data):
        beta0 = None if B_warm is None else B_warm[:, t]
        info = solve_subproblem(scale_features(task.X, c), task.y, gamma1, spec.loss, spec.p, opts, beta0)
        B[:, t] = info.beta
        worst = max(worst, info.kkt)
        all_ok = all_ok and info.converged
    return B, worst, all_ok


def fit(data: MultitaskDataset, spec: RegularizerSpec, opts: FitOptions | None = None) -> FitResult:
    """Alternate between per-task solves and the closed-form gate update.

    With ``max_outer_iters=0`` only the first subproblem is solved at the
    initial ``c``; that is single-task learning.

    On return ``B`` is re-derived from the final ``(A, c)`` so that
    ``A = diag(c) B`` holds for the reported decomposition.
    """
    opts = opts or FitOptions()
    if any(task.n < 1 for task in data):
        raise ValueError("every task needs at least one example")
    c = np.full(data.d, float(opts.c_init))
    sopts = opts.solver_opts

    if opts.max_outer_iters == 0:
        B, kkt, ok = _solve_tasks(data, c, spec.gamma1, spec, sopts, None)
        dec = Decomposition(c, B)
        obj = multiplicative_objective(dec, data, spec)
        return FitResult(dec, (obj,), 0, ok, 0.0, "single-task", kkt, spec)

    trace: list[float] = []
    A_prev = None
    B_warm = None
    delta = math.inf
    converged = False
    reason = "max_outer_iters"
    worst_kkt = 0.0
    it = 0
    for it in range(1, opts.max_outer_iters + 1):
        B, kkt, _ = _solve_tasks(data, c, spec.gamma1, spec, sopts, B_warm)
        worst_kkt = max(worst_kkt, kkt)
        A = c[:, None] * B
        c = sigma_to_c(update_sigma(A, spec, opts.paper_exponent), spec.k)
        B_warm = consistent_B(A, c)
        trace.append(multiplicative_objective(Decomposition(c, B_warm), data, spec))
        if A_prev is not None:
            delta = float(np.max(np.abs(A - A_prev)))
            if delta < opts.epsilon:
                converged, reason = True, "max_delta"
                break
            rel = abs(trace[-2] - trace[-1]) / max(1.0, abs(trace[-1]))
            if opts.rel_obj_tol > 0 and rel < opts.rel_obj_tol:
                converged, reason = True, "objective"
                break
        A_prev = A
    dec = Decomposition(c, B_warm)
    return FitResult(dec, tuple(trace), it, converged, delta, reason, worst_kkt, spec)


def fit_single_task(data: MultitaskDataset, spec: RegularizerSpec, opts: FitOptions | None = None) -> FitResult:
    """Independent per-task fits: the gate frozen at ``c = 1``."""
    opts = opts or FitOptions()
    return fit(data, spec, replace(opts, max_outer_iters=0, c_init=1.0))


def predict(result: FitResult, X, t: int) -> np.ndarray:
    return np.asarray(X, dtype=float) @ result.A[:, t]
