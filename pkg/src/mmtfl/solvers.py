"""Single-task solvers for ``min_b L(b, X, y) + gamma1 * ||b||_p^p``.

Four (loss, p) combinations are covered. Every solver is certified by
:func:`kkt_residual`; a solve counts as converged only once the residual
is at or below ``tol``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numba
import numpy as np

from .core import _check_labels, _sigmoid, loss_and_gradient, loss_value


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8
    max_inner_iters: int = 10000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be at least 1")


class SolveInfo(NamedTuple):
    beta: np.ndarray
    converged: bool
    n_iter: int
    kkt: float


def soft_threshold(z, t):
    """``sign(z) * max(|z| - t, 0)``."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(z) * np.maximum(np.abs(z) - t, 0.0)


def kkt_residual(beta, X, y, loss_kind: str, p: int, gamma1: float) -> float:
    """Optimality residual of ``beta`` for the penalized single-task problem.

    For p=2 this is the Euclidean norm of the full gradient. For p=1 it is
    the largest violation of ``0 in grad + gamma1 * d|b|``.
    """
    beta = np.asarray(beta, dtype=float)
    _, g = loss_and_gradient(beta, X, y, loss_kind)
    if p == 2:
        return float(np.linalg.norm(g + 2.0 * gamma1 * beta))
    if p == 1:
        nz = beta != 0
        viol = np.where(nz, np.abs(g + gamma1 * np.sign(beta)), np.maximum(np.abs(g) - gamma1, 0.0))
        return float(viol.max()) if viol.size else 0.0
    raise ValueError(f"p must be 1 or 2, got {p}")


def _objective(beta, X, y, loss_kind, p, gamma1):
    return loss_value(beta, X, y, loss_kind) + gamma1 * float(np.sum(np.abs(beta) ** p))


# -- least squares, p = 2 -------------------------------------------------


def solve_ridge_ls(X, y, gamma1: float) -> np.ndarray:
    """Closed-form minimizer of ``||X b - y||^2 + gamma1 ||b||^2``."""
    if not gamma1 > 0:
        raise ValueError("gamma1 must be positive")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < d:
        # b = X^T (X X^T + gamma1 I)^{-1} y
        K = X @ X.T
        K[np.diag_indices(n)] += gamma1
        return X.T @ np.linalg.solve(K, y)
    G = X.T @ X
    G[np.diag_indices(d)] += gamma1
    return np.linalg.solve(G, X.T @ y)


# -- least squares, p = 1 -------------------------------------------------


@numba.njit(cache=True)
def _cd_lasso_kernel(X, y, gamma1, beta, tol, max_iter):
    n, d = X.shape
    col_sq = np.zeros(d)
    for j in range(d):
        s = 0.0
        for i in range(n):
            s += X[i, j] * X[i, j]
        col_sq[j] = s
    r = y - X @ beta
    kkt = np.inf
    for it in range(1, max_iter + 1):
        for j in range(d):
            if col_sq[j] == 0.0:
                beta[j] = 0.0
                continue
            z = col_sq[j] * beta[j]
            for i in range(n):
                z += X[i, j] * r[i]
            z2 = 2.0 * z
            if z2 > gamma1:
                new = (z2 - gamma1) / (2.0 * col_sq[j])
            elif z2 < -gamma1:
                new = (z2 + gamma1) / (2.0 * col_sq[j])
            else:
                new = 0.0
            delta = new - beta[j]
            if delta != 0.0:
                for i in range(n):
                    r[i] -= X[i, j] * delta
                beta[j] = new
        # gradient of the loss is -2 X^T r
        kkt = 0.0
        for j in range(d):
            g = 0.0
            for i in range(n):
                g -= 2.0 * X[i, j] * r[i]
            if beta[j] > 0.0:
                v = abs(g + gamma1)
            elif beta[j] < 0.0:
                v = abs(g - gamma1)
            else:
                v = max(abs(g) - gamma1, 0.0)
            if v > kkt:
                kkt = v
        if kkt <= tol:
            return beta, it, kkt
    return beta, max_iter, kkt


CD_SWEEP_BUDGET = 40


def _lasso_ls(X, y, gamma1, opts, beta0=None) -> SolveInfo:
    """Coordinate descent first; exact homotopy if CD stalls.

    CD is fast when warm-started near the answer but crawls in the
    near-interpolation regime (small gamma1, fewer rows than columns).
    """
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    beta = np.zeros(X.shape[1]) if beta0 is None else np.array(beta0, dtype=float)
    budget = min(CD_SWEEP_BUDGET, opts.max_inner_iters)
    done = 0
    chunk = 10
    kkt = np.inf
    while done < budget:
        sweeps = min(chunk, budget - done)
        beta, n_iter, kkt = _cd_lasso_kernel(X, y, float(gamma1), beta, opts.tol, sweeps)
        done += int(n_iter)
        if kkt <= opts.tol:
            return SolveInfo(beta, True, done, float(kkt))
        polished = _polish_lasso(beta, X, y, gamma1)
        if polished is not None:
            r = kkt_residual(polished, X, y, "least-squares", 1, gamma1)
            if r <= opts.tol:
                return SolveInfo(polished, True, done, r)
        chunk = min(2 * chunk, 80)
    path = _lasso_homotopy(X, y, gamma1)
    if path is not None:
        r = kkt_residual(path, X, y, "least-squares", 1, gamma1)
        if r <= kkt:
            beta, kkt = path, r
            if kkt <= opts.tol:
                return SolveInfo(beta, True, done, kkt)
    if done < opts.max_inner_iters:
        beta, n_iter, kkt = _cd_lasso_kernel(X, y, float(gamma1), beta, opts.tol, opts.max_inner_iters - done)
        done += int(n_iter)
    return SolveInfo(beta, kkt <= opts.tol, done, float(kkt))


@numba.njit(cache=True)
def _homotopy_kernel(G, Xty, target, max_steps):
    d = Xty.shape[0]
    beta = np.zeros(d)
    corr = Xty.copy()
    lam = 0.0
    first = 0
    for j in range(d):
        if abs(corr[j]) > lam:
            lam = abs(corr[j])
            first = j
    if lam <= target:
        return beta, True
    active = np.zeros(d, dtype=np.bool_)
    order = np.empty(d, dtype=np.int64)
    order[0] = first
    active[first] = True
    na = 1
    for _ in range(max_steps):
        GA = np.empty((na, na))
        sA = np.empty(na)
        for u in range(na):
            sA[u] = 1.0 if corr[order[u]] > 0 else -1.0
            for v in range(na):
                GA[u, v] = G[order[u], order[v]]
        direction = np.linalg.solve(GA, sA)
        step = lam - target
        kind = 0
        event = -1
        for j in range(d):
            if active[j] or G[j, j] <= 0.0:
                continue
            aj = 0.0
            for u in range(na):
                aj += G[j, order[u]] * direction[u]
            den = 1.0 - aj
            if den != 0.0:
                t = (lam - corr[j]) / den
                if t > 1e-15 and t < step:
                    step, kind, event = t, 1, j
            den = 1.0 + aj
            if den != 0.0:
                t = (lam + corr[j]) / den
                if t > 1e-15 and t < step:
                    step, kind, event = t, 1, j
        # an active coefficient moving against its correlation sign hits zero
        for u in range(na):
            if (direction[u] > 0) != (sA[u] > 0):
                t = max(-beta[order[u]] / direction[u], 0.0)
                if t < step:
                    step, kind, event = t, 2, u
        for u in range(na):
            beta[order[u]] += step * direction[u]
        lam -= step
        corr = Xty - G @ beta
        if kind == 0:
            return beta, True
        if kind == 1:
            order[na] = event
            active[event] = True
            na += 1
        else:
            j = order[event]
            beta[j] = 0.0
            active[j] = False
            for u in range(event, na - 1):
                order[u] = order[u + 1]
            na -= 1
            if na == 0:
                return beta, False
    return beta, False


def _lasso_homotopy(X, y, gamma1, max_steps=None):
    """LARS-lasso path from ``beta = 0`` down to ``lambda = gamma1 / 2``.

    Works on ``1/2 ||X b - y||^2 + lambda ||b||_1``, which has the same
    minimizer. Returns ``None`` if the path breaks down.
    """
    n, d = X.shape
    max_steps = max_steps or 20 * (d + n)
    try:
        beta, ok = _homotopy_kernel(X.T @ X, X.T @ y, 0.5 * float(gamma1), max_steps)
    except Exception:  # singular active-set system
        return None
    return beta if ok else None


def _polish_lasso(beta, X, y, gamma1):
    """Exact minimizer on the current support with signs held fixed.

    Solves ``2 Xs^T Xs b = 2 Xs^T y - gamma1 * sign``; ``None`` if a sign flips.
    """
    S = np.flatnonzero(beta)
    if S.size == 0 or S.size > X.shape[0]:
        return None
    sgn = np.sign(beta[S])
    Xs = X[:, S]
    try:
        b = np.linalg.solve(2.0 * (Xs.T @ Xs), 2.0 * (Xs.T @ y) - gamma1 * sgn)
    except np.linalg.LinAlgError:
        return None
    if np.any(np.sign(b) != sgn):
        return None
    out = np.zeros_like(beta)
    out[S] = b
    return out


def solve_lasso_ls(X, y, gamma1: float, opts: SolverOptions | None = None, beta0=None) -> np.ndarray:
    """Cyclic coordinate descent for ``||X b - y||^2 + gamma1 ||b||_1``."""
    if not gamma1 > 0:
        raise ValueError("gamma1 must be positive")
    return _finish(_lasso_ls(X, y, gamma1, opts or SolverOptions(), beta0), "lasso")


# -- logistic, p = 2 ------------------------------------------------------


def _logistic_l2(X, y, gamma1, opts, beta0=None) -> SolveInfo:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_labels(y)
    d = X.shape[1]
    beta = np.zeros(d) if beta0 is None else np.array(beta0, dtype=float)

    def f(b):
        return float(np.sum(np.logaddexp(0.0, -y * (X @ b)))) + gamma1 * float(b @ b)

    fb = f(beta)
    gnorm = np.inf
    for it in range(1, opts.max_inner_iters + 1):
        m = y * (X @ beta)
        s = _sigmoid(-m)
        g = -(X.T @ (y * s)) + 2.0 * gamma1 * beta
        gnorm = float(np.linalg.norm(g))
        if gnorm <= opts.tol:
            return SolveInfo(beta, True, it - 1, gnorm)
        w = s * (1.0 - s)
        H = (X.T * w) @ X
        H[np.diag_indices(d)] += 2.0 * gamma1
        step = np.linalg.solve(H, -g)
        slope = float(g @ step)
        t = 1.0
        while True:
            cand = beta + t * step
            fc = f(cand)
            if fc <= fb + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        if fc > fb:
            # no decrease representable in floating point
            break
        beta, fb = cand, fc
    _, g = loss_and_gradient(beta, X, y, "logistic")
    gnorm = float(np.linalg.norm(g + 2.0 * gamma1 * beta))
    return SolveInfo(beta, gnorm <= opts.tol, opts.max_inner_iters, gnorm)


def solve_logistic_l2(X, y, gamma1: float, opts: SolverOptions | None = None, beta0=None) -> np.ndarray:
    """Damped Newton for ``sum log(1 + exp(-y x.b)) + gamma1 ||b||^2``."""
    if not gamma1 > 0:
        raise ValueError("gamma1 must be positive")
    return _finish(_logistic_l2(X, y, gamma1, opts or SolverOptions(), beta0), "logistic-l2")


# -- logistic, p = 1 ------------------------------------------------------


def _logistic_l1(X, y, gamma1, opts, beta0=None, trace=None) -> SolveInfo:
    """Monotone accelerated proximal gradient with backtracking.

    Step search starts at 1.0 and halves until the quadratic upper bound
    holds; later iterations start from twice the last accepted step, capped
    at 1.0. Objective values of accepted iterates never increase.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_labels(y)
    d = X.shape[1]
    x = np.zeros(d) if beta0 is None else np.array(beta0, dtype=float)

    def smooth(b):
        m = y * (X @ b)
        return float(np.sum(np.logaddexp(0.0, -m))), -(X.T @ (y * _sigmoid(-m)))

    def full(b, fs):
        return fs + gamma1 * float(np.sum(np.abs(b)))

    Fx = full(x, smooth(x)[0])
    if trace is not None:
        trace.append(Fx)
    yk = x.copy()
    mom = 1.0
    step = 1.0
    kkt = np.inf
    for it in range(1, opts.max_inner_iters + 1):
        fy, gy = smooth(yk)
        step = min(1.0, 2.0 * step)
        while True:
            z = soft_threshold(yk - step * gy, step * gamma1)
            diff = z - yk
            fz = smooth(z)[0]
            if fz <= fy + float(gy @ diff) + float(diff @ diff) / (2.0 * step) or step < 1e-14:
                break
            step *= 0.5
        Fz = full(z, fz)
        mom_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * mom * mom))
        x_prev = x
        if Fz <= Fx:
            x, Fx = z, Fz
            yk = x + (mom / mom_next) * (z - x) + ((mom - 1.0) / mom_next) * (x - x_prev)
            mom = mom_next
        else:
            # restart: the momentum step overshot
            yk = x.copy()
            mom = 1.0
        if trace is not None:
            trace.append(Fx)
        kkt = kkt_residual(x, X, y, "logistic", 1, gamma1)
        if kkt <= opts.tol:
            return SolveInfo(x, True, it, kkt)
        if it % 50 == 0:
            polished = _polish_l1(x, X, y, gamma1)
            if polished is not None:
                pf = _objective(polished, X, y, "logistic", 1, gamma1)
                if pf <= Fx:
                    x, Fx = polished, pf
                    kkt = kkt_residual(x, X, y, "logistic", 1, gamma1)
                    yk = x.copy()
                    mom = 1.0
                    if trace is not None:
                        trace.append(Fx)
                    if kkt <= opts.tol:
                        return SolveInfo(x, True, it, kkt)
    return SolveInfo(x, kkt <= opts.tol, opts.max_inner_iters, kkt)


def _polish_l1(beta, X, y, gamma1):
    """Newton steps on the current support with signs held fixed.

    Returns ``None`` when the support is empty or a sign flips.
    """
    S = np.flatnonzero(beta)
    if S.size == 0:
        return None
    sgn = np.sign(beta[S])
    Xs = X[:, S]
    b = beta[S].copy()
    for _ in range(20):
        m = y * (Xs @ b)
        s = _sigmoid(-m)
        g = -(Xs.T @ (y * s)) + gamma1 * sgn
        if float(np.abs(g).max()) <= 1e-13:
            break
        w = s * (1.0 - s)
        H = (Xs.T * w) @ Xs
        H[np.diag_indices(S.size)] += 1e-12
        try:
            b = b - np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            return None
        if np.any(np.sign(b) != sgn):
            return None
    out = np.zeros_like(beta)
    out[S] = b
    return out


def solve_logistic_l1(X, y, gamma1: float, opts: SolverOptions | None = None, beta0=None) -> np.ndarray:
    """Proximal gradient for ``sum log(1 + exp(-y x.b)) + gamma1 ||b||_1``."""
    if not gamma1 > 0:
        raise ValueError("gamma1 must be positive")
    return _finish(_logistic_l1(X, y, gamma1, opts or SolverOptions(), beta0), "logistic-l1")


def _finish(info: SolveInfo, name: str) -> np.ndarray:
    if not info.converged:
        warnings.warn(
            f"{name} solver stopped after {info.n_iter} iterations with KKT residual {info.kkt:.3g}",
            ConvergenceWarning,
            stacklevel=3,
        )
    return info.beta


def solve_subproblem(X, y, gamma1: float, loss: str, p: int, opts: SolverOptions | None = None, beta0=None) -> SolveInfo:
    """Dispatch to the solver matching ``(loss, p)``; never warns."""
    opts = opts or SolverOptions()
    if loss == "least-squares" and p == 2:
        beta = solve_ridge_ls(X, y, gamma1)
        kkt = kkt_residual(beta, X, y, loss, 2, gamma1)
        return SolveInfo(beta, kkt <= opts.tol, 1, kkt)
    if loss == "least-squares" and p == 1:
        return _lasso_ls(X, y, gamma1, opts, beta0)
    if loss == "logistic" and p == 2:
        return _logistic_l2(X, y, gamma1, opts, beta0)
    if loss == "logistic" and p == 1:
        return _logistic_l1(X, y, gamma1, opts, beta0)
    raise ValueError(f"no solver for loss={loss!r}, p={p}")
