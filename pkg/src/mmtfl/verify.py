"""Numerical certificates for the equivalences behind the multiplicative model.

Each check returns a :class:`CheckResult` carrying its worst residual, so a
report says how close a failure came as well as whether it passed.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .core import (
    Decomposition,
    FitResult,
    MultitaskDataset,
    RegularizerSpec,
    joint_objective,
    matched_mu,
    multiplicative_objective,
    variational_objective,
)
from .optimizer import FitOptions, closed_form_c_from_B, fit, update_sigma

CELLS = ((2, 2), (1, 1), (2, 1), (1, 2))

ALGEBRA_TOL = 1e-10
FIT_TOL = 1e-6
GRID_TOL = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_residual: float
    trials: int
    details: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    seed: int
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=float) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "VerificationReport":
        raw = json.loads(text)
        return cls(raw["seed"], [CheckResult(**c) for c in raw["checks"]])


def _row_sums(A, p):
    return np.sum(np.abs(np.asarray(A, dtype=float)) ** p, axis=1)


def _zero_loss_data(d, T):
    # one all-zero example per task: the loss is constant, so objectives
    # differ only through their penalties
    return MultitaskDataset.from_arrays([np.zeros((1, d))] * T, [np.zeros(1)] * T)


def _loguniform(rng, lo, hi, size=None):
    return np.exp(rng.uniform(math.log(lo), math.log(hi), size))


# -- variational bound ----------------------------------------------------


def check_cauchy_schwarz_bound(A, spec: RegularizerSpec, trials: int = 1000, seed=0, data=None) -> CheckResult:
    """Variational objective >= joint objective, with equality at sigma*.

    The joint side uses ``lambda = 2 sqrt(mu1 mu2)``. ``sigma*`` is
    ``sqrt(mu1/mu2) ||a^j||^{p/2q}``; zero rows get a vanishing sigma.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    A = np.asarray(A, dtype=float)
    data = data if data is not None else _zero_loss_data(*A.shape)
    rng = np.random.default_rng(seed)
    mu1, mu2 = matched_mu(spec)
    lam = 2.0 * math.sqrt(mu1 * mu2)
    joint = joint_objective(A, data, spec, lam)
    scale = max(1.0, abs(joint))

    worst_gap = 0.0
    violations = []
    for i in range(trials):
        sigma = _loguniform(rng, 1e-3, 1e3, A.shape[0])
        gap = joint - variational_objective(A, sigma, data, spec, mu1, mu2)
        worst_gap = max(worst_gap, gap / scale)
        if gap > ALGEBRA_TOL * scale:
            violations.append({"trial": i, "gap": gap, "sigma": sigma.tolist()})

    rows = _row_sums(A, spec.p) ** (1.0 / (2 * spec.q))
    sigma_star = np.where(rows > 0, math.sqrt(mu1 / mu2) * rows, 1e-300)
    eq = abs(variational_objective(A, sigma_star, data, spec, mu1, mu2) - joint) / scale
    return CheckResult(
        f"cauchy_schwarz_bound MMTFL({spec.p},{spec.k})",
        not violations and eq <= ALGEBRA_TOL,
        max(worst_gap, eq),
        trials,
        {"violations": violations[:5], "equality_residual": eq, "lambda": lam},
    )


# -- objective equivalence at a fitted point ------------------------------


def check_theorem1_equivalence(result: FitResult, data: MultitaskDataset, spec: RegularizerSpec, step: float = 0.01) -> CheckResult:
    """Objective equality at the returned point plus local optimality in c.

    Every c_j is scaled by ``1 +/- step`` with B held fixed; none of these
    moves may lower the multiplicative objective.
    """
    dec = result.decomposition
    j1 = multiplicative_objective(dec, data, spec)
    j2 = joint_objective(dec.A, data, spec)
    gap = abs(j1 - j2) / max(1.0, abs(j2))

    lowered = []
    worst_drop = 0.0
    c = np.array(dec.c)
    for j in range(c.size):
        if c[j] == 0:
            continue
        for f in (1.0 - step, 1.0 + step):
            cp = c.copy()
            cp[j] *= f
            drop = (j1 - multiplicative_objective(Decomposition(cp, dec.B), data, spec)) / max(1.0, abs(j1))
            worst_drop = max(worst_drop, drop)
            if drop > ALGEBRA_TOL:
                lowered.append({"feature": j, "factor": f, "relative_drop": drop})
    return CheckResult(
        f"objective_equivalence MMTFL({spec.p},{spec.k})",
        gap <= FIT_TOL and not lowered and result.converged,
        max(gap, worst_drop),
        1,
        {
            "objective_gap": gap,
            "converged": bool(result.converged),
            "lowering_perturbations": len(lowered),
            "examples": lowered[:5],
        },
    )


# -- closed-form gate vs 1-D oracles --------------------------------------


def _grid_then_refine(f, grid):
    # f must accept both scalars and arrays
    vals = f(grid)
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi <= lo:
        return float(grid[i])
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * max(1.0, hi)})
    return float(res.x) if res.fun <= vals[i] else float(grid[i])


def brute_force_c_oracle(B, j: int, spec: RegularizerSpec, grid=None) -> float:
    """Numerical minimizer of ``h(c) = gamma1 S c^-p + gamma2 c^k`` for row j.

    ``S = sum_t |a_jt|^p`` where ``a_j = c_j^formula * b_j`` is held fixed,
    so only the split of the row between c and B varies. ``grid`` is
    ``(lo, hi, steps)`` and must contain the closed-form value; it defaults
    to ``(0, 4 * formula, 4001)``.
    """
    B = np.asarray(B, dtype=float)
    c_formula = float(closed_form_c_from_B(B[j : j + 1], spec)[0])
    if c_formula == 0.0:
        return 0.0
    lo, hi, steps = grid if grid is not None else (0.0, 4.0 * c_formula, 4001)
    if not lo <= c_formula <= hi or steps < 3:
        raise ValueError(f"grid [{lo}, {hi}] misses the closed-form value {c_formula:g}; widen it")
    S = float(np.sum(np.abs(c_formula * B[j]) ** spec.p))
    p, k, g1, g2 = spec.p, spec.k, spec.gamma1, spec.gamma2

    def h(c):
        return g1 * S * c ** (-p) + g2 * c**k

    pts = np.linspace(lo, hi, int(steps))
    return _grid_then_refine(h, pts[pts > 0])


def check_closed_form_c(spec_cell, draws: int = 100, d: int = 20, T: int = 5, seed=0) -> CheckResult:
    """Closed-form c against :func:`brute_force_c_oracle` on random B."""
    p, k = spec_cell
    rng = np.random.default_rng(seed)
    worst = 0.0
    bad = []
    for i in range(draws):
        g1, g2 = _loguniform(rng, 0.1, 10.0, 2)
        spec = RegularizerSpec(p, k, float(g1), float(g2))
        B = rng.standard_normal((d, T))
        c = closed_form_c_from_B(B, spec)
        for j in range(d):
            err = abs(c[j] - brute_force_c_oracle(B, j, spec))
            worst = max(worst, err)
            if err > GRID_TOL and len(bad) < 5:
                bad.append({"draw": i, "feature": j, "formula": float(c[j]), "error": err})
    return CheckResult(f"closed_form_c MMTFL({p},{k})", worst <= GRID_TOL, worst, draws, {"examples": bad})


def sigma_oracle(S: float, mu1: float, mu2: float, q: float) -> float:
    """Numerical argmin over sigma > 0 of ``mu1 S^{1/q} / sigma + mu2 sigma``."""
    if S == 0:
        return 0.0
    num = mu1 * S ** (1.0 / q)

    def g(log_s):
        s = np.exp(log_s)
        return num / s + mu2 * s

    return math.exp(_grid_then_refine(g, np.linspace(-40.0, 40.0, 8001)))


def check_sigma_update(spec_cell, draws: int = 100, d: int = 20, T: int = 5, seed=0, paper_exponent=False) -> CheckResult:
    """Closed-form sigma update against :func:`sigma_oracle`, relative error."""
    p, k = spec_cell
    rng = np.random.default_rng(seed)
    worst = 0.0
    bad = []
    for i in range(draws):
        g1, g2 = _loguniform(rng, 0.1, 10.0, 2)
        spec = RegularizerSpec(p, k, float(g1), float(g2))
        mu1, mu2 = matched_mu(spec)
        A = rng.standard_normal((d, T))
        sig = update_sigma(A, spec, paper_exponent)
        S = _row_sums(A, p)
        for j in range(d):
            ref = sigma_oracle(float(S[j]), mu1, mu2, spec.q)
            err = abs(sig[j] - ref) / ref
            worst = max(worst, err)
            if err > GRID_TOL and len(bad) < 5:
                bad.append({"draw": i, "feature": j, "gamma": [g1, g2], "formula": float(sig[j]), "oracle": ref})
    label = "alternative" if paper_exponent else "derived"
    return CheckResult(f"sigma_update[{label}] MMTFL({p},{k})", worst <= GRID_TOL, worst, draws, {"examples": bad})


def check_fixed_point_consistency(spec_cell, draws: int = 100, d: int = 20, T: int = 5, seed=0) -> CheckResult:
    """At ``A = diag(c) B`` with c from the closed form, the sigma update returns c^k."""
    p, k = spec_cell
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        g1, g2 = _loguniform(rng, 0.1, 10.0, 2)
        spec = RegularizerSpec(p, k, float(g1), float(g2))
        B = rng.standard_normal((d, T))
        c = closed_form_c_from_B(B, spec)
        back = update_sigma(c[:, None] * B, spec) ** (1.0 / k)
        worst = max(worst, float(np.max(np.abs(back - c) / np.maximum(1.0, c))))
    return CheckResult(f"fixed_point_consistency MMTFL({p},{k})", worst <= 1e-8, worst, draws)


# -- suite ----------------------------------------------------------------


def random_problem(rng, d=15, T=4, n=50) -> MultitaskDataset:
    A = rng.standard_normal((d, T)) * (rng.random((d, 1)) < 0.6)
    Xs = [rng.standard_normal((n, d)) for _ in range(T)]
    ys = [X @ A[:, t] + 0.5 * rng.standard_normal(n) for t, X in enumerate(Xs)]
    return MultitaskDataset.from_arrays(Xs, ys)


def run_suite(seed: int = 0, paper_exponent: bool = False, fits_per_cell: int = 2, trials: int = 1000) -> VerificationReport:
    """All checks on all four (p, k) cells with RNG streams derived from ``seed``."""
    report = VerificationReport(seed)
    opts = FitOptions()
    for ci, (p, k) in enumerate(CELLS):
        rng = np.random.default_rng([seed, ci])
        g1, g2 = _loguniform(rng, 0.1, 10.0, 2)
        spec = RegularizerSpec(p, k, float(g1), float(g2))
        A = rng.standard_normal((20, 5))
        report.checks.append(check_cauchy_schwarz_bound(A, spec, trials, [seed, ci, 0]))
        report.checks.append(check_closed_form_c((p, k), seed=[seed, ci, 1]))
        report.checks.append(check_sigma_update((p, k), seed=[seed, ci, 2], paper_exponent=paper_exponent))
        report.checks.append(check_fixed_point_consistency((p, k), seed=[seed, ci, 3]))
        for f in range(fits_per_cell):
            frng = np.random.default_rng([seed, ci, 4, f])
            data = random_problem(frng)
            g1, g2 = _loguniform(frng, 0.3, 3.0, 2)
            fspec = RegularizerSpec(p, k, float(g1), float(g2))
            res = fit(data, fspec, opts)
            report.checks.append(check_theorem1_equivalence(res, data, fspec))
    return report
