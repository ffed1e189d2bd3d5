"""Command-line interface: generate, fit, benchmark, verify, export-heatmap.

Exit codes: 0 success, 1 usage error, 2 data error, 3 verification failure.
File layouts are described in FORMATS.md.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import MultitaskDataset, RegularizerSpec, TaskData
from .datagen import SyntheticSpec, generate
from .evaluation import METHODS, ExperimentPlan, default_gamma_grid, default_jobs, run_benchmark
from .optimizer import FitOptions, fit
from .solvers import SolverOptions
from .verify import run_suite

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_VERIFY = 0, 1, 2, 3
FMT = "%.17g"

log = logging.getLogger("mmtfl")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# -- configuration --------------------------------------------------------


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs. Every field has a default; unknown keys are errors."""

    p: int = 2
    k: int = 1
    gamma1: float = 1.0
    gamma2: float = 1.0
    loss: str = "least-squares"
    epsilon: float = 1e-6
    max_outer_iters: int = 500
    c_init: float = 1.0
    rel_obj_tol: float = 0.0
    solver_tol: float = 1e-8
    max_inner_iters: int = 10000
    train_fractions: tuple = (0.25, 0.33, 0.5)
    repeats: int = 15
    cv_folds: int = 3
    methods: tuple = METHODS
    gamma_grid: tuple = field(default_factory=default_gamma_grid)
    seed: int | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        if not isinstance(raw, dict):
            raise UsageError("config must be a JSON object")
        known = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        vals = {}
        for key, value in raw.items():
            default = known[key].default
            if default is dataclasses.MISSING:
                default = known[key].default_factory()
            vals[key] = _coerce(key, value, default)
        cfg = cls(**vals)
        try:
            cfg.spec(), cfg.fit_options(), cfg.plan()
        except ValueError as exc:
            raise UsageError(f"invalid config: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path: str | None) -> "RunConfig":
        if path is None:
            return cls()
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train_fractions"] = list(self.train_fractions)
        d["methods"] = list(self.methods)
        d["gamma_grid"] = [list(g) for g in self.gamma_grid]
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def spec(self) -> RegularizerSpec:
        return RegularizerSpec(self.p, self.k, self.gamma1, self.gamma2, self.loss)

    def fit_options(self) -> FitOptions:
        return FitOptions(
            epsilon=self.epsilon,
            max_outer_iters=self.max_outer_iters,
            solver_opts=SolverOptions(self.solver_tol, self.max_inner_iters),
            c_init=self.c_init,
            rel_obj_tol=self.rel_obj_tol,
        )

    def plan(self) -> ExperimentPlan:
        return ExperimentPlan(
            tuple(self.train_fractions), self.repeats, self.cv_folds, tuple(self.methods),
            tuple(self.gamma_grid), self.loss, self.fit_options(),
        )


def _coerce(key, value, default):
    def bad():
        return UsageError(f"config key {key!r} has invalid value {value!r}")

    if key == "seed":
        if value is None or (isinstance(value, int) and not isinstance(value, bool)):
            return value
        raise bad()
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad()
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise bad()
        return value
    if key == "gamma_grid":
        try:
            return tuple((float(a), float(b)) for a, b in value)
        except (TypeError, ValueError):
            raise bad() from None
    if key == "train_fractions":
        if not isinstance(value, list) or not all(isinstance(v, (int, float)) for v in value):
            raise bad()
        return tuple(float(v) for v in value)
    if key == "methods":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise bad()
        return tuple(value)
    raise bad()


def resolve_seed(cli_seed, cfg: RunConfig) -> int:
    """Command line, then config, then ``MMTFL_SEED``, then 0."""
    if cli_seed is not None:
        return cli_seed
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get("MMTFL_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"MMTFL_SEED must be an integer, got {env!r}") from None
    return 0


# -- CSV I/O ---------------------------------------------------------------


def _write_matrix(path: Path, M, header: list[str]):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, M, fmt=FMT, delimiter=",")


def _read_matrix(path: Path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path) as fh:
            header = fh.readline().strip().split(",")
            M = np.loadtxt(fh, delimiter=",", ndmin=2)
    except FileNotFoundError:
        raise DataError(f"missing file {path}") from None
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if M.size and M.shape[1] != len(header):
        raise DataError(f"{path}: header has {len(header)} columns but rows have {M.shape[1]}")
    return header, M


def write_task(path: Path, task: TaskData):
    d = task.X.shape[1]
    header = [f"feature_{j + 1}" for j in range(d)] + ["target"]
    _write_matrix(path, np.column_stack([task.X, task.y]), header)


def read_task(path: Path, task_id: str) -> TaskData:
    header, M = _read_matrix(path)
    if not header or header[-1] != "target":
        raise DataError(f"{path}: last column must be 'target'")
    expect = [f"feature_{j + 1}" for j in range(len(header) - 1)]
    if header[:-1] != expect:
        raise DataError(f"{path}: feature columns must be named feature_1..feature_{len(expect)}")
    if M.shape[0] == 0:
        raise DataError(f"{path}: no examples")
    try:
        return TaskData(M[:, :-1], M[:, -1], task_id)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def load_dataset(data_dir) -> MultitaskDataset:
    """Read the task files listed in ``manifest.json`` (or every ``task_*.csv``)."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory {data_dir} does not exist")
    manifest = data_dir / "manifest.json"
    if manifest.exists():
        try:
            files = json.loads(manifest.read_text())["task_files"]
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{manifest}: unreadable manifest ({exc})") from None
    else:
        files = sorted(p.name for p in data_dir.glob("task_*.csv"))
    if not files:
        raise DataError(f"no task files in {data_dir}")
    tasks = [read_task(data_dir / f, Path(f).stem) for f in files]
    widths = {t.X.shape[1] for t in tasks}
    if len(widths) != 1:
        detail = "; ".join(f"{f}: d={t.X.shape[1]}" for f, t in zip(files, tasks))
        raise DataError(f"task files disagree on feature count: {detail}")
    return MultitaskDataset(tuple(tasks))


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _prepare_out(out: Path, force: bool):
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not force:
        raise UsageError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)


# -- commands -------------------------------------------------------------


def cmd_generate(args) -> int:
    seed = resolve_seed(args.seed, RunConfig())
    try:
        spec = SyntheticSpec(args.pattern, args.tasks, args.n, args.d, seed, args.weight_scale, args.groups)
        data, truth = generate(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    _prepare_out(out, args.force)
    width = len(str(spec.T))
    files = []
    for t, task in enumerate(data):
        name = f"task_{t + 1:0{width}d}.csv"
        write_task(out / name, task)
        files.append(name)
    tasks = [f"task_{t + 1}" for t in range(spec.T)]
    _write_matrix(out / "truth_A.csv", truth.A_true, tasks)
    _write_matrix(out / "truth_support.csv", truth.support.astype(float), tasks)
    params = dataclasses.asdict(spec)
    manifest = {
        **params,
        "task_files": files,
        "irrelevant_features": list(truth.irrelevant_features),
        "task_groups": list(truth.task_groups),
        "config_hash": hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:16],
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {spec.T} tasks ({spec.pattern}, n={spec.n}, d={spec.d}, seed={seed}) to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = RunConfig.load(args.config)
    overrides = {k: v for k, v in (("p", args.p), ("k", args.k), ("gamma1", args.gamma1), ("gamma2", args.gamma2)) if v is not None}
    if overrides:
        cfg = RunConfig.from_dict({**cfg.to_dict(), **overrides})
    data = load_dataset(args.data)
    res = fit(data, cfg.spec(), cfg.fit_options())
    out = Path(args.out)
    _prepare_out(out, args.force)
    tasks = [t.task_id for t in data]
    _write_matrix(out / "c.csv", res.c[:, None], ["c"])
    _write_matrix(out / "B.csv", res.B, tasks)
    _write_matrix(out / "A.csv", res.A, tasks)
    _write_matrix(out / "trace.csv", np.column_stack([np.arange(1, len(res.objective_trace) + 1), res.objective_trace]), ["iteration", "objective"])
    _write_json(
        out / "fit.json",
        {
            "method": cfg.spec().name,
            "config": cfg.to_dict(),
            "config_hash": cfg.hash(),
            "iterations": res.iterations,
            "converged": res.converged,
            "reason": res.reason,
            "max_delta": res.max_delta,
            "max_kkt": res.max_kkt,
            "final_objective": res.objective_trace[-1],
            "q": cfg.spec().q,
            "lambda": cfg.spec().lam,
            "tasks": tasks,
            "d": data.d,
        },
    )
    state = "converged" if res.converged else "did NOT converge"
    print(f"{cfg.spec().name} {state} after {res.iterations} iterations; {np.count_nonzero(res.c)} of {data.d} features kept")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = RunConfig.load(args.config)
    seed = resolve_seed(args.seed, cfg)
    datasets = {}
    for d in args.data:
        name = Path(d).name or str(d)
        if name in datasets:
            raise UsageError(f"two data directories share the name {name!r}")
        datasets[name] = load_dataset(d)
    report = run_benchmark(datasets, cfg.plan(), seed, args.jobs)
    out = Path(args.out)
    _prepare_out(out, args.force)
    (out / "report.csv").write_text(report.to_csv())
    (out / "report.json").write_text(report.to_json())
    _write_json(out / "manifest.json", {"config": cfg.to_dict(), "config_hash": cfg.hash(), "seed": seed, "data": list(args.data)})
    for r in report.rows:
        print(f"{r['dataset']:>10s} {r['method']:>11s} {r['fraction']:.2f}  {report.metric}={r['mean']:.4f} +/- {r['std']:.4f}")
    if all("error" in r for r in report.runs):
        print("every run failed", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = RunConfig.load(args.config)
    seed = resolve_seed(args.seed, cfg)
    report = run_suite(seed, paper_exponent=args.use_paper_exponent)
    text = report.to_json()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    for c in report.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name:45s} worst={c.worst_residual:.3g}")
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_export_heatmap(args) -> int:
    fit_dir = Path(args.fit)
    header, A = _read_matrix(fit_dir / "A.csv")
    # tasks as rows, features as columns
    H = np.abs(A).T
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_matrix(out, H, [f"feature_{j + 1}" for j in range(A.shape[0])])
    print(f"wrote {H.shape[0]}x{H.shape[1]} |A| matrix to {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmtfl", description="Multiplicative multitask feature learning.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic D1/D2 dataset")
    g.add_argument("--pattern", type=str.upper, choices=["D1", "D2"], required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--tasks", type=int)
    g.add_argument("--groups", type=int, default=6)
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--d", type=int, default=100)
    g.add_argument("--weight-scale", type=float, default=1.0)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("fit", help="fit one model on a dataset directory")
    f.add_argument("--data", required=True)
    f.add_argument("--config")
    f.add_argument("--out", required=True)
    f.add_argument("--p", type=int)
    f.add_argument("--k", type=int)
    f.add_argument("--gamma1", type=float)
    f.add_argument("--gamma2", type=float)
    f.add_argument("--force", action="store_true")
    f.set_defaults(func=cmd_fit)

    b = sub.add_parser("benchmark", help="repeated-split benchmark with CV tuning")
    b.add_argument("--data", nargs="+", required=True)
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int)
    b.add_argument("--jobs", type=int, default=default_jobs())
    b.add_argument("--force", action="store_true")
    b.set_defaults(func=cmd_benchmark)

    v = sub.add_parser("verify", help="run the numerical verification suite")
    v.add_argument("--config")
    v.add_argument("--out")
    v.add_argument("--seed", type=int)
    v.add_argument("--use-paper-exponent", action="store_true", help="use the alternative gamma2 exponent 1/2 - p/(2kp) in the sigma update")
    v.set_defaults(func=cmd_verify)

    h = sub.add_parser("export-heatmap", help="write |A| (tasks x features) from a fit directory")
    h.add_argument("--fit", required=True)
    h.add_argument("--out", required=True)
    h.set_defaults(func=cmd_export_heatmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mmtfl: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"mmtfl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
