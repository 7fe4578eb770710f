"""The two-component mixture experiment: spec files, seeded cells and output tables.

A cell is one (method, n, repetition) triple.  Cell ``rep`` uses the seed
``base_seed + rep * SEED_STRIDE``; its training sample is drawn from
``default_rng((cell_seed, n, 0))`` and the method's own randomness from
``default_rng((cell_seed, n, k))`` with ``k`` the method's position in
:data:`METHODS` plus one.  Any cell can therefore be rerun on its own, and all
methods in a repetition see the same sample.
"""

from __future__ import annotations

import csv
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .baselines import KdeModel
from .constructor import relu_from_step, step_from_measure
from .errors import DomainError
from .gen_density import GenerativeDensity
from .measures import DiscreteMeasure, mixture_density, sample
from .metrics import grid_around, squared_hellinger_quadrature
from .networks import ShallowGenerator
from .training import GaussianEncoder, TrainConfig, fit_aevb, fit_mc, init_generator, mean_loglik, write_trace_csv

SCHEMA_VERSION = 1
METHODS = ("vae-mc", "vae-aevb", "kde", "brute-force")
SEED_STRIDE = 1000
PROFILES = {
    "desk": {"repetitions": 10, "mc_samples": 10_000},
    "full": {"repetitions": 50, "mc_samples": 100_000},
}
RESULT_HEADER = ["method", "n", "repetition", "seed", "sq_hellinger", "objective", "status"]
SUMMARY_HEADER = [
    "method",
    "n",
    "count",
    "mean_sq_hellinger",
    "std_sq_hellinger",
    "median_sq_hellinger",
    "mean_objective",
    "std_objective",
    "median_objective",
]


class SpecError(DomainError):
    """A spec file that does not parse or validate; ``issues`` holds ``(line, message)`` pairs."""

    def __init__(self, issues, source="<spec>"):
        self.issues = list(issues)
        self.source = source
        super().__init__("\n".join(f"{source}:{line}: {msg}" for line, msg in self.issues))


@dataclass(frozen=True)
class TrueDensity:
    """``w0 N(m, sigma^2 I) + w1 N(-m, sigma^2 I)``."""

    m: tuple
    weights: tuple = (0.5, 0.5)
    sigma: float = 1.0

    @property
    def d(self) -> int:
        return len(self.m)

    def measure(self) -> DiscreteMeasure:
        m = np.asarray(self.m, dtype=float)
        return DiscreteMeasure(np.vstack([m, -m]), np.asarray(self.weights, dtype=float))

    def density(self):
        mix = self.measure()
        return lambda x: mixture_density(mix, self.sigma, x)


@dataclass(frozen=True)
class ExperimentSpec:
    true_density: TrueDensity
    sample_sizes: tuple = (100, 200, 400)
    repetitions: int = 10
    methods: tuple = METHODS
    train: TrainConfig = field(default_factory=lambda: TrainConfig(mc_samples=10_000))
    quadrature_points: int = 401
    quadrature_pad: float = 8.0
    seed: int = 0
    kappa: float = 1e-5
    generator_path: str | None = None

    def cell_seed(self, rep: int) -> int:
        return self.seed + rep * SEED_STRIDE

    def cells(self):
        return [(meth, n, r) for meth in self.methods for n in self.sample_sizes for r in range(self.repetitions)]

    def with_profile(self, name: str) -> "ExperimentSpec":
        prof = PROFILES[name]
        return replace(
            self,
            repetitions=prof["repetitions"],
            train=replace(self.train, mc_samples=prof["mc_samples"]),
        )


_TOP_KEYS = {"schema", "true_density", "sample_sizes", "repetitions", "methods", "seed", "train", "quadrature", "brute_force"}


def _line_index(node, path=(), out=None):
    """Map key paths to 1-based source lines."""
    out = {} if out is None else out
    out.setdefault(path, node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = (*path, k.value)
            out[key] = k.start_mark.line + 1
            _line_index(v, key, out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, (*path, i), out)
    return out


class _Issues:
    def __init__(self, lines):
        self.lines = lines
        self.items = []

    def add(self, path, msg):
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        self.items.append((self.lines.get(path, 1), msg))


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def parse_spec(text: str, source: str = "<spec>", base_dir=None) -> ExperimentSpec:
    """Parse and validate a YAML experiment spec; raises :class:`SpecError` with line numbers."""
    try:
        node = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise SpecError([(line, f"not valid YAML: {getattr(exc, 'problem', exc)}")], source) from None
    if not isinstance(raw, dict):
        raise SpecError([(1, "spec must be a mapping")], source)
    iss = _Issues(_line_index(node))
    for key in raw:
        if key not in _TOP_KEYS:
            iss.add((key,), f"unknown key {key!r}")
    if raw.get("schema") != SCHEMA_VERSION:
        iss.add(("schema",), f"schema must be {SCHEMA_VERSION}, got {raw.get('schema')!r}")

    td = raw.get("true_density")
    truth = None
    if not isinstance(td, dict):
        iss.add(("true_density",), "true_density must be a mapping with m, weights, sigma")
    else:
        for key in td:
            if key not in ("m", "weights", "sigma"):
                iss.add(("true_density", key), f"unknown key {key!r}")
        m = td.get("m")
        w = td.get("weights", [0.5, 0.5])
        s = td.get("sigma", 1.0)
        ok = True
        if not (isinstance(m, list) and m and all(_is_num(v) for v in m)):
            iss.add(("true_density", "m"), "m must be a nonempty list of numbers")
            ok = False
        elif not any(v != 0 for v in m):
            iss.add(("true_density", "m"), "m must be nonzero so the two components differ")
            ok = False
        w_ok = isinstance(w, list) and len(w) == 2 and all(_is_num(v) and v > 0 for v in w)
        if not (w_ok and abs(sum(w) - 1.0) <= 1e-12):
            iss.add(("true_density", "weights"), "weights must be two positive numbers summing to 1")
            ok = False
        if not (_is_num(s) and s > 0):
            iss.add(("true_density", "sigma"), "sigma must be a positive number")
            ok = False
        if ok:
            truth = TrueDensity(tuple(float(v) for v in m), tuple(float(v) for v in w), float(s))

    sizes = raw.get("sample_sizes", [100, 200, 400])
    if not (isinstance(sizes, list) and sizes and all(_is_int(v) and v >= 2 for v in sizes)):
        iss.add(("sample_sizes",), "sample_sizes must be a nonempty list of integers >= 2")
    elif any(b <= a for a, b in zip(sizes, sizes[1:])):
        iss.add(("sample_sizes",), "sample_sizes must be strictly increasing")

    reps = raw.get("repetitions", 10)
    if not (_is_int(reps) and reps >= 1):
        iss.add(("repetitions",), "repetitions must be an integer >= 1")

    methods = raw.get("methods", list(METHODS))
    if not (isinstance(methods, list) and methods):
        iss.add(("methods",), "methods must be a nonempty list")
    else:
        for i, meth in enumerate(methods):
            if meth not in METHODS:
                iss.add(("methods", i), f"unknown method {meth!r}; choose from {', '.join(METHODS)}")
        if len(set(map(str, methods))) != len(methods):
            iss.add(("methods",), "methods must not repeat")

    seed = raw.get("seed", 0)
    if not (_is_int(seed) and seed >= 0):
        iss.add(("seed",), "seed must be a nonnegative integer")

    train = None
    tr = raw.get("train", {})
    if not isinstance(tr, dict):
        iss.add(("train",), "train must be a mapping")
    else:
        values = {"mc_samples": 10_000, **tr}
        try:
            train = TrainConfig.from_mapping(values)
        except (TypeError, ValueError) as exc:
            iss.add(("train",), f"invalid training settings: {exc}")
        if train is not None and isinstance(sizes, list) and sizes and all(_is_int(v) for v in sizes):
            if train.batch_size > min(sizes):
                iss.add(("train", "batch_size"), "batch_size exceeds the smallest sample size")

    quad = raw.get("quadrature", {})
    points, pad = 401, 8.0
    if not isinstance(quad, dict):
        iss.add(("quadrature",), "quadrature must be a mapping with points and pad")
    else:
        for key in quad:
            if key not in ("points", "pad"):
                iss.add(("quadrature", key), f"unknown key {key!r}")
        points = quad.get("points", points)
        pad = quad.get("pad", pad)
        if not (_is_int(points) and points >= 3 and points % 2 == 1):
            iss.add(("quadrature", "points"), "points must be an odd integer >= 3")
        if not (_is_num(pad) and pad > 0):
            iss.add(("quadrature", "pad"), "pad must be a positive number")

    bf = raw.get("brute_force", {})
    kappa, gen_path = 1e-5, None
    if not isinstance(bf, dict):
        iss.add(("brute_force",), "brute_force must be a mapping")
    else:
        for key in bf:
            if key not in ("kappa", "generator"):
                iss.add(("brute_force", key), f"unknown key {key!r}")
        kappa = bf.get("kappa", kappa)
        if not (_is_num(kappa) and 0 < kappa < 0.25):
            iss.add(("brute_force", "kappa"), "kappa must lie in (0, 0.25)")
        gen_path = bf.get("generator")
        if gen_path is not None:
            if not isinstance(gen_path, str):
                iss.add(("brute_force", "generator"), "generator must be a file path")
            else:
                full = Path(base_dir or ".") / gen_path
                if not full.is_file():
                    iss.add(("brute_force", "generator"), f"generator file {str(full)!r} not found")
                gen_path = str(full)

    if iss.items:
        raise SpecError(sorted(iss.items), source)
    return ExperimentSpec(
        true_density=truth,
        sample_sizes=tuple(sizes),
        repetitions=reps,
        methods=tuple(methods),
        train=train,
        quadrature_points=points,
        quadrature_pad=float(pad),
        seed=seed,
        kappa=float(kappa),
        generator_path=gen_path,
    )


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError([(0, f"cannot read spec: {exc.strerror}")], str(path)) from None
    return parse_spec(text, str(path), path.parent)


@dataclass
class CellResult:
    method: str
    n: int
    repetition: int
    seed: int
    sq_hellinger: float = math.nan
    objective: float = math.nan
    status: str = "ok"
    wall_clock: float = 0.0
    trace: np.ndarray | None = None
    checkpoints: list | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def row(self):
        return [self.method, self.n, self.repetition, self.seed, repr(float(self.sq_hellinger)), repr(float(self.objective)), self.status]


def brute_force_density(spec: ExperimentSpec) -> GenerativeDensity:
    """Network built from the true mixing measure, or loaded from ``brute_force.generator``."""
    if spec.generator_path is not None:
        g = ShallowGenerator.load(spec.generator_path)
    else:
        g = relu_from_step(step_from_measure(spec.true_density.measure()), spec.kappa)
    return GenerativeDensity(g, spec.true_density.sigma)


def _estimate_box(est):
    if isinstance(est, KdeModel):
        return est.points.min(axis=0), est.points.max(axis=0), est.bandwidth
    lo, hi = est.range_box()
    return lo, hi, est.sigma


def squared_hellinger_to_truth(est, spec: ExperimentSpec) -> float:
    """Quadrature ``d_H^2`` on the union of both effective supports, padded by ``pad`` widths."""
    truth = spec.true_density
    atoms = truth.measure().atoms
    lo, hi, width = _estimate_box(est)
    lower = np.minimum(atoms.min(axis=0), lo)
    upper = np.maximum(atoms.max(axis=0), hi)
    grid = grid_around(lower, upper, spec.quadrature_pad * max(truth.sigma, width), spec.quadrature_points)
    return squared_hellinger_quadrature(est, truth.density(), grid)


def run_cell(spec: ExperimentSpec, method: str, n: int, rep: int) -> CellResult:
    """Fit one method on one sample and score it; failures are recorded, not raised."""
    seed = spec.cell_seed(rep)
    res = CellResult(method, n, rep, seed)
    start = time.perf_counter()
    try:
        truth = spec.true_density
        data = sample(truth.measure(), truth.sigma, np.random.default_rng((seed, n, 0)), n)
        rng = np.random.default_rng((seed, n, METHODS.index(method) + 1))
        cfg = replace(spec.train, seed=seed)
        if method in ("vae-mc", "vae-aevb"):
            init = GenerativeDensity(init_generator(truth.d, cfg.hidden, rng), cfg.sigma_init)
            if method == "vae-mc":
                run = fit_mc(data, init, cfg, rng)
            else:
                run = fit_aevb(data, init, GaussianEncoder.init(truth.d, cfg.encoder_hidden, rng), cfg, rng)
            est, res.objective = run.density, run.best_loglik
            res.trace, res.checkpoints = run.trace, run.checkpoints
        elif method == "kde":
            est = KdeModel.fit(data)
            res.objective = float(np.mean(est.log_density(data)))
        else:
            est = brute_force_density(spec)
            res.objective = mean_loglik(est, data)
        res.sq_hellinger = squared_hellinger_to_truth(est, spec)
        if not (math.isfinite(res.sq_hellinger) and math.isfinite(res.objective)):
            raise ArithmeticError("non-finite score")
    except Exception as exc:  # a failed cell must not stop the run
        res.status = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
        res.sq_hellinger = res.objective = math.nan
    res.wall_clock = time.perf_counter() - start
    return res


def _worker_init():
    from threadpoolctl import threadpool_limits

    from ._runtime import keep_heap_warm

    keep_heap_warm()
    # One BLAS thread per worker keeps floating-point results independent of --threads.
    global _LIMITS
    _LIMITS = threadpool_limits(1)


def _run_cell_args(args):
    return run_cell(*args)


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    cells: list

    def sorted_cells(self):
        order = {m: i for i, m in enumerate(METHODS)}
        return sorted(self.cells, key=lambda c: (order[c.method], c.n, c.repetition))

    def select(self, method, n=None, ok_only=True):
        return [c for c in self.cells if c.method == method and (n is None or c.n == n) and (c.ok or not ok_only)]

    def median(self, method, n, attr):
        vals = [getattr(c, attr) for c in self.select(method, n)]
        return float(np.median(vals)) if vals else math.nan

    def summary_rows(self):
        rows = []
        for meth in (m for m in METHODS if m in self.spec.methods):
            for n in self.spec.sample_sizes:
                cells = self.select(meth, n)
                h = np.array([c.sq_hellinger for c in cells])
                o = np.array([c.objective for c in cells])
                rows.append([meth, n, len(cells), *_stats(h), *_stats(o)])
        return rows

    def write(self, out_dir) -> dict:
        """Write results, summary, timing, plot data and traces; returns the paths written."""
        out = Path(out_dir)
        (out / "traces").mkdir(parents=True, exist_ok=True)
        paths = {
            "results": out / "results.csv",
            "summary": out / "summary.csv",
            "timing": out / "timing.csv",
            "plot_sq_hellinger": out / "plot_sq_hellinger.csv",
            "plot_train_loglik": out / "plot_train_loglik.csv",
        }
        cells = self.sorted_cells()
        _write_csv(paths["results"], RESULT_HEADER, [c.row() for c in cells])
        _write_csv(
            paths["timing"],
            ["method", "n", "repetition", "wall_clock"],
            [[c.method, c.n, c.repetition, repr(c.wall_clock)] for c in cells],
        )
        summary = self.summary_rows()
        _write_csv(paths["summary"], SUMMARY_HEADER, [_fmt(r) for r in summary])
        _write_csv(paths["plot_sq_hellinger"], ["method", "x", "mean", "std"], [_fmt(r[:2] + r[3:5]) for r in summary])
        _write_csv(paths["plot_train_loglik"], ["method", "x", "mean", "std"], [_fmt(r[:2] + r[6:8]) for r in summary])
        for c in cells:
            if c.trace is None:
                continue
            stem = f"{c.method}_n{c.n}_r{c.repetition}"
            write_trace_csv(out / "traces" / f"{stem}_objective.csv", c.trace)
            _write_csv(
                out / "traces" / f"{stem}_loglik.csv",
                ["epoch", "loglik"],
                [[e, repr(float(v))] for e, v in c.checkpoints],
            )
        return paths


def _stats(v):
    if v.size == 0:
        return [math.nan] * 3
    std = float(np.std(v, ddof=1)) if v.size > 1 else math.nan
    return [float(np.mean(v)), std, float(np.median(v))]


def _fmt(row):
    return [repr(v) if isinstance(v, float) else v for v in row]


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def run_experiment(spec: ExperimentSpec, threads: int = 1, progress=None) -> ExperimentResult:
    """Run every cell, on ``threads`` worker processes when more than one is requested."""
    jobs = [(spec, *cell) for cell in spec.cells()]
    cells = []
    if threads <= 1:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(1):
            for job in jobs:
                cells.append(run_cell(*job))
                if progress:
                    progress(cells[-1])
    else:
        with ProcessPoolExecutor(max_workers=threads, initializer=_worker_init) as pool:
            for res in pool.map(_run_cell_args, jobs):
                cells.append(res)
                if progress:
                    progress(res)
    return ExperimentResult(spec, cells)


def default_threads() -> int:
    return max(1, min(os.cpu_count() or 1, 8))


def print_progress(cell: CellResult, stream=sys.stderr):
    print(
        f"{cell.method:12s} n={cell.n:<5d} rep={cell.repetition:<3d} "
        f"d_H^2={cell.sq_hellinger:.5g} objective={cell.objective:.5g} "
        f"({cell.wall_clock:.1f}s) {cell.status}",
        file=stream,
        flush=True,
    )
