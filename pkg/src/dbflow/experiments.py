"""Named experiment protocols, result tables and deterministic emission.

Each experiment splits into independent cells (usually one per seed or grid
point).  Cells draw all randomness from :func:`dbflow.rng.stream` keyed by
``(experiment id, seed, purpose)``, so a cell gives the same numbers whether
it runs alone or inside a parallel sweep.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import subprocess
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from dbflow import __version__
from dbflow.baselines import (
    BaselineConfig,
    run_baseline,
    sample_direction_cosines,
)
from dbflow.diagnostics import (
    audit_log,
    domain_radius,
    input_bound,
    lipschitz_ratio,
    linear_fit,
    loglog_slope,
    monotonicity_audit,
    steady_state,
    trajectory_difference,
)
from dbflow.linalg import haar_rotation, random_skew, rotate_covariance, spectral_separation, sym
from dbflow.observation import NoiseSchedule, ObservationModel, SignalSpec
from dbflow.retractions import Retraction, cayley_exact, polar_retract, qr_retract
from dbflow.rng import stream
from dbflow.solver import SolverConfig, StepSchedule, entry_threshold, run

EXPERIMENTS = ("e1", "e2", "e3", "e4", "e5", "e6", "e7", "e8", "e9", "e10",
               "e11", "e12", "e13", "e14", "mvp_cost", "verify")
VOLATILE_KEYS = ("wall_clock_s",)

# (n, seeds, sigma2 grid, eps_E grid) used when an ExperimentSpec leaves a field unset
DEFAULTS = {
    "e1": (20, 1, (0.0, 1e3, 1e6), ()),
    "e2": (20, 10, (), ()),
    "e3": (20, 10, (0.0, 1e3, 1e6), (0.1, 0.2, 0.5, 1.0, 2.0)),
    "e4": (10, 5, (0.0,), (0.5,)),
    "e5": (20, 10, (), ()),
    "e6": (None, 1, (), ()),
    "e7": (None, 1, (), ()),
    "e8": (None, 1, (), ()),
    "e9": (20, 20, (0.0,), (0.01, 0.02, 0.05, 0.1, 0.2, 0.5)),
    "e10": (10, 5, (0.0,), ()),
    "e11": (10, 50, (0.0,), ()),
    "e12": (5, 10, (0.0,), ()),
    "e13": (20, 1, (0.0, 1.0, 10.0, 100.0, 500.0, 1000.0), ()),
    "e14": (10, 5, (0.0, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0), ()),
    "mvp_cost": (20, 1, (100.0,), ()),
    "verify": (None, 1, (), ()),
}


@dataclass(frozen=True)
class ExperimentSpec:
    """What to run.  ``None`` fields fall back to the per-experiment defaults.

    ``overrides`` holds protocol knobs (``steps``, ``max_iters``,
    ``retraction``, ``dims``, ``samples``...); each experiment documents the
    keys it reads.
    """

    id: str
    n: int | None = None
    seeds: int | None = None
    sigma2: tuple[float, ...] | None = None
    eps_e: tuple[float, ...] | None = None
    step_c: float = 0.1
    out: str | None = None
    format: str = "csv"
    workers: int | None = None
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.id!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.seeds is not None and self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        if self.n is not None and self.n < 2:
            raise ValueError("n must be >= 2")
        if self.format not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        for name in ("sigma2", "eps_e"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(x) for x in v))

    def resolved(self) -> "ExperimentSpec":
        n, seeds, s2, eps = DEFAULTS[self.id]
        return ExperimentSpec(
            self.id,
            self.n if self.n is not None else n,
            self.seeds if self.seeds is not None else seeds,
            self.sigma2 if self.sigma2 is not None else s2,
            self.eps_e if self.eps_e is not None else eps,
            self.step_c, self.out, self.format, self.workers, dict(self.overrides),
        )

    def opt(self, key, default):
        return self.overrides.get(key, default)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sigma2"] = list(self.sigma2) if self.sigma2 is not None else None
        d["eps_e"] = list(self.eps_e) if self.eps_e is not None else None
        d.pop("workers")
        d.pop("out")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        if "experiment" in d:
            d["id"] = d.pop("experiment")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ResultTable:
    columns: tuple[str, ...]
    rows: list[list] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        for r in self.rows:
            if len(r) != len(self.columns):
                raise ValueError(f"row {r!r} does not match {len(self.columns)} columns")

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(list(values))

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def where(self, **match) -> list[dict]:
        out = []
        for r in self.rows:
            d = dict(zip(self.columns, r))
            if all(d[k] == v for k, v in match.items()):
                out.append(d)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_csv_cell(v) for v in r])
        return buf.getvalue()

    def to_json(self, include_volatile: bool = False) -> str:
        meta = {k: v for k, v in self.metadata.items() if include_volatile or k not in VOLATILE_KEYS}
        doc = {"columns": list(self.columns), "rows": [[_json_cell(v) for v in r] for r in self.rows],
               "metadata": _json_cell(meta)}
        return json.dumps(doc, sort_keys=True, allow_nan=False, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        doc = json.loads(text)
        return cls(tuple(doc["columns"]), [list(r) for r in doc["rows"]], doc.get("metadata", {}))


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v)) if math.isfinite(v) else ""
    return v


def _json_cell(v):
    if isinstance(v, dict):
        return {str(k): _json_cell(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_cell(x) for x in v]
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def emit(table: ResultTable, fmt: str = "csv", path: str | os.PathLike | None = None) -> str:
    """Serialize ``table`` (csv: rows only; json: rows plus metadata).

    Output bytes depend only on the table contents: floats use the shortest
    round-trip repr, JSON keys are sorted, wall-clock metadata is dropped.
    Non-finite floats become empty cells / ``null``.  Writes to ``path`` when
    given and returns the text either way.
    """
    if fmt == "csv":
        text = table.to_csv()
    elif fmt == "json":
        text = table.to_json()
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        p = Path(path)
        if p.parent and not p.parent.exists():
            p.parent.mkdir(parents=True)
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("DBF_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _map(fn, cells, workers: int):
    cells = list(cells)
    if workers <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
        return list(pool.map(fn, cells))


def _git_hash() -> str | None:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return None
    return out.stdout.strip() or None if out.returncode == 0 else None


# ---------------------------------------------------------------- helpers

def _basis_seed(exp: str, seed: int) -> int:
    return int(stream(exp, seed, "signal-basis").integers(2**62))


def _model(exp, seed, n, sigma2=0.0, eps=0.0, scale=1.0, schedule=None):
    spec = SignalSpec.standard(n, _basis_seed(exp, seed), scale)
    sched = schedule if schedule is not None else NoiseSchedule.constant(sigma2, eps_E=eps)
    return ObservationModel(spec, sched)


def _haar_init(exp, seed, n):
    return haar_rotation(n, stream(exp, seed, "init"))


def _warm_init(exp, seed, model, radius):
    """``Q Cay(X)`` with ``X`` a random skew generator of Frobenius norm ``radius``."""
    X = random_skew(model.n, stream(exp, seed, "warm-start"))
    X *= radius / np.linalg.norm(X)
    return model.signal.basis() @ cayley_exact(X)


DBF_METHODS = {"cayley": "neumann3", "cayley_exact": "cayley", "riem_qr": "qr", "riem_polar": "polar"}


def _run_method(method, model, M0, max_iters, tol, rng, probe_rng=None, c=0.1, record=False):
    if method in DBF_METHODS or method.startswith("neumann"):
        ret = Retraction.parse(DBF_METHODS.get(method, method))
        cfg = SolverConfig(ret, StepSchedule("constant", c, "Ce2sq"), max_iters, tol,
                           record_iterates=record)
        return run(cfg, model, M0, rng)
    step = StepSchedule("constant", c, "C2sq" if method == "raw_oja" else "Ce2sq")
    cfg = BaselineConfig(method, step, max_iters, tol, record_iterates=record)
    return run_baseline(cfg, model, M0, rng, probe_rng)


# ---------------------------------------------------------------- cells

def _e1_cell(args):
    exp, seed, n, grid, steps, retraction, c = args
    M0 = _haar_init(exp, seed, n)
    cfg = SolverConfig(Retraction.parse(retraction), StepSchedule("constant", c, "Ce2sq"),
                       steps, 1e-300, record_iterates=True)
    logs = [run(cfg, _model(exp, seed, n, s2), M0) for s2 in grid]
    out = []
    for a in range(len(grid)):
        for b in range(a + 1, len(grid)):
            rep = trajectory_difference(logs[a], logs[b])
            out.append([seed, grid[a], grid[b], rep.max, rep.mean, steps])
    return out


def _e2_cell(args):
    exp, seed, n, method, steps, pulse, start, end, c = args
    sched = NoiseSchedule.pulse_train(0.0, pulse, start, end)
    model = _model(exp, seed, n, schedule=sched)
    log = _run_method(method, model, _haar_init(exp, seed, n), steps, 1e-300, None, c=c)
    d = log.column("displacement")
    base = float(np.median(d[:start]))
    peak = float(np.max(d[start:end]))
    return [method, seed, peak, base, peak / base if base > 0 else math.inf]


def _e3_cell(args):
    exp, seed, n, s2, eps, steps, warm, c = args
    model = _model(exp, seed, n, s2, eps)
    # the perturbation stream depends on (seed, eps) only, so every sigma^2
    # sees the same E_k sequence
    rng = stream(exp, seed, f"noise-{eps!r}")
    M0 = _warm_init(exp, seed, model, warm) if warm is not None else _haar_init(exp, seed, n)
    cfg = SolverConfig(step=StepSchedule("constant", c, "Ce2sq"), max_iters=steps, f_tolerance=1e-300)
    log = run(cfg, model, M0, rng)
    return steady_state(log.f[1:])


def _e4_cell(args):
    exp, seed, n, s2, eps, steps, c, k0, warm, variant, samples = args
    law = "sample" if variant == "B" else "gaussian"
    sched = NoiseSchedule.constant(s2, eps_E=eps if law == "gaussian" else 0.0,
                                   noise_law=law, samples=samples)
    model = _model(exp, seed, n, schedule=sched)
    rng = stream(exp, seed, "noise")
    M0 = _warm_init(exp, seed, model, warm) if warm is not None else _haar_init(exp, seed, n)
    cfg = SolverConfig(step=StepSchedule.decaying(c, k0), max_iters=steps, f_tolerance=1e-300)
    return run(cfg, model, M0, rng).f


def _e5_cell(args):
    exp, seed, n, eta, steps, scale = args
    model = _model(exp, seed, n, scale=scale)
    cfg = SolverConfig(Retraction("cayley"), StepSchedule.fixed(eta), steps, 1e-300)
    return monotonicity_audit(run(cfg, model, _haar_init(exp, seed, n)).f)


def _e6_cell(args):
    exp, n, samples = args
    model = _model(exp, 0, n)
    rng = stream(exp, n, "haar-samples")
    C = model.c_sig
    r = np.array([spectral_separation(rotate_covariance(haar_rotation(n, rng), C)) for _ in range(samples)])
    r /= model.signal.gap
    return [n, samples, float(r.mean()), float(np.percentile(r, 5))]


def _e7_cell(args):
    exp, n, samples, eps = args
    model = _model(exp, 0, n)
    est, bound, ratio = lipschitz_ratio(model.c_e, model.norm_ce, samples=samples, eps=eps,
                                        rng=stream(exp, n, "pairs"))
    return [n, samples, est, bound, ratio]


def _e8_cell(args):
    exp, n, samples = args
    cos = sample_direction_cosines(n, samples, stream(exp, n, "directions"))
    p = float(np.mean(cos < 0))
    half = 1.96 * math.sqrt(p * (1 - p) / cos.size)
    return [n, int(cos.size), p, p - half, p + half]


def _e9_cell(args):
    exp, seed, n, eps, steps, scale, warm, c = args
    model = _model(exp, seed, n, 0.0, eps, scale)
    M0 = _warm_init(exp, seed, model, warm)
    cfg = SolverConfig(step=StepSchedule("constant", c, "Ce2sq"), max_iters=steps, f_tolerance=1e-300)
    log = run(cfg, model, M0, stream(exp, seed, f"noise-{eps!r}"))
    delta = log.column("delta")
    return float(delta.min()), float(delta[-1]), float(log.f[0])


def _e11_cell(args):
    exp, seed, n, cap, tol, c = args
    model = _model(exp, seed, n)
    log = _run_method("cayley", model, _haar_init(exp, seed, n), cap, tol, None, c=c)
    bad = sum(audit_log(log, model.norm_ce, model.signal.gap).values())
    return [seed, log.converged, log.iterations, log.final_f, bad]


def _e12_cell(args):
    exp, seed, n, steps, frac, c = args
    model = _model(exp, seed, n)
    g = model.signal.gap
    f_enter = entry_threshold(g, frac * g)
    log = run(SolverConfig(step=StepSchedule("constant", c, "Ce2sq"), max_iters=steps,
                           f_tolerance=f_enter), model, _haar_init(exp, seed, n))
    return [seed, f_enter, log.converged, log.iterations if log.converged else None]


def _grid_cell(args):
    exp, seed, n, method, s2, cap, c, timing = args
    model = _model(exp, seed, n, s2)
    t0 = time.perf_counter()
    log = _run_method(method, model, _haar_init(exp, seed, n), cap, 1e-6, None,
                      probe_rng=stream(exp, seed, "probes"), c=c)
    elapsed = time.perf_counter() - t0 if timing else None
    bad = sum(audit_log(log, model.norm_ce, model.signal.gap).values())
    return [method, s2, seed, log.converged, log.iterations if log.converged else None, elapsed, bad]


# ---------------------------------------------------------------- protocols

def _e1(spec, pool):
    steps = int(spec.opt("steps", 5000))
    ret = spec.opt("retraction", "neumann3")
    t = ResultTable(("seed", "sigma2_a", "sigma2_b", "max_diff", "mean_diff", "steps"))
    cells = [(spec.id, s, spec.n, spec.sigma2, steps, ret, spec.step_c) for s in range(spec.seeds)]
    for rows in pool(_e1_cell, cells):
        for r in rows:
            t.add(*r)
    return t


def _e2(spec, pool):
    steps = int(spec.opt("steps", 300))
    pulse = float(spec.opt("pulse", 1e8))
    start, end = int(spec.opt("start", 200)), int(spec.opt("end", 220))
    methods = spec.opt("methods", ["cayley", "subspace", "qr_oja", "euclidean_sgd"])
    t = ResultTable(("method", "seed", "max_pulse_d", "baseline_d", "ratio"))
    cells = [(spec.id, s, spec.n, m, steps, pulse, start, end, spec.step_c)
             for m in methods for s in range(spec.seeds)]
    for r in pool(_e2_cell, cells):
        t.add(*r)
    return t


def _e3(spec, pool):
    steps = int(spec.opt("steps", 5000))
    warm = spec.opt("warm_start", 0.0)
    t = ResultTable(("sigma2", "eps_e", "radius", "radius_median", "slope", "intercept", "r2"))
    cells = [(spec.id, s, spec.n, s2, e, steps, warm, spec.step_c)
             for s2 in spec.sigma2 for e in spec.eps_e for s in range(spec.seeds)]
    res = iter(pool(_e3_cell, cells))
    for s2 in spec.sigma2:
        radii, medians = [], []
        for _ in spec.eps_e:
            vals = [next(res) for _ in range(spec.seeds)]
            radii.append(float(np.mean([v[0] for v in vals])))
            medians.append(float(np.mean([v[1] for v in vals])))
        slope, icpt, r2 = linear_fit(spec.eps_e, radii)
        for e, r, m in zip(spec.eps_e, radii, medians):
            t.add(s2, e, r, m, slope, icpt, r2)
    return t


def _e4(spec, pool):
    steps = int(spec.opt("steps", 50000))
    c, k0 = float(spec.opt("c", 0.5)), float(spec.opt("k0", 100))
    warm = spec.opt("warm_start", 0.5)
    variant = spec.opt("variant", "A")
    samples = spec.opt("samples", None)
    if variant == "B" and samples is None:
        raise ValueError("variant B needs overrides['samples'] (per-step sample count)")
    burn_in = int(spec.opt("burn_in", 10 * k0))
    eps = spec.eps_e[0] if spec.eps_e else 0.0
    t = ResultTable(("variant", "sigma2", "eps_e", "slope", "burn_in", "final_mean_f"))
    for s2 in spec.sigma2:
        cells = [(spec.id, s, spec.n, s2, eps, steps, c, k0, warm, variant, samples) for s in range(spec.seeds)]
        F = np.mean(pool(_e4_cell, cells), axis=0)
        t.add(variant, s2, eps, loglog_slope(F, burn_in), burn_in, float(F[-1]))
    return t


E5_ETAS = (0.001, 0.002, 0.005, 0.01, 0.015, 0.02, 0.03, 0.05)


def e5_scale(n: int, eta_crit: float = 0.03) -> float:
    """Spectrum scale putting the linearized stability limit of the flow at ``eta_crit``.

    Near the optimum the mode of pair ``(i, j)`` contracts by
    ``1 - eta (lam_i - lam_j)^2``; it turns unstable once that drops below
    ``-1``, i.e. at ``eta = 2 / (max gap)^2``.
    """
    return math.sqrt(2.0 / eta_crit) / (n - 1)


def _e5(spec, pool):
    steps = int(spec.opt("steps", 1000))
    etas = tuple(spec.opt("etas", E5_ETAS))
    scale = float(spec.opt("scale", e5_scale(spec.n)))
    t = ResultTable(("eta", "monotone_fraction", "mean_ascents", "scale"))
    cells = [(spec.id, s, spec.n, eta, steps, scale) for eta in etas for s in range(spec.seeds)]
    res = iter(pool(_e5_cell, cells))
    for eta in etas:
        counts = [next(res) for _ in range(spec.seeds)]
        t.add(eta, float(np.mean([c == 0 for c in counts])), float(np.mean(counts)), scale)
    return t


def _e6(spec, pool):
    dims = spec.opt("dims", [spec.n] if spec.n else [5, 10, 20, 50])
    samples = int(spec.opt("samples", 1000))
    t = ResultTable(("n", "samples", "mean_ratio", "p5_ratio"))
    for r in pool(_e6_cell, [(spec.id, n, samples) for n in dims]):
        t.add(*r)
    return t


def _e7(spec, pool):
    dims = spec.opt("dims", [spec.n] if spec.n else [5, 10, 20])
    samples = int(spec.opt("samples", 1000))
    eps = float(spec.opt("eps", 1e-4))
    t = ResultTable(("n", "pairs", "L_est", "L_bound", "ratio"))
    for r in pool(_e7_cell, [(spec.id, n, samples, eps) for n in dims]):
        t.add(*r)
    return t


def _e8(spec, pool):
    dims = spec.opt("dims", [spec.n] if spec.n else [5, 10, 20])
    samples = int(spec.opt("samples", 10000))
    t = ResultTable(("n", "samples", "p_negative", "ci_low", "ci_high"))
    for r in pool(_e8_cell, [(spec.id, n, samples) for n in dims]):
        t.add(*r)
    return t


def _e9(spec, pool):
    steps = int(spec.opt("steps", 5000))
    scale = float(spec.opt("scale", 0.1))
    warm = float(spec.opt("warm_start", 0.01))
    frac = float(spec.opt("threshold_fraction", 0.25))
    t = ResultTable(("eps_e", "p_escape", "mean_delta_min", "mean_final_delta", "domain_radius",
                     "input_bound", "mean_sqrt_f0"))
    probe = _model(spec.id, 0, spec.n, scale=scale)
    g = probe.signal.gap
    cells = [(spec.id, s, spec.n, e, steps, scale, warm, spec.step_c)
             for e in spec.eps_e for s in range(spec.seeds)]
    res = iter(pool(_e9_cell, cells))
    for e in spec.eps_e:
        vals = [next(res) for _ in range(spec.seeds)]
        dmin = np.array([v[0] for v in vals])
        t.add(e, float(np.mean(dmin < frac * g)), float(dmin.mean()), float(np.mean([v[1] for v in vals])),
              domain_radius(g, frac * g, probe.norm_ce), input_bound(probe.norm_ce, e),
              float(np.mean([math.sqrt(v[2]) for v in vals])))
    return t


def _e10(spec, pool):
    eps_grid = np.logspace(-6, -2, 9)
    rng = stream(spec.id, 0, "perturbation")
    n = spec.n
    M = haar_rotation(n, rng)
    S = sym(rng.standard_normal((n, n)))
    S /= np.linalg.norm(S, 2)
    t = ResultTable(("retraction", "slope", "dist_at_1e-3", "mean_iters"))
    cap = int(spec.opt("max_iters", 30000))
    cells = [(spec.id, s, n, m, 0.0, cap, spec.step_c, False) for m in ("riem_qr", "riem_polar")
             for s in range(spec.seeds)]
    res = pool(_grid_cell, cells)
    for name, fn in (("qr", qr_retract), ("polar", polar_retract)):
        d = np.array([np.linalg.norm(fn(M + e * M @ S) - M) for e in eps_grid])
        slope = float(np.polyfit(np.log(eps_grid), np.log(d), 1)[0])
        at = float(np.linalg.norm(fn(M + 1e-3 * M @ S) - M))
        its = [r[4] for r in res if r[0] == f"riem_{name}" and r[4] is not None]
        t.add(name, slope, at, float(np.mean(its)) if its else None)
    return t


def _e11(spec, pool):
    cap = int(spec.opt("max_iters", 10000))
    tol = float(spec.opt("f_tolerance", 1e-8))
    t = ResultTable(("seed", "converged", "iterations", "final_f", "audit_violations"))
    for r in pool(_e11_cell, [(spec.id, s, spec.n, cap, tol, spec.step_c) for s in range(spec.seeds)]):
        t.add(*r)
    return t


def _e12(spec, pool):
    steps = int(spec.opt("steps", 1000))
    frac = float(spec.opt("delta_fraction", 0.25))
    t = ResultTable(("seed", "f_enter", "entered", "t_enter"))
    for r in pool(_e12_cell, [(spec.id, s, spec.n, steps, frac, spec.step_c) for s in range(spec.seeds)]):
        t.add(*r)
    return t


E13_METHODS = ("cayley", "riem_qr", "riem_polar", "raw_oja", "subspace", "euclidean_sgd")
E14_METHODS = ("cayley", "riem_polar", "riem_qr", "tf_oja", "raw_oja")


def _grid(spec, pool, methods, cap):
    timing = bool(spec.opt("timing", False))
    cells = [(spec.id, s, spec.n, m, s2, cap, spec.step_c, timing)
             for m in methods for s2 in spec.sigma2 for s in range(spec.seeds)]
    res = iter(pool(_grid_cell, cells))
    t = ResultTable(("method", "sigma2", "seeds", "converged", "mean_iters", "iters", "status",
                     "audit_violations", "seconds"))
    for m in methods:
        for s2 in spec.sigma2:
            rows = [next(res) for _ in range(spec.seeds)]
            its = [r[4] for r in rows]
            ok = [i for i in its if i is not None]
            status = "ok" if len(ok) == len(its) else ("FAIL" if not ok else "partial")
            secs = sum(r[5] for r in rows) / len(rows) if timing else None
            t.add(m, s2, spec.seeds, len(ok), float(np.mean(ok)) if ok else None,
                  ";".join("FAIL" if i is None else str(i) for i in its), status,
                  sum(r[6] for r in rows), secs)
    t.metadata["max_iters"] = cap
    return t


def _e13(spec, pool):
    return _grid(spec, pool, tuple(spec.opt("methods", E13_METHODS)), int(spec.opt("max_iters", 100_000)))


def _e14(spec, pool):
    return _grid(spec, pool, tuple(spec.opt("methods", E14_METHODS)), int(spec.opt("max_iters", 30_000)))


def _mvp_cost(spec, pool):
    iters = int(spec.opt("steps", 100))
    probes = spec.opt("probes", [1, 3, 5, 10, 20, 50])
    n = spec.n
    s2 = spec.sigma2[0] if spec.sigma2 else 0.0
    model = _model(spec.id, 0, n, s2)
    M0 = _haar_init(spec.id, 0, n)
    t = ResultTable(("method", "probes", "iterations", "total_mvps", "mvps_per_iter", "matrix_free", "overhead"))
    cay = _run_method("cayley", model, M0, iters, 1e-300, None)
    base = cay.mvp_count / cay.iterations
    t.add("cayley", 0, cay.iterations, cay.mvp_count, base, True, 1.0)
    ora = run_baseline(BaselineConfig("tf_oja", max_iters=iters, f_tolerance=1e-300), model, M0)
    t.add("tf_oja_oracle", 0, ora.iterations, ora.mvp_count, ora.mvp_count / ora.iterations, False, None)
    for m in probes:
        cfg = BaselineConfig("tf_oja_hutchinson", max_iters=iters, f_tolerance=1e-300, probes=int(m))
        log = run_baseline(cfg, model, M0, probe_rng=stream(spec.id, 0, f"probes-{m}"))
        per = log.mvp_count / log.iterations
        t.add("tf_oja_hutchinson", int(m), log.iterations, log.mvp_count, per, True, per / base)
    return t


def _verify(spec, pool):
    from dbflow.verify import run_checks
    t = ResultTable(("check", "passed", "detail"))
    for name, ok, detail in run_checks():
        t.add(name, ok, detail)
    return t


PROTOCOLS = {
    "e1": _e1, "e2": _e2, "e3": _e3, "e4": _e4, "e5": _e5, "e6": _e6, "e7": _e7,
    "e8": _e8, "e9": _e9, "e10": _e10, "e11": _e11, "e12": _e12, "e13": _e13,
    "e14": _e14, "mvp_cost": _mvp_cost, "verify": _verify,
}


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Run ``spec`` and return its table; metadata echoes the resolved config."""
    spec = spec.resolved()
    workers = worker_count(spec.workers)
    t0 = time.perf_counter()
    table = PROTOCOLS[spec.id](spec, lambda fn, cells: _map(fn, cells, workers))
    table.metadata.update({
        "experiment": spec.id,
        "config": spec.to_dict(),
        "version": __version__,
        "git": _git_hash(),
        "wall_clock_s": time.perf_counter() - t0,
    })
    return table


def verify_passed(table: ResultTable) -> bool:
    return all(table.column("passed"))


__all__ = [
    "EXPERIMENTS", "ExperimentSpec", "ResultTable", "emit", "run_experiment",
    "worker_count", "e5_scale", "verify_passed",
]
