"""``dbf`` command line: ``run``, ``solve`` and ``verify``.

Exit codes: 0 success, 1 usage error, 2 experiment failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from dbflow.experiments import EXPERIMENTS, ExperimentSpec, emit, run_experiment, verify_passed
from dbflow.linalg import haar_rotation
from dbflow.observation import ObservationModel
from dbflow.retractions import Retraction
from dbflow.rng import stream
from dbflow.solver import EscapeConfig, SolverConfig, StepSchedule, run

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _override(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    try:
        value = json.loads(value)
    except json.JSONDecodeError:
        pass
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dbf", description="Double-bracket flow solver and experiment harness.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a named experiment")
    r.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    r.add_argument("--n", type=int)
    r.add_argument("--seeds", type=int)
    r.add_argument("--sigma2", type=_floats, help="comma-separated isotropic intensities")
    r.add_argument("--eps-e", type=_floats, dest="eps_e", help="comma-separated trace-free amplitudes")
    r.add_argument("--step-c", type=float, dest="step_c")
    r.add_argument("--out", help="output file (default: stdout)")
    r.add_argument("--format", choices=("csv", "json"))
    r.add_argument("--config", help="JSON file with the same keys; flags override it")
    r.add_argument("--workers", type=int, help="worker processes (default: DBF_WORKERS or CPU count)")
    r.add_argument("--set", type=_override, action="append", default=[], metavar="KEY=VALUE",
                   help="protocol override, e.g. --set steps=2000 (value parsed as JSON when possible)")

    s = sub.add_parser("solve", help="one solver run from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="write the per-step CSV log here")

    sub.add_parser("verify", help="run the invariant battery")
    return p


def _load_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}")


def _spec_from_args(args) -> ExperimentSpec:
    base = _load_json(args.config) if args.config else {}
    base = dict(base)
    base["id"] = args.experiment
    base.pop("experiment", None)
    for key in ("n", "seeds", "sigma2", "eps_e", "step_c", "out", "format", "workers"):
        v = getattr(args, key)
        if v is not None:
            base[key] = v
    if args.set:
        base["overrides"] = {**base.get("overrides", {}), **dict(args.set)}
    try:
        return ExperimentSpec.from_dict(base)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    try:
        table = run_experiment(spec)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"dbf: experiment {spec.id} failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    try:
        text = emit(table, spec.format, spec.out)
    except OSError as exc:
        print(f"dbf: cannot write output: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if not spec.out:
        sys.stdout.write(text)
    if spec.id == "verify" and not verify_passed(table):
        return EXIT_FAILURE
    return EXIT_OK


def solver_from_dict(d: dict) -> SolverConfig:
    """``SolverConfig`` from the ``solver`` block of a solve config."""
    step = d.get("step", {})
    esc = d.get("escape")
    return SolverConfig(
        retraction=Retraction.parse(d.get("retraction", "neumann3")),
        step=StepSchedule(step.get("kind", "constant"), float(step.get("c", 0.1)),
                          step.get("normalizer", "Ce2sq" if step.get("kind", "constant") == "constant" else "none"),
                          float(step.get("k0", 100.0))),
        max_iters=int(d.get("max_iters", 100_000)),
        f_tolerance=float(d.get("f_tolerance", 1e-6)),
        reorth_period=int(d.get("reorth_period", 100)),
        escape=EscapeConfig(**esc) if isinstance(esc, dict) else (EscapeConfig() if esc else None),
        use_trace_free=bool(d.get("use_trace_free", True)),
    )


def cmd_solve(args) -> int:
    cfg = _load_json(args.config)
    try:
        model = ObservationModel.from_dict(cfg)
        solver = solver_from_dict(cfg.get("solver", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"bad solve config: {exc}")
    seed = int(cfg.get("seed", 0))
    init = cfg.get("init", "haar")
    if init == "haar":
        M0 = haar_rotation(model.n, stream("solve", seed, "init"))
    elif init == "identity":
        M0 = np.eye(model.n)
    else:
        raise UsageError(f"unknown init {init!r} (haar or identity)")
    if model.schedule.frozen:
        model = model.freeze(stream("solve", seed, "frozen-noise"))
    log = run(solver, model, M0, stream("solve", seed, "noise"),
              ground_truth=bool(cfg.get("ground_truth", True)))
    if args.out:
        try:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(log.to_csv())
        except OSError as exc:
            print(f"dbf: cannot write output: {exc}", file=sys.stderr)
            return EXIT_FAILURE
    print(log.to_json())
    return EXIT_OK


def cmd_verify(args) -> int:
    table = run_experiment(ExperimentSpec("verify"))
    sys.stdout.write(emit(table, "csv"))
    return EXIT_OK if verify_passed(table) else EXIT_FAILURE


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {"run": cmd_run, "solve": cmd_solve, "verify": cmd_verify}[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"dbf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
