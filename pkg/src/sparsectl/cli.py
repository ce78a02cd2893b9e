"""Command-line entry point: ``sparsectl <subcommand> [flags]``.

Exit codes: 0 success, 2 usage error, 3 infeasible request, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .core import ActuatorSchedule, LinearSystem, NoiseModel, gramian, numerical_rank, simulate
from .errors import (
    BoundUndefinedError,
    InputError,
    NotControllableError,
    NumericalError,
    PreconditionError,
    SparseCtlError,
)
from .experiments import EXPERIMENTS, ExperimentSpec, run_experiment
from .noisy import mse_floor, mse_floor_transposed, steady_state_covariance, track
from .scheduler import (
    controllable_schedule,
    energy_aware_controllable_schedule,
    estimate_x0,
    rbn_greedy_trace,
    sensor_schedule,
)
from .sparse_recovery import decay_factor
from .systems import (
    B_DISTRIBUTIONS,
    erdos_renyi_system,
    graph_to_system,
    load_edge_list,
    random_b,
    zachary_karate_club,
)

log = logging.getLogger("sparsectl")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 2, 3, 4

LIST_KEYS = {"s", "sigma2", "m_values", "xf_scales", "x0_norms"}
INT_KEYS = {"n", "m", "p", "k", "horizon", "trials", "seed"}
FLOAT_KEYS = {"xf_scale", "x0_norm"}
BOOL_KEYS = {"consensus"}


class UsageError(Exception):
    pass


def read_config(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments). Keys use flag names, dashes or underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_").lower()] = value
    return out


def _convert(key: str, value):
    if not isinstance(value, str):
        return value
    try:
        if key in LIST_KEYS:
            conv = int if key in ("s", "m_values") else float
            return [conv(v) for v in value.replace(",", " ").split()]
        if key in INT_KEYS:
            return int(value)
        if key in FLOAT_KEYS:
            return float(value)
        if key in BOOL_KEYS:
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return value.lower() in ("true", "1", "yes")
    except ValueError:
        raise UsageError(f"bad value for {key}: {value!r}") from None
    return value


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if getattr(args, "config", None):
        for key, value in read_config(args.config).items():
            if not hasattr(args, key):
                raise UsageError(f"unknown config key {key!r}")
            setattr(args, key, _convert(key, value))
    return args


def _require_seed(args):
    if args.seed is None:
        raise UsageError("--seed is required for this command")


def _scalar(values, name):
    if values is None:
        return None
    if isinstance(values, (int, float)):
        return values
    if len(values) != 1:
        raise UsageError(f"--{name} takes a single value for this command")
    return values[0]


def _build_system(args, with_c: bool = False) -> LinearSystem:
    ss = np.random.SeedSequence(args.seed)
    a_ss, b_ss, c_ss = ss.spawn(3)
    if args.graph == "erdos-renyi":
        A = erdos_renyi_system(args.n, a_ss)
    elif args.graph == "identity":
        A = np.eye(args.n)
    elif args.graph == "zachary":
        A = graph_to_system(zachary_karate_club())
    else:
        A = graph_to_system(load_edge_list(args.graph))
    n = A.shape[0]
    m = args.m if args.m is not None else n
    B = random_b(n, m, args.b_dist, np.random.default_rng(b_ss))
    C = None
    if with_c:
        p = args.p if args.p is not None else n
        C = np.eye(n) if p == n else np.random.default_rng(c_ss).standard_normal((p, n))
    return LinearSystem(A, B, C)


def _out(args, text: str) -> None:
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _sched_horizon(args, n: int, s: int) -> int:
    return args.k if args.k is not None else math.ceil(n / s)


def _make_schedule(args, system: LinearSystem) -> tuple[ActuatorSchedule, list[float] | None]:
    s = _scalar(args.s, "s")
    if s is None:
        raise UsageError("--s is required")
    K = _sched_horizon(args, system.n, s)
    if args.method == "controllable":
        return controllable_schedule(system, s, K), None
    if args.method == "energy-aware":
        return energy_aware_controllable_schedule(system, s, K), None
    run = rbn_greedy_trace(system, s, K, controllable_schedule(system, s, K))
    return run.schedule, run.costs


def cmd_schedule(args) -> int:
    _require_seed(args)
    system = _build_system(args)
    sched, _ = _make_schedule(args, system)
    _out(args, sched.to_text())
    return EXIT_OK


def cmd_energy(args) -> int:
    _require_seed(args)
    system = _build_system(args)
    if args.schedule:
        sched = ActuatorSchedule.from_text(Path(args.schedule).read_text(), _scalar(args.s, "s"))
    else:
        sched, _ = _make_schedule(args, system)
    rep = gramian(system, sched)
    if not rep.full_rank:
        print(f"rank {rep.rank} < n = {system.n}: schedule does not ensure controllability", file=sys.stderr)
        return EXIT_INFEASIBLE
    _out(args, f"pairs = {sched.n_pairs}\nrank = {rep.rank}\ntrace_inv = {rep.trace_inverse!r}\n")
    return EXIT_OK


def cmd_track(args) -> int:
    _require_seed(args)
    system = _build_system(args, with_c=True)
    s = _scalar(args.s, "s")
    if s is None:
        raise UsageError("--s is required")
    sigma2 = _scalar(args.sigma2, "sigma2")
    noise = NoiseModel.isotropic(system.n, system.p, sigma2)
    xf_rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(4)[3])
    xf = args.xf_scale * xf_rng.standard_normal(system.n)
    if args.consensus:
        xf = np.ones(system.n)
    x0 = np.zeros(system.n)
    if args.x0_norm:
        d = xf_rng.standard_normal(system.n)
        x0 = args.x0_norm * d / np.linalg.norm(d)
    xi = decay_factor(system.B, seed=args.seed).value
    run = track(system, noise, xf, s, args.horizon, args.trials, args.seed, x0=x0, xi=xi)
    ric = steady_state_covariance(system, noise, check_hypotheses=False)
    header = (
        f"# floor tr(Sv)+tr(A P A^T) = {mse_floor(system, ric.P, noise)!r}\n"
        f"# floor tr(Sv)+tr(A^T P A) = {mse_floor_transposed(system, ric.P, noise)!r}\n"
        f"# xi = {xi!r}\n"
        f"# steady_mse = {run.steady_mse!r} ({run.steady_mse_db:.3f} dB), se = {run.steady_se!r}\n"
    )
    _out(args, header + run.to_csv())
    return EXIT_OK


def cmd_experiment(args) -> int:
    _require_seed(args)
    if args.experiment not in EXPERIMENTS:
        raise UsageError(f"unknown experiment {args.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    spec_kwargs = dict(
        experiment=args.experiment,
        seed=args.seed,
        n=args.n,
        m=args.m,
        p=args.p,
        s=tuple(args.s) if args.s is not None else None,
        K=args.k,
        horizon=args.horizon,
        trials=args.trials,
        sigma2=tuple(args.sigma2),
        b_dist=args.b_dist,
        graph=args.graph,
        xf_scales=tuple(args.xf_scales),
        x0_norms=tuple(args.x0_norms),
        m_values=tuple(args.m_values) if args.m_values else None,
    )
    try:
        spec = ExperimentSpec(**spec_kwargs)
    except InputError as exc:
        raise UsageError(str(exc)) from None
    result = run_experiment(spec)
    _out(args, result.to_csv())
    if result.rows and all(r.get("status") == "infeasible" for r in result.rows):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_estimate_x0(args) -> int:
    _require_seed(args)
    system = _build_system(args, with_c=True)
    s = _scalar(args.s, "s")
    if s is None:
        s = max(1, system.n - numerical_rank(system.A))
    K = _sched_horizon(args, system.n, s)
    sched = sensor_schedule(system, s, K)
    x0 = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(4)[3]).standard_normal(system.n)
    traj = simulate(system, x0, np.zeros((K, system.m)))
    est = estimate_x0(system, sched, traj.measurements[:K])
    err = float(np.linalg.norm(est - x0) / np.linalg.norm(x0))
    _out(args, sched.to_text() + f"# relative_error = {err!r}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--n", type=int, default=20, help="state dimension (Erdos-Renyi graphs)")
    common.add_argument("--m", type=int, default=None, help="number of actuators (default n)")
    common.add_argument("--p", type=int, default=None, help="number of sensors (default n, C = I)")
    common.add_argument("--s", type=int, nargs="+", default=None, help="sparsity level(s)")
    common.add_argument("--k", type=int, default=None, help="horizon K (default ceil(n/s))")
    common.add_argument("--horizon", type=int, default=40, help="tracking steps")
    common.add_argument("--trials", type=int, default=100, help="Monte Carlo trials")
    common.add_argument("--sigma2", type=float, nargs="+", default=[1e-4], help="noise variance(s)")
    common.add_argument("--b-dist", dest="b_dist", choices=B_DISTRIBUTIONS, default="gaussian")
    common.add_argument("--graph", default="erdos-renyi",
                        help="erdos-renyi, identity, zachary or a path to an edge list")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument("--config", default=None, help="key = value file; overrides flags")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sparsectl", description="Sparse actuator scheduling and tracking.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schedule", parents=[common], help="print an s-sparse actuator schedule")
    p.add_argument("--method", choices=("greedy", "controllable", "energy-aware"), default="greedy")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("energy", parents=[common], help="average control energy trace(W^-1) of a schedule")
    p.add_argument("--method", choices=("greedy", "controllable", "energy-aware"), default="greedy")
    p.add_argument("--schedule", default=None, help="schedule text file (1-based); default: compute one")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("track", parents=[common], help="Monte Carlo sparse tracking, MSE per step")
    p.add_argument("--xf-scale", dest="xf_scale", type=float, default=1.0)
    p.add_argument("--x0-norm", dest="x0_norm", type=float, default=0.0)
    p.add_argument("--consensus", action="store_true", help="track the all-ones target")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("experiment", parents=[common], help="regenerate a figure's data as CSV")
    p.add_argument("experiment", help=", ".join(EXPERIMENTS))
    p.add_argument("--m-values", dest="m_values", type=int, nargs="+", default=None)
    p.add_argument("--xf-scales", dest="xf_scales", type=float, nargs="+", default=[1.0])
    p.add_argument("--x0-norms", dest="x0_norms", type=float, nargs="+", default=[1.0, 10.0, 100.0])
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("estimate-x0", parents=[common], help="sensor schedule and initial-state recovery")
    p.set_defaults(func=cmd_estimate_x0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _apply_config(args)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PreconditionError, NotControllableError, BoundUndefinedError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, SparseCtlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
