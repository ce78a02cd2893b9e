"""Batch experiments that regenerate energy and tracking-MSE curves as CSV.

Every experiment is a pure function of its :class:`ExperimentSpec`: all
randomness flows from ``spec.seed`` through ``numpy.random.SeedSequence``
children, so identical specs give byte-identical CSV files.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .core import ActuatorSchedule, LinearSystem, NoiseModel, avg_energy, full_gramian, gramian
from .errors import InputError, NotControllableError, PreconditionError
from .noisy import to_db, track
from .scheduler import controllable_schedule, rbn_greedy
from .sparse_recovery import decay_factor
from .systems import (
    B_DISTRIBUTIONS,
    erdos_renyi_system,
    graph_to_system,
    load_edge_list,
    random_b,
    random_feasible_schedule,
    zachary_karate_club,
)

ENERGY_EXPERIMENTS = ("energy-vs-s", "relative-energy")
MSE_EXPERIMENTS = ("mse-vs-time", "mse-vs-s", "mse-vs-m", "mse-vs-xf", "mse-vs-x0")
EXPERIMENTS = ENERGY_EXPERIMENTS + MSE_EXPERIMENTS


@dataclass(frozen=True)
class ExperimentSpec:
    """Parameters of one experiment run.

    ``graph`` is ``"erdos-renyi"`` (``n`` vertices), ``"identity"``
    (``A = I``), ``"zachary"`` (bundled karate club) or a path to an edge-list
    file. ``m`` defaults to ``n`` for the energy experiments and ``2n`` for the
    tracking ones; ``K`` defaults to ``ceil(n/s)`` (energy) and ``s`` to a
    sweep over ``1..m`` (energy) or five evenly spaced levels up to ``n``
    (tracking). ``xf_scale`` multiplies a standard Gaussian target;
    ``mse-vs-x0`` always tracks the all-ones consensus target.
    """

    experiment: str
    seed: int
    n: int = 20
    m: int | None = None
    p: int | None = None
    s: tuple[int, ...] | None = None
    K: int | None = None
    horizon: int = 40
    trials: int = 100
    sigma2: tuple[float, ...] = (1e-4,)
    b_dist: str = "gaussian"
    graph: str = "erdos-renyi"
    m_values: tuple[int, ...] | None = None
    xf_scales: tuple[float, ...] = (1.0,)
    x0_norms: tuple[float, ...] = (1.0, 10.0, 100.0)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise InputError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if self.seed is None:
            raise InputError("seed is required")
        if self.b_dist not in B_DISTRIBUTIONS:
            raise InputError(f"unknown B distribution {self.b_dist!r}")
        if self.n < 2:
            raise InputError("n must be at least 2")
        if self.horizon < 1 or self.trials < 1:
            raise InputError("horizon and trials must be positive")
        if self.K is not None and self.K < 1:
            raise InputError("K must be positive")
        for name in ("s", "m_values", "sigma2", "xf_scales", "x0_norms"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(val)
                if not val:
                    raise InputError(f"{name} must be non-empty")
                object.__setattr__(self, name, val)
        if any(v < 0 for v in self.sigma2):
            raise InputError("sigma2 must be non-negative")
        if self.s is not None and any(v < 0 for v in self.s):
            raise InputError("s must be non-negative")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)


@dataclass
class ExperimentResult:
    columns: list[str]
    rows: list[dict]
    spec: ExperimentSpec

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# spec: {self.spec.to_json()}\n")
        buf.write(f"# seed: {self.spec.seed}\n")
        w = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n", extrasaction="raise")
        w.writeheader()
        for row in self.rows:
            w.writerow({k: _fmt(row.get(k)) for k in self.columns})
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _child_seeds(seed: int, count: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(count)


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _transfer_matrix(spec: ExperimentSpec, ss) -> np.ndarray:
    if spec.graph == "erdos-renyi":
        return erdos_renyi_system(spec.n, ss)
    if spec.graph == "identity":
        return np.eye(spec.n)
    if spec.graph == "zachary":
        return graph_to_system(zachary_karate_club())
    return graph_to_system(load_edge_list(spec.graph))


def _resolved_n(spec: ExperimentSpec) -> int:
    if spec.graph == "zachary":
        return zachary_karate_club().n
    if spec.graph not in ("erdos-renyi", "identity"):
        return load_edge_list(spec.graph).n
    return spec.n


def _energy_levels(m: int) -> tuple[int, ...]:
    if m <= 20:
        return tuple(range(1, m + 1))
    return tuple(sorted({max(1, round(m * f / 10)) for f in range(1, 11)}))


def _mse_levels(n: int) -> tuple[int, ...]:
    return tuple(sorted({max(1, round(n * f / 5)) for f in range(1, 6)}))


# energy experiments ---------------------------------------------------------

ENERGY_COLUMNS = [
    "s", "s_over_m", "K", "scheduler", "trials", "failures",
    "trace_inv", "log_trace_inv", "rho", "status",
]


def _schedule_energy(sys: LinearSystem, sched: ActuatorSchedule) -> float | None:
    rep = gramian(sys, sched)
    return rep.trace_inverse if rep.full_rank else None


def _run_energy(spec: ExperimentSpec) -> ExperimentResult:
    n = _resolved_n(spec)
    m = spec.m if spec.m is not None else n
    levels = spec.s if spec.s is not None else _energy_levels(m)
    sys_seeds = _child_seeds(spec.seed, 2 * spec.trials)
    systems = []
    for t in range(spec.trials):
        A = _transfer_matrix(dataclasses.replace(spec, n=n), sys_seeds[2 * t])
        B = random_b(n, m, spec.b_dist, np.random.default_rng(sys_seeds[2 * t + 1]))
        systems.append(LinearSystem(A, B))
    baseline_seeds = _child_seeds(spec.seed + 1, len(levels) * spec.trials)

    rows = []
    for si, s in enumerate(levels):
        K = spec.K if spec.K is not None else math.ceil(n / s) if s > 0 else 1
        greedy: list[tuple[float, float]] = []
        random_: list[tuple[float, float]] = []
        greedy_status = None
        random_fail = 0
        for t, sys in enumerate(systems):
            full = full_gramian(sys, K)
            base = avg_energy(full) if full.full_rank else None
            if s < 1 or s > m or base is None:
                greedy_status = "infeasible"
                break
            try:
                G0 = controllable_schedule(sys, s, K)
                sched = rbn_greedy(sys, s, K, G0)
            except (PreconditionError, NotControllableError):
                greedy_status = "infeasible"
                break
            e = _schedule_energy(sys, sched)
            if e is None:
                greedy_status = "infeasible"
                break
            greedy.append((e, e / base))
            rs = random_feasible_schedule(m, K, s, np.random.default_rng(baseline_seeds[si * spec.trials + t]))
            e = _schedule_energy(sys, rs)
            if e is None:
                random_fail += 1
            else:
                random_.append((e, e / base))
        common = {"s": s, "s_over_m": s / m, "K": K, "trials": spec.trials}
        if greedy_status is not None:
            for name in ("rbn-greedy", "random"):
                rows.append({**common, "scheduler": name, "failures": None, "status": "infeasible"})
            continue
        rows.append({**common, **_energy_stats(greedy), "scheduler": "rbn-greedy", "failures": 0, "status": "ok"})
        rows.append({
            **common,
            **(_energy_stats(random_) if random_fail == 0 else {}),
            "scheduler": "random",
            "failures": random_fail,
            "status": "ok" if random_fail == 0 else "fails",
        })
    return ExperimentResult(ENERGY_COLUMNS, rows, spec)


def _energy_stats(vals: list[tuple[float, float]]) -> dict:
    e = np.array([v[0] for v in vals])
    r = np.array([v[1] for v in vals])
    return {"trace_inv": float(e.mean()), "log_trace_inv": float(np.log(e).mean()), "rho": float(r.mean())}


# tracking experiments -------------------------------------------------------

def _tracking_setup(spec: ExperimentSpec, n: int, m: int, p: int, seed_ss):
    a_ss, b_ss, c_ss, xf_ss = seed_ss.spawn(4)
    A = _transfer_matrix(dataclasses.replace(spec, n=n), a_ss)
    B = random_b(n, m, spec.b_dist, np.random.default_rng(b_ss))
    C = np.eye(n) if p == n else np.random.default_rng(c_ss).standard_normal((p, n))
    xf_dir = np.random.default_rng(xf_ss).standard_normal(n)
    return LinearSystem(A, B, C), xf_dir


def _analytic_xi(B: np.ndarray) -> float | None:
    """Decay factor when it is known in closed form, else ``None``."""
    try:
        est = decay_factor(B, sample_budget=0)
    except InputError:
        return None
    return est.value


MSE_COLUMNS = [
    "m", "sigma2", "xf_scale", "x0_norm", "s", "step", "mse", "mse_db", "se",
    "steady_mse", "steady_mse_db", "steady_se", "floor", "floor_db", "bound", "bound_db", "status",
]


def _mse_row(run, base: dict, with_series: bool) -> list[dict]:
    bound_db = None if run.bound is None else float(to_db(run.bound))
    floor_db = None if run.floor is None else float(to_db(run.floor))
    common = {
        **base,
        "steady_mse": run.steady_mse,
        "steady_mse_db": run.steady_mse_db,
        "steady_se": run.steady_se,
        "floor": run.floor,
        "floor_db": floor_db,
        "bound": run.bound,
        "bound_db": bound_db,
        "status": "ok",
    }
    mse, mse_db, se = run.mse, run.mse_db, run.se
    steps = range(1, run.horizon + 1) if with_series else [run.horizon]
    return [
        {**common, "step": k, "mse": float(mse[k - 1]), "mse_db": float(mse_db[k - 1]), "se": float(se[k - 1])}
        for k in steps
    ]


def _run_mse(spec: ExperimentSpec) -> ExperimentResult:
    n = _resolved_n(spec)
    p = spec.p if spec.p is not None else n
    m_values = spec.m_values if spec.experiment == "mse-vs-m" and spec.m_values else (
        (spec.m if spec.m is not None else 2 * n),
    )
    levels = spec.s if spec.s is not None else _mse_levels(n)
    sys_ss, noise_ss, x0_ss = _child_seeds(spec.seed, 3)
    noise_seed = _int_seed(noise_ss)
    x0_dir = np.random.default_rng(x0_ss).standard_normal(n)
    x0_dir /= np.linalg.norm(x0_dir)

    if spec.experiment == "mse-vs-xf":
        xf_scales = spec.xf_scales
    else:
        xf_scales = spec.xf_scales[:1]
    x0_norms = spec.x0_norms if spec.experiment == "mse-vs-x0" else (0.0,)
    with_series = spec.experiment == "mse-vs-time"

    rows = []
    for mi, m in enumerate(m_values):
        sys, xf_dir = _tracking_setup(spec, n, m, p, sys_ss.spawn(len(m_values))[mi])
        xi = _analytic_xi(sys.B)
        for sigma2 in spec.sigma2:
            noise = NoiseModel.isotropic(n, p, sigma2)
            for scale in xf_scales:
                xf = np.ones(n) if spec.experiment == "mse-vs-x0" else scale * xf_dir
                for x0_norm in x0_norms:
                    x0 = x0_norm * x0_dir
                    for s in levels:
                        base = {"m": m, "sigma2": sigma2, "xf_scale": scale, "x0_norm": x0_norm, "s": s}
                        if not 1 <= s <= m:
                            rows.append({**base, "status": "infeasible"})
                            continue
                        run = track(sys, noise, xf, s, spec.horizon, spec.trials, noise_seed, x0=x0, xi=xi)
                        rows.extend(_mse_row(run, base, with_series))
    return ExperimentResult(MSE_COLUMNS, rows, spec)


RUNNERS: dict[str, Callable[[ExperimentSpec], ExperimentResult]] = {
    **{e: _run_energy for e in ENERGY_EXPERIMENTS},
    **{e: _run_mse for e in MSE_EXPERIMENTS},
}


def run_experiment(spec: ExperimentSpec, out=None) -> ExperimentResult:
    """Run ``spec`` and, when ``out`` is given, write the CSV there."""
    result = RUNNERS[spec.experiment](spec)
    if out is not None:
        Path(out).write_text(result.to_csv())
    return result
