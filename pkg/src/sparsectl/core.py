"""System model, actuator schedules, Gramians and minimum-energy inputs.

Conventions used throughout the package:

* actuator, sensor and time indices are 0-based in Python; the text schedule
  format (see :meth:`ActuatorSchedule.to_text`) is 1-based;
* a schedule of horizon ``K`` places actuator ``j`` at time ``k`` on the column
  ``A^(K-1-k) B[:, j]`` of the controllability matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import InputError, NotControllableError


def _as_float_matrix(M, name: str, ndim: int = 2) -> np.ndarray:
    arr = np.array(M, dtype=float)
    if arr.ndim != ndim:
        raise InputError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RankTolerance:
    """Relative singular-value cutoff used for every rank decision.

    A singular value counts when it exceeds
    ``relative_tol * sigma_max * max(rows, cols)``.
    """

    relative_tol: float = 1e-10

    def __post_init__(self):
        if not self.relative_tol > 0:
            raise InputError("relative_tol must be positive")

    def cutoff(self, sigma_max: float, shape: tuple[int, ...]) -> float:
        return self.relative_tol * sigma_max * max(shape)


DEFAULT_TOL = RankTolerance()


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """``x(k+1) = A x(k) + B u(k)``, optionally observed through ``y = C x``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray | None = None

    def __post_init__(self):
        A = _as_float_matrix(self.A, "A")
        B = _as_float_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise InputError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise InputError(f"B must have {A.shape[0]} rows, got {B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        if self.C is not None:
            C = _as_float_matrix(self.C, "C")
            if C.shape[1] != A.shape[0]:
                raise InputError(f"C must have {A.shape[0]} columns, got {C.shape}")
            object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return 0 if self.C is None else self.C.shape[0]

    def dual(self) -> "LinearSystem":
        """The pair ``(A^T, C^T)`` whose controllability is the observability of this system."""
        if self.C is None:
            raise InputError("system has no measurement matrix C")
        return LinearSystem(self.A.T, self.C.T)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Process (``Sigma_v``, n x n) and measurement (``Sigma_w``, p x p) covariances."""

    Sigma_v: np.ndarray
    Sigma_w: np.ndarray

    def __post_init__(self):
        for name in ("Sigma_v", "Sigma_w"):
            S = _as_float_matrix(getattr(self, name), name)
            if S.shape[0] != S.shape[1]:
                raise InputError(f"{name} must be square")
            if not np.allclose(S, S.T, rtol=0.0, atol=1e-12):
                raise InputError(f"{name} must be symmetric")
            if S.size and np.linalg.eigvalsh(S)[0] < -1e-12:
                raise InputError(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, S)

    @classmethod
    def isotropic(cls, n: int, p: int, sigma2: float) -> "NoiseModel":
        if sigma2 < 0:
            raise InputError("sigma2 must be non-negative")
        return cls(sigma2 * np.eye(n), sigma2 * np.eye(p))

    @cached_property
    def process_factor(self) -> np.ndarray:
        return _psd_factor(self.Sigma_v)

    @cached_property
    def measurement_factor(self) -> np.ndarray:
        return _psd_factor(self.Sigma_w)


def _psd_factor(S: np.ndarray) -> np.ndarray:
    # L with L L^T = S; works for singular S where Cholesky would not
    lam, V = np.linalg.eigh(S)
    return V * np.sqrt(np.clip(lam, 0.0, None))


@dataclass(frozen=True)
class ActuatorSchedule:
    """Time-indexed actuator sets ``(S_0, ..., S_{K-1})`` with ``|S_k| <= s``."""

    sets: tuple[tuple[int, ...], ...]
    s: int

    def __post_init__(self):
        if self.s < 0:
            raise InputError("sparsity budget s must be non-negative")
        normalized = []
        for k, S in enumerate(self.sets):
            idx = tuple(sorted(int(j) for j in S))
            if len(set(idx)) != len(idx):
                raise InputError(f"duplicate actuator in S_{k}")
            if idx and idx[0] < 0:
                raise InputError(f"negative actuator index in S_{k}")
            if len(idx) > self.s:
                raise InputError(f"|S_{k}| = {len(idx)} exceeds s = {self.s}")
            normalized.append(idx)
        object.__setattr__(self, "sets", tuple(normalized))

    @property
    def K(self) -> int:
        return len(self.sets)

    @property
    def n_pairs(self) -> int:
        return sum(len(S) for S in self.sets)

    def pairs(self) -> list[tuple[int, int]]:
        """Selected ``(k, j)`` pairs in lexicographic order."""
        return [(k, j) for k, S in enumerate(self.sets) for j in S]

    def to_selection(self, m: int | None = None) -> "SelectionSet":
        return SelectionSet(frozenset(self.pairs()), self.K, m)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, int]], K: int, s: int) -> "ActuatorSchedule":
        sets: list[list[int]] = [[] for _ in range(K)]
        for k, j in pairs:
            if not 0 <= k < K:
                raise InputError(f"time index {k} outside [0, {K})")
            sets[k].append(j)
        return cls(tuple(tuple(S) for S in sets), s)

    @classmethod
    def full(cls, m: int, K: int) -> "ActuatorSchedule":
        return cls(tuple(tuple(range(m)) for _ in range(K)), m)

    def to_text(self) -> str:
        """Line ``k`` lists the 1-based actuators of ``S_k``; an empty line is an empty set."""
        return "".join(" ".join(str(j + 1) for j in S) + "\n" for S in self.sets)

    @classmethod
    def from_text(cls, text: str, s: int | None = None) -> "ActuatorSchedule":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        sets = []
        for lineno, line in enumerate(lines, start=1):
            try:
                sets.append(tuple(int(tok) - 1 for tok in line.split()))
            except ValueError as exc:
                raise InputError(f"line {lineno}: {exc}") from None
            if any(j < 0 for j in sets[-1]):
                raise InputError(f"line {lineno}: actuator indices are 1-based")
        if s is None:
            s = max((len(S) for S in sets), default=0)
        return cls(tuple(sets), s)


@dataclass(frozen=True)
class SelectionSet:
    """Schedule as a set of ``(time, actuator)`` pairs over horizon ``K``."""

    pairs: frozenset[tuple[int, int]]
    K: int
    m: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "pairs", frozenset((int(k), int(j)) for k, j in self.pairs))
        for k, j in self.pairs:
            if not 0 <= k < self.K:
                raise InputError(f"time index {k} outside [0, {self.K})")
            if j < 0 or (self.m is not None and j >= self.m):
                raise InputError(f"actuator index {j} out of range")

    def to_schedule(self, s: int) -> ActuatorSchedule:
        return ActuatorSchedule.from_pairs(self.pairs, self.K, s)


@dataclass(frozen=True, eq=False)
class GramianReport:
    W: np.ndarray
    rank: int
    trace_inverse: float | None
    lambda_min: float
    lambda_max: float

    @property
    def full_rank(self) -> bool:
        return self.trace_inverse is not None


@dataclass(frozen=True, eq=False)
class PiecewiseSparseInput:
    """Inputs ``u(0..K-1)`` stored as a ``K x m`` array whose row supports respect ``schedule``."""

    inputs: np.ndarray
    schedule: ActuatorSchedule

    def __post_init__(self):
        U = _as_float_matrix(self.inputs, "inputs")
        if U.shape[0] != self.schedule.K:
            raise InputError(f"expected {self.schedule.K} input vectors, got {U.shape[0]}")
        for k, S in enumerate(self.schedule.sets):
            off = np.ones(U.shape[1], dtype=bool)
            off[list(S)] = False
            if np.any(U[k, off] != 0.0):
                raise InputError(f"u({k}) has support outside S_{k}")
        object.__setattr__(self, "inputs", U)

    @property
    def stacked(self) -> np.ndarray:
        return self.inputs.reshape(-1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    measurements: np.ndarray | None = None

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True)
class SparseControllability:
    feasible: bool
    K_lower: int | None
    K_upper: int | None
    reason: str | None = None


def matrix_powers(A: np.ndarray, count: int) -> list[np.ndarray]:
    """``[I, A, ..., A^(count-1)]``."""
    powers = [np.eye(A.shape[0])]
    for _ in range(1, count):
        powers.append(powers[-1] @ A)
    return powers[:count]


def numerical_rank(M, tol: RankTolerance = DEFAULT_TOL) -> int:
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise InputError("matrix has non-finite entries")
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.count_nonzero(sv > tol.cutoff(sv[0], M.shape)))


def minimal_polynomial_degree(A, tol: RankTolerance = DEFAULT_TOL) -> int:
    A = _as_float_matrix(A, "A")
    n = A.shape[0]
    cols = []
    P = np.eye(n)
    for d in range(n + 1):
        v = P.ravel()
        norm = np.linalg.norm(v)
        # unit columns: linear dependence is scale-free, and powers may shrink or blow up
        cols.append(v / norm if norm > 0 else v)
        if d >= 1 and numerical_rank(np.column_stack(cols), tol) < d + 1:
            return d
        P = P @ A
    return n


def controllability_rank(sys: LinearSystem, tol: RankTolerance = DEFAULT_TOL) -> int:
    blocks = [P @ sys.B for P in matrix_powers(sys.A, sys.n)]
    return numerical_rank(np.hstack(blocks), tol)


def sparse_controllability_check(
    sys: LinearSystem, s: int, tol: RankTolerance = DEFAULT_TOL
) -> SparseControllability:
    if s < 0 or s > sys.m:
        raise InputError(f"s must lie in [0, {sys.m}], got {s}")
    if s == 0:
        return SparseControllability(False, None, None, "zero_sparsity")
    n = sys.n
    # more than n inputs per step never help, and n - s + 1 would go non-positive
    s_eff = min(s, n)
    K_lower = math.ceil(n / s_eff)
    q = minimal_polynomial_degree(sys.A, tol)
    K_upper = min(q * math.ceil(numerical_rank(sys.B, tol) / s_eff), n - s_eff + 1)
    if controllability_rank(sys, tol) < n:
        return SparseControllability(False, K_lower, K_upper, "not_controllable")
    if s < n - numerical_rank(sys.A, tol):
        return SparseControllability(False, K_lower, K_upper, "sparsity_below_rank_deficiency")
    return SparseControllability(True, K_lower, K_upper)


def _check_schedule(sys: LinearSystem, schedule: ActuatorSchedule) -> None:
    for k, S in enumerate(schedule.sets):
        if S and S[-1] >= sys.m:
            raise InputError(f"S_{k} references actuator {S[-1]} but m = {sys.m}")


def controllability_matrix(sys: LinearSystem, schedule: ActuatorSchedule) -> np.ndarray:
    _check_schedule(sys, schedule)
    K = schedule.K
    powers = matrix_powers(sys.A, K)
    blocks = [powers[K - 1 - k] @ sys.B[:, list(S)] for k, S in enumerate(schedule.sets)]
    if not blocks:
        return np.zeros((sys.n, 0))
    return np.hstack(blocks)


def report_from_gramian(W: np.ndarray, rank: int) -> GramianReport:
    W = 0.5 * (W + W.T)
    lam = np.linalg.eigvalsh(W)
    trace_inverse = float(np.sum(1.0 / lam)) if rank == W.shape[0] else None
    W.setflags(write=False)
    return GramianReport(W, rank, trace_inverse, float(lam[0]), float(lam[-1]))


def gramian(
    sys: LinearSystem, schedule: ActuatorSchedule, tol: RankTolerance = DEFAULT_TOL
) -> GramianReport:
    R = controllability_matrix(sys, schedule)
    return report_from_gramian(R @ R.T, numerical_rank(R, tol))


def full_gramian(sys: LinearSystem, K: int, tol: RankTolerance = DEFAULT_TOL) -> GramianReport:
    """Gramian with every actuator active at every step."""
    return gramian(sys, ActuatorSchedule.full(sys.m, K), tol)


def avg_energy(report: GramianReport) -> float:
    if report.trace_inverse is None:
        raise NotControllableError(
            f"Gramian has rank {report.rank} < {report.W.shape[0]}; average energy is unbounded"
        )
    return report.trace_inverse


def regularized_energy(W, eps: float) -> float:
    """``trace((W + eps I)^-1)``, finite even when ``W`` is singular."""
    if not eps > 0:
        raise InputError("eps must be positive")
    W = np.asarray(W, dtype=float)
    lam = np.clip(np.linalg.eigvalsh(0.5 * (W + W.T)), 0.0, None)
    return float(np.sum(1.0 / (lam + eps)))


def compute_inputs(
    sys: LinearSystem,
    schedule: ActuatorSchedule,
    x0,
    xf,
    tol: RankTolerance = DEFAULT_TOL,
) -> PiecewiseSparseInput:
    """Minimum-norm inputs supported on ``schedule`` that steer ``x0`` to ``xf`` in ``K`` steps."""
    x0 = _as_float_matrix(x0, "x0", ndim=1)
    xf = _as_float_matrix(xf, "xf", ndim=1)
    if x0.shape != (sys.n,) or xf.shape != (sys.n,):
        raise InputError("x0 and xf must have length n")
    R = controllability_matrix(sys, schedule)
    rank = numerical_rank(R, tol)
    if rank < sys.n:
        raise NotControllableError(f"schedule spans rank {rank} < n = {sys.n}")
    K = schedule.K
    rhs = xf - np.linalg.matrix_power(sys.A, K) @ x0
    u_sel = np.linalg.pinv(R, rcond=tol.relative_tol * max(R.shape)) @ rhs
    U = np.zeros((K, sys.m))
    pos = 0
    for k, S in enumerate(schedule.sets):
        U[k, list(S)] = u_sel[pos:pos + len(S)]
        pos += len(S)
    return PiecewiseSparseInput(U, schedule)


def simulate(
    sys: LinearSystem,
    x0,
    inputs,
    noise: NoiseModel | None = None,
    seed: int | np.random.Generator | None = None,
) -> Trajectory:
    """Roll the system forward over the horizon defined by ``inputs``.

    ``inputs`` is a :class:`PiecewiseSparseInput` or a ``K x m`` array. With a
    noise model, ``v(k)`` enters every state update and ``w(k)`` every
    measurement; the draws are a deterministic function of ``seed``.
    Measurements ``y(0..K)`` are returned whenever ``C`` is set.
    """
    U = inputs.inputs if isinstance(inputs, PiecewiseSparseInput) else np.asarray(inputs, dtype=float)
    if U.ndim != 2 or U.shape[1] != sys.m:
        raise InputError(f"inputs must be K x {sys.m}, got {U.shape}")
    x = np.array(x0, dtype=float)
    if x.shape != (sys.n,):
        raise InputError("x0 must have length n")
    rng = None
    if noise is not None:
        if noise.Sigma_v.shape != (sys.n, sys.n):
            raise InputError("Sigma_v does not match n")
        if sys.C is not None and noise.Sigma_w.shape != (sys.p, sys.p):
            raise InputError("Sigma_w does not match p")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    K = U.shape[0]
    states = np.empty((K + 1, sys.n))
    states[0] = x
    ys = None if sys.C is None else np.empty((K + 1, sys.p))

    def measure(k, x):
        y = sys.C @ x
        if rng is not None:
            y = y + noise.measurement_factor @ rng.standard_normal(sys.p)
        ys[k] = y

    for k in range(K):
        if ys is not None:
            measure(k, x)
        x = sys.A @ x + sys.B @ U[k]
        if rng is not None:
            x = x + noise.process_factor @ rng.standard_normal(sys.n)
        states[k + 1] = x
    if ys is not None:
        measure(K, x)
    return Trajectory(states, ys)


def alpha_lower_bound(W_G0: GramianReport, W_full: GramianReport) -> float:
    """Ratio ``lambda_min(W_G0) / lambda_max(W)`` lower-bounding the supermodularity constant."""
    if not W_G0.full_rank:
        raise NotControllableError("initial schedule Gramian is rank deficient")
    return W_G0.lambda_min / W_full.lambda_max


def greedy_guarantee_bound(trace_inv_G0: float, E_star: float, alpha: float) -> float:
    """Greedy guarantee ``(1 - beta) E(G0) + beta E*`` with ``beta = min(alpha/2, alpha/(1+alpha))``."""
    if not alpha > 0:
        raise InputError("alpha must be positive")
    if E_star > trace_inv_G0:
        raise InputError("optimal cost E* cannot exceed the initial cost")
    beta = min(alpha / 2.0, alpha / (1.0 + alpha))
    return (1.0 - beta) * trace_inv_G0 + beta * E_star


def powers_times(A: np.ndarray, B: np.ndarray, count: int) -> list[np.ndarray]:
    """``[B, A B, ..., A^(count-1) B]`` without forming the powers of ``A``."""
    out = [np.array(B, dtype=float)]
    for _ in range(1, count):
        out.append(A @ out[-1])
    return out[:count]
