"""Sparse actuator and sensor scheduling.

Two schedulers are provided. :func:`controllable_schedule` walks the powers
``A^(K-1) B, ..., B`` from the top and keeps at most ``s`` linearly
independent columns per step, which yields a rank-``n`` schedule with exactly
``n`` pairs. :func:`rbn_greedy` then fills the remaining ``K s - n`` slots one
pair at a time, each time taking the pair that most reduces
``trace(W^-1)``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .core import (
    DEFAULT_TOL,
    ActuatorSchedule,
    LinearSystem,
    RankTolerance,
    gramian,
    numerical_rank,
    powers_times,
    simulate,
)
from .errors import InputError, NotControllableError, PreconditionError, SearchSpaceTooLarge

GREEDY_REFRESH_EVERY = 50


class SensorSchedule(ActuatorSchedule):
    """Sensor sets ``(S~_0, ..., S~_{K~-1})``; ``S~_k`` lists the rows of ``C`` read at time ``k``."""


@dataclass(frozen=True, eq=False)
class LISchedulerState:
    """Snapshot after processing power ``A^i B`` (time slot ``K - 1 - i``)."""

    i: int
    selected: frozenset[tuple[int, int]]
    basis: np.ndarray
    rank_AiB: int
    added: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class GreedyRun:
    schedule: ActuatorSchedule
    costs: list[float]
    added: list[tuple[int, int]]


def _argmin_first(values: np.ndarray, rtol: float = 1e-12) -> int:
    """Index of the minimum, preferring the lowest index among near-ties."""
    vmin = np.min(values)
    slack = rtol * max(abs(vmin), np.finfo(float).tiny)
    return int(np.flatnonzero(values <= vmin + slack)[0])


def _residuals(Q: np.ndarray, C: np.ndarray) -> np.ndarray:
    R = C - Q @ (Q.T @ C)
    # second pass: classical Gram-Schmidt loses orthogonality after one sweep
    return R - Q @ (Q.T @ R)


def _accept_threshold(C: np.ndarray, tol: RankTolerance) -> np.ndarray:
    return tol.relative_tol * max(C.shape) * np.linalg.norm(C, axis=0)


def _append_direction(Q: np.ndarray, r: np.ndarray) -> np.ndarray:
    q = r - Q @ (Q.T @ r)
    q /= np.linalg.norm(q)
    return np.column_stack([Q, q])


def _extend_basis(
    Q: np.ndarray, C: np.ndarray, limit: int, tol: RankTolerance
) -> tuple[list[int], np.ndarray]:
    R = _residuals(Q, C)
    thresh = _accept_threshold(C, tol)
    chosen: list[int] = []
    while len(chosen) < limit:
        rn = np.linalg.norm(R, axis=0)
        rn[chosen] = 0.0
        ok = rn > thresh
        if not ok.any():
            break
        # largest residual first (column pivoting); lowest index on ties
        j = int(np.argmax(np.where(ok, rn, -1.0)))
        Q = _append_direction(Q, R[:, j])
        q = Q[:, -1]
        R -= np.outer(q, q @ R)
        chosen.append(j)
    return chosen, Q


def li_extension(
    basis: np.ndarray | None,
    candidates,
    limit: int,
    tol: RankTolerance = DEFAULT_TOL,
) -> list[int]:
    """Indices of up to ``limit`` candidate columns that extend ``span(basis)``.

    ``basis`` has orthonormal columns (``None`` or zero columns for the empty
    span). Candidates are taken greedily by largest residual after projecting
    out the current span, which is column-pivoted Gram-Schmidt; a column is
    eligible only while its residual exceeds the rank tolerance relative to its
    own norm.
    """
    C = np.asarray(candidates, dtype=float)
    if limit < 0:
        raise InputError("limit must be non-negative")
    Q = np.zeros((C.shape[0], 0)) if basis is None else np.asarray(basis, dtype=float)
    chosen, _ = _extend_basis(Q, C, limit, tol)
    return chosen


def check_schedule_preconditions(
    sys: LinearSystem, s: int, K: int, tol: RankTolerance = DEFAULT_TOL
) -> None:
    """Raise :class:`PreconditionError` unless the controllability guarantee applies."""
    n = sys.n
    if s < 1:
        raise PreconditionError("sparsity", f"s = {s} must be at least 1")
    if s > sys.m:
        raise PreconditionError("sparsity", f"s = {s} exceeds the number of actuators m = {sys.m}")
    rank_B = numerical_rank(sys.B, tol)
    if rank_B < n:
        raise PreconditionError("rank_B", f"rank(B) = {rank_B} < n = {n}")
    rank_A = numerical_rank(sys.A, tol)
    if s < n - rank_A:
        raise PreconditionError("sparsity", f"s = {s} < n - rank(A) = {n - rank_A}")
    if K < math.ceil(n / s):
        raise PreconditionError("horizon", f"K = {K} < ceil(n/s) = {math.ceil(n / s)}")


def _energy_pick(
    Q: np.ndarray,
    W: np.ndarray,
    C: np.ndarray,
    limit: int,
    eps: float,
    tol: RankTolerance,
) -> tuple[list[int], np.ndarray, np.ndarray]:
    n = W.shape[0]
    thresh = _accept_threshold(C, tol)
    chosen: list[int] = []
    while len(chosen) < limit:
        rn = np.linalg.norm(_residuals(Q, C), axis=0)
        rn[chosen] = 0.0
        ok = rn > thresh
        if not ok.any():
            break
        lam, V = np.linalg.eigh(W + eps * np.eye(n))
        Minv = (V / lam) @ V.T
        X = Minv @ C
        cost = np.trace(Minv) - np.sum(X * X, axis=0) / (1.0 + np.sum(C * X, axis=0))
        j = _argmin_first(np.where(ok, cost, np.inf))
        c = C[:, j]
        Q = _append_direction(Q, _residuals(Q, c[:, None])[:, 0])
        W = W + np.outer(c, c)
        chosen.append(j)
    return chosen, Q, W


def iter_controllable_schedule(
    sys: LinearSystem,
    s: int,
    K: int,
    tol: RankTolerance = DEFAULT_TOL,
    eps: float | None = None,
) -> Iterator[LISchedulerState]:
    """Run the linearly-independent-column scheduler, yielding after each power.

    With ``eps`` set, the columns within each step are picked one by one to
    minimize ``trace((W + eps I)^-1)`` among the candidates that still extend
    the span. Iteration stops as soon as ``n`` pairs are selected.
    """
    check_schedule_preconditions(sys, s, K, tol)
    n = sys.n
    AB = powers_times(sys.A, sys.B, K)
    Q = np.zeros((n, 0))
    W = np.zeros((n, n))
    selected: set[tuple[int, int]] = set()
    for i in range(K - 1, -1, -1):
        k = K - 1 - i
        rank_i = numerical_rank(AB[i], tol)
        limit = max(0, min(s, rank_i - len(selected)))
        if eps is None:
            added, Q = _extend_basis(Q, AB[i], limit, tol)
        else:
            added, Q, W = _energy_pick(Q, W, AB[i], limit, eps, tol)
        selected.update((k, j) for j in added)
        yield LISchedulerState(i, frozenset(selected), Q, rank_i, tuple(added))
        if len(selected) >= n:
            break


def _finish(states: Iterator[LISchedulerState], K: int, s: int) -> ActuatorSchedule:
    last = None
    for last in states:
        pass
    return ActuatorSchedule.from_pairs(last.selected, K, s)


def controllable_schedule(
    sys: LinearSystem, s: int, K: int, tol: RankTolerance = DEFAULT_TOL
) -> ActuatorSchedule:
    """s-sparse schedule with exactly ``n`` pairs and a rank-``n`` controllability matrix.

    Requires ``rank(B) = n``, ``s >= max(1, n - rank(A))`` and
    ``K >= ceil(n / s)``; violations raise :class:`PreconditionError`.
    """
    return _finish(iter_controllable_schedule(sys, s, K, tol), K, s)


def default_energy_eps(sys: LinearSystem) -> float:
    return 1e-6 * sys.n / float(np.sum(sys.B * sys.B))


def energy_aware_controllable_schedule(
    sys: LinearSystem,
    s: int,
    K: int,
    eps: float | None = None,
    tol: RankTolerance = DEFAULT_TOL,
) -> ActuatorSchedule:
    if eps is None:
        eps = default_energy_eps(sys)
    if not eps > 0:
        raise InputError("eps must be positive")
    return _finish(iter_controllable_schedule(sys, s, K, tol, eps=eps), K, s)


def greedy_candidate_cost(W_inv, column) -> float:
    """``trace((W + c c^T)^-1)`` from ``W^-1`` by a rank-one (Sherman-Morrison) update."""
    W_inv = np.asarray(W_inv, dtype=float)
    c = np.asarray(column, dtype=float)
    w = W_inv @ c
    return float(np.trace(W_inv) - (w @ w) / (1.0 + c @ w))


def _inverse_psd(W: np.ndarray) -> np.ndarray:
    lam, V = np.linalg.eigh(0.5 * (W + W.T))
    return (V / lam) @ V.T


def rbn_greedy_trace(
    sys: LinearSystem,
    s: int,
    K: int,
    G0: ActuatorSchedule,
    tol: RankTolerance = DEFAULT_TOL,
    refresh_every: int = GREEDY_REFRESH_EVERY,
) -> GreedyRun:
    """Greedy energy-reducing completion of ``G0``, with the per-iteration cost history.

    ``costs[0]`` is ``trace(W_G0^-1)`` and ``costs[r]`` the cost after the
    ``r``-th accepted pair. Candidate costs use rank-one updates of ``W^-1``
    and of ``W^-1 C`` over the whole pool; everything is refactorized from
    scratch every ``refresh_every`` accepted pairs.
    """
    if G0.K != K:
        raise InputError(f"G0 has horizon {G0.K}, expected {K}")
    if any(len(S) > s for S in G0.sets):
        raise InputError("G0 violates the sparsity budget")
    report = gramian(sys, G0, tol)
    if not report.full_rank:
        raise NotControllableError(
            f"initial schedule has rank {report.rank} < n = {sys.n}; trace(W^-1) is undefined"
        )

    AB = powers_times(sys.A, sys.B, K)
    taken = set(G0.pairs())
    counts = [len(S) for S in G0.sets]
    pool = [(k, j) for k in range(K) if counts[k] < s for j in range(sys.m) if (k, j) not in taken]
    if not pool:
        return GreedyRun(ActuatorSchedule(G0.sets, s), [report.trace_inverse], [])
    pool_k = np.array([k for k, _ in pool])
    C = np.column_stack([AB[K - 1 - k][:, j] for k, j in pool])
    active = np.ones(len(pool), dtype=bool)

    W = np.array(report.W)
    W_inv = _inverse_psd(W)

    def refresh():
        X = W_inv @ C
        return X, np.sum(C * X, axis=0), np.sum(X * X, axis=0), float(np.trace(W_inv))

    X, d, g, trace = refresh()
    costs = [trace]
    added: list[tuple[int, int]] = []
    while active.any():
        cost = np.where(active, trace - g / (1.0 + d), np.inf)
        p = _argmin_first(cost)
        k_star, j_star = pool[p]
        c = C[:, p]
        w = X[:, p].copy()
        den = 1.0 + d[p]
        t = w @ C
        W += np.outer(c, c)
        W_inv -= np.outer(w, w) / den
        X -= np.outer(w, t) / den
        d -= t * t / den
        g = np.sum(X * X, axis=0)
        trace -= (w @ w) / den

        added.append((k_star, j_star))
        taken.add((k_star, j_star))
        active[p] = False
        counts[k_star] += 1
        if counts[k_star] == s:
            active[pool_k == k_star] = False
        if len(added) % refresh_every == 0:
            W_inv = _inverse_psd(W)
            X, d, g, trace = refresh()
        costs.append(trace)

    return GreedyRun(ActuatorSchedule.from_pairs(taken, K, s), costs, added)


def rbn_greedy(
    sys: LinearSystem,
    s: int,
    K: int,
    G0: ActuatorSchedule,
    tol: RankTolerance = DEFAULT_TOL,
) -> ActuatorSchedule:
    return rbn_greedy_trace(sys, s, K, G0, tol).schedule


def feasible_set_size(m: int, K: int, s: int, base: ActuatorSchedule | None = None) -> int:
    total = 1
    for k in range(K):
        fixed = 0 if base is None else len(base.sets[k])
        free = m - fixed
        total *= sum(math.comb(free, l) for l in range(0, s - fixed + 1))
    return total


def optimal_energy_bruteforce(
    sys: LinearSystem,
    s: int,
    K: int,
    base: ActuatorSchedule | None = None,
    limit: int = 100_000,
    tol: RankTolerance = DEFAULT_TOL,
) -> tuple[float, ActuatorSchedule]:
    """Exhaustive minimum of ``trace(W_S^-1)`` over all feasible schedules containing ``base``.

    Raises :class:`SearchSpaceTooLarge` when more than ``limit`` schedules
    would have to be enumerated.
    """
    size = feasible_set_size(sys.m, K, s, base)
    if size > limit:
        raise SearchSpaceTooLarge(size, limit)
    AB = powers_times(sys.A, sys.B, K)
    per_step: list[list[tuple[tuple[int, ...], np.ndarray]]] = []
    for k in range(K):
        fixed = () if base is None else base.sets[k]
        free = [j for j in range(sys.m) if j not in fixed]
        options = []
        for l in range(0, s - len(fixed) + 1):
            for extra in itertools.combinations(free, l):
                S = tuple(sorted(fixed + extra))
                cols = AB[K - 1 - k][:, list(S)]
                options.append((S, cols @ cols.T))
        per_step.append(options)

    best, best_sets = math.inf, None
    for combo in itertools.product(*per_step):
        W = sum(G for _, G in combo)
        lam = np.linalg.eigvalsh(W)
        # eigenvalues of W are squared singular values of R_S
        if lam[0] <= (tol.relative_tol * sys.n) ** 2 * max(lam[-1], 0.0):
            continue
        cost = float(np.sum(1.0 / lam))
        if cost < best:
            best, best_sets = cost, tuple(S for S, _ in combo)
    if best_sets is None:
        raise NotControllableError("no feasible schedule reaches rank n")
    return best, ActuatorSchedule(best_sets, s)


def observability_matrix(sys: LinearSystem, schedule: SensorSchedule | ActuatorSchedule) -> np.ndarray:
    """Rows ``C[S~_k] A^k`` stacked over ``k``."""
    if sys.C is None:
        raise InputError("system has no measurement matrix C")
    blocks = []
    CAk = sys.C
    for k, S in enumerate(schedule.sets):
        if S and S[-1] >= sys.p:
            raise InputError(f"sensor index {S[-1]} out of range for p = {sys.p}")
        blocks.append(CAk[list(S)])
        CAk = CAk @ sys.A
    if not blocks:
        return np.zeros((0, sys.n))
    return np.vstack(blocks)


def sensor_schedule(
    sys: LinearSystem, s_tilde: int, K_tilde: int, tol: RankTolerance = DEFAULT_TOL
) -> SensorSchedule:
    """Observability-guaranteeing sensor schedule, via the scheduler on ``(A^T, C^T)``.

    The dual controllability matrix pairs slot ``k`` with ``(A^T)^(K~-1-k)``
    while observation at time ``k`` sees ``A^k``, so the dual schedule is read
    in reverse.
    """
    if sys.C is None:
        raise InputError("system has no measurement matrix C")
    if s_tilde < 1:
        raise PreconditionError("sparsity", f"s~ = {s_tilde} must be at least 1")
    rank_C = numerical_rank(sys.C, tol)
    if rank_C < sys.n:
        raise PreconditionError("rank_C", f"rank(C) = {rank_C} < n = {sys.n}")
    dual = controllable_schedule(sys.dual(), s_tilde, K_tilde, tol)
    return SensorSchedule(tuple(reversed(dual.sets)), s_tilde)


def estimate_x0(
    sys: LinearSystem,
    schedule: SensorSchedule | ActuatorSchedule,
    measurements: Sequence,
    applied_inputs=None,
    tol: RankTolerance = DEFAULT_TOL,
) -> np.ndarray:
    """Minimum-norm least-squares initial state from scheduled measurements.

    ``measurements[k]`` is either the full output ``y(k)`` (length ``p``) or
    just the scheduled entries ``y(k)[S~_k]``. The response to the known
    ``applied_inputs`` (``u(0), u(1), ...``) is subtracted before solving.
    """
    if sys.C is None:
        raise InputError("system has no measurement matrix C")
    K = schedule.K
    if len(measurements) < K:
        raise InputError(f"need {K} measurement vectors, got {len(measurements)}")
    forced = np.zeros((K, sys.n))
    if applied_inputs is not None and K > 1:
        U = np.asarray(applied_inputs, dtype=float)
        if U.ndim != 2 or U.shape[1] != sys.m or U.shape[0] < K - 1:
            raise InputError(f"applied_inputs must be at least {K - 1} x {sys.m}")
        free_sys = LinearSystem(sys.A, sys.B)
        forced = simulate(free_sys, np.zeros(sys.n), U[: K - 1]).states

    rows = []
    for k, S in enumerate(schedule.sets):
        y = np.asarray(measurements[k], dtype=float).reshape(-1)
        if y.shape[0] == sys.p:
            y = y[list(S)]
        elif y.shape[0] != len(S):
            raise InputError(f"measurement {k} has length {y.shape[0]}, expected {sys.p} or {len(S)}")
        rows.append(y - sys.C[list(S)] @ forced[k])
    y_stack = np.concatenate(rows) if rows else np.zeros(0)
    O = observability_matrix(sys, schedule)
    if O.shape[0] == 0:
        return np.zeros(sys.n)
    return np.linalg.pinv(O, rcond=tol.relative_tol * max(O.shape)) @ y_stack
