"""Kalman filtering, the steady-state Riccati pair and the sparse tracking loop.

The tracking controller estimates the state with a Kalman filter and, at each
step, picks an ``s``-sparse input with OMP so that ``A x_hat + B u`` lands as
close to the target ``xf`` as possible.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .core import LinearSystem, NoiseModel, _as_float_matrix, _psd_factor, controllability_rank
from .errors import BoundUndefinedError, ConvergenceError, InputError, NumericalError
from .sparse_recovery import omp

__all__ = [
    "NoiseModel",
    "KalmanState",
    "kalman_step",
    "RiccatiSolution",
    "steady_state_covariance",
    "MseBoundInputs",
    "mse_upper_bound",
    "mse_floor",
    "mse_floor_transposed",
    "Regularization",
    "TrackingRun",
    "track",
    "to_db",
]


def to_db(x):
    return 10.0 * np.log10(x)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


@dataclass(frozen=True, eq=False)
class KalmanState:
    x_hat: np.ndarray
    P: np.ndarray


def _require_measurements(sys: LinearSystem, noise: NoiseModel) -> None:
    if sys.C is None:
        raise InputError("system has no measurement matrix C")
    if noise.Sigma_v.shape != (sys.n, sys.n):
        raise InputError(f"Sigma_v must be {sys.n} x {sys.n}")
    if noise.Sigma_w.shape != (sys.p, sys.p):
        raise InputError(f"Sigma_w must be {sys.p} x {sys.p}")


def kalman_step(
    sys: LinearSystem, state: KalmanState, u_prev, y, noise: NoiseModel
) -> KalmanState:
    """One predict/update cycle using the input applied at the previous step."""
    A, B, C = sys.A, sys.B, sys.C
    if C is None:
        raise InputError("system has no measurement matrix C")
    x_pred = A @ state.x_hat + B @ np.asarray(u_prev, dtype=float)
    P_pred = _sym(A @ state.P @ A.T + noise.Sigma_v)
    S = _sym(C @ P_pred @ C.T + noise.Sigma_w)
    lam = np.linalg.eigvalsh(S)
    if lam[0] <= 1e-12 * max(lam[-1], np.finfo(float).tiny):
        raise NumericalError("innovation covariance is singular")
    K = np.linalg.solve(S, C @ P_pred).T  # P_pred C^T S^-1, using symmetry of S and P_pred
    x_new = x_pred + K @ (np.asarray(y, dtype=float) - C @ x_pred)
    P_new = _sym((np.eye(sys.n) - K @ C) @ P_pred)
    return KalmanState(x_new, P_new)


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Steady filtered covariance ``P`` and predicted covariance ``S``."""

    P: np.ndarray
    S: np.ndarray
    residual_P: float
    residual_S: float
    iterations: int

    @property
    def residual(self) -> float:
        return max(self.residual_P, self.residual_S)


def _riccati_map(A, C, Sigma_v, Sigma_w, P):
    S = _sym(A @ P @ A.T + Sigma_v)
    SC = S @ C.T
    P_next = _sym(S - SC @ np.linalg.solve(C @ SC + Sigma_w, SC.T))
    return S, P_next


def steady_state_covariance(
    sys: LinearSystem,
    noise: NoiseModel,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    check_hypotheses: bool = True,
    abs_tol: float = 1e-8,
) -> RiccatiSolution:
    """Fixed point of ``S = A P A^T + Sigma_v``, ``P = S - S C^T (C S C^T + Sigma_w)^-1 C S``.

    Iterates from ``P = Sigma_v`` until the Frobenius step is at most
    ``tol * (1 + ||P||_F)``. For large ``P`` that still leaves an absolute
    residual above ``abs_tol``, so iteration goes on while the step exceeds
    ``abs_tol`` and keeps shrinking. Warns when ``(A, Sigma_v^(1/2))`` is not
    controllable or ``(A, C)`` is not observable, since convergence to a
    unique stabilizing solution is then not guaranteed.
    """
    _require_measurements(sys, noise)
    A, C = sys.A, sys.C
    Sv, Sw = noise.Sigma_v, noise.Sigma_w
    if check_hypotheses:
        if controllability_rank(LinearSystem(A, _psd_factor(Sv))) < sys.n:
            warnings.warn("(A, Sigma_v^1/2) is not controllable", RuntimeWarning, stacklevel=2)
        if controllability_rank(sys.dual()) < sys.n:
            warnings.warn("(A, C) is not observable", RuntimeWarning, stacklevel=2)

    P = Sv.copy()
    step = math.inf
    polishing = False
    try:
        for it in range(1, max_iter + 1):
            S, P_next = _riccati_map(A, C, Sv, Sw, P)
            prev, step = step, float(np.linalg.norm(P_next - P))
            if polishing and step >= prev:
                # stagnated at roundoff
                break
            polishing = polishing or step <= tol * (1.0 + float(np.linalg.norm(P)))
            P = P_next
            if not np.all(np.isfinite(P)):
                raise ConvergenceError("Riccati iteration diverged", step, it)
            if polishing and step <= abs_tol:
                break
        else:
            raise ConvergenceError("Riccati iteration did not converge", step, max_iter)
    except np.linalg.LinAlgError:
        raise ConvergenceError("innovation covariance became singular", step, it) from None

    S = _sym(A @ P @ A.T + Sv)
    SC = S @ C.T
    res_S = float(np.linalg.norm(S - (A @ P @ A.T + Sv)))
    res_P = float(np.linalg.norm(P - (S - SC @ np.linalg.solve(C @ SC + Sw, SC.T))))
    return RiccatiSolution(P, S, res_P, res_S, it)


@dataclass(frozen=True, eq=False)
class MseBoundInputs:
    """Inputs of the steady-state tracking MSE bound.

    ``A`` is needed in full because the bound involves ``(A - I) xf`` and
    ``tr(A P A^T)`` besides ``||A||``.
    """

    xi: float
    s: int
    A: np.ndarray
    P_ss: np.ndarray
    Sigma_v: np.ndarray
    xf: np.ndarray
    eta: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.xi <= 1.0:
            raise InputError("xi must lie in [0, 1]")
        if self.s < 0:
            raise InputError("s must be non-negative")
        if self.eta is not None and self.eta < 0:
            raise InputError("eta must be non-negative")

    @cached_property
    def A_norm(self) -> float:
        return float(np.linalg.norm(self.A, 2))

    @property
    def chi(self) -> float:
        return 2.0 * self.xi ** self.s * self.A_norm ** 2

    def min_sparsity(self) -> float:
        """Smallest real ``s`` with ``2 xi^s ||A||^2 < 1`` (0 if any ``s`` works)."""
        a2 = 2.0 * self.A_norm ** 2
        if a2 < 1.0:
            return 0.0
        if self.xi == 0.0:
            return 0.0
        if self.xi >= 1.0:
            return math.inf
        return math.log(a2) / -math.log(self.xi)


def mse_upper_bound(inp: MseBoundInputs) -> float:
    """``eta + [2 xi^s ||(A-I) xf||^2 + tr(Sigma_v) + (1 + 3 xi^s) tr(A P A^T)] / (1 - chi)``.

    ``chi = 2 xi^s ||A||^2`` must be below 1; otherwise
    :class:`BoundUndefinedError` reports the minimum sparsity. With
    ``eta=None`` the slack is 5% of the remaining terms.
    """
    xs = inp.xi ** inp.s
    chi = inp.chi
    if chi >= 1.0:
        raise BoundUndefinedError(
            f"2 xi^s ||A||^2 = {chi:.4g} >= 1; need s > {inp.min_sparsity():.4g}",
            inp.min_sparsity(),
        )
    A = np.asarray(inp.A, dtype=float)
    xf = np.asarray(inp.xf, dtype=float)
    d = A @ xf - xf
    tracking = 2.0 * xs * float(d @ d) / (1.0 - chi)
    tr_APA = float(np.trace(A @ inp.P_ss @ A.T))
    estimation = (float(np.trace(inp.Sigma_v)) + (1.0 + 3.0 * xs) * tr_APA) / (1.0 - chi)
    eta = 0.05 * (tracking + estimation) if inp.eta is None else inp.eta
    return eta + tracking + estimation


def mse_floor(sys: LinearSystem, P, noise: NoiseModel) -> float:
    """``tr(Sigma_v) + tr(A P A^T)``, the steady MSE with unconstrained inputs."""
    A = sys.A
    return float(np.trace(noise.Sigma_v) + np.trace(A @ np.asarray(P) @ A.T))


def mse_floor_transposed(sys: LinearSystem, P, noise: NoiseModel) -> float:
    """``tr(Sigma_v) + tr(A^T P A)``, reported next to :func:`mse_floor` for comparison."""
    A = sys.A
    return float(np.trace(noise.Sigma_v) + np.trace(A.T @ np.asarray(P) @ A))


@dataclass(frozen=True, eq=False)
class Regularization:
    """State weight ``Q`` (PSD) and input weight ``R`` (positive definite)."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = _as_float_matrix(self.Q, "Q")
        R = _as_float_matrix(self.R, "R")
        for name, M in (("Q", Q), ("R", R)):
            if M.shape[0] != M.shape[1] or not np.allclose(M, M.T, rtol=0.0, atol=1e-12):
                raise InputError(f"{name} must be square and symmetric")
        if np.linalg.eigvalsh(Q)[0] < -1e-12:
            raise InputError("Q must be positive semidefinite")
        lam = np.linalg.eigvalsh(R)
        if lam[0] <= 1e-12 * max(lam[-1], 1.0):
            raise InputError("R must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True, eq=False)
class TrackingRun:
    """Monte Carlo record of the sparse tracking loop.

    ``states`` and ``estimates`` are ``trials x (horizon+1) x n`` (index 0 is
    the initial condition), ``inputs`` is ``trials x horizon x m`` holding
    ``u(0..horizon-1)``, and ``sq_error[t, k-1] = ||x(k) - xf||^2`` for
    ``k = 1..horizon``.
    """

    s: int
    states: np.ndarray
    estimates: np.ndarray
    inputs: np.ndarray
    sq_error: np.ndarray
    floor: float | None = None
    bound: float | None = None

    @property
    def trials(self) -> int:
        return self.sq_error.shape[0]

    @property
    def horizon(self) -> int:
        return self.sq_error.shape[1]

    @property
    def mse(self) -> np.ndarray:
        return self.sq_error.mean(axis=0)

    @property
    def mse_db(self) -> np.ndarray:
        return to_db(self.mse)

    @property
    def se(self) -> np.ndarray:
        if self.trials < 2:
            return np.full(self.horizon, np.nan)
        return self.sq_error.std(axis=0, ddof=1) / math.sqrt(self.trials)

    @property
    def steady_window(self) -> slice:
        """Last quarter of the horizon (at least one step)."""
        w = max(1, math.ceil(self.horizon / 4))
        return slice(self.horizon - w, self.horizon)

    @property
    def steady_per_trial(self) -> np.ndarray:
        return self.sq_error[:, self.steady_window].mean(axis=1)

    @property
    def steady_mse(self) -> float:
        return float(self.steady_per_trial.mean())

    @property
    def steady_se(self) -> float:
        if self.trials < 2:
            return math.nan
        return float(self.steady_per_trial.std(ddof=1) / math.sqrt(self.trials))

    @property
    def steady_mse_db(self) -> float:
        return float(to_db(self.steady_mse))

    def to_csv(self, dest=None) -> str:
        """Write ``step, mse, mse_db, bound, floor`` rows; returns the text."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "mse", "mse_db", "bound", "floor"])
        fmt = lambda v: "" if v is None else repr(float(v))
        for k, (mse, db) in enumerate(zip(self.mse, self.mse_db), start=1):
            w.writerow([k, repr(float(mse)), repr(float(db)), fmt(self.bound), fmt(self.floor)])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", newline="") as fh:
                fh.write(text)
        return text


def trial_generators(seed: int, trials: int) -> list[np.random.Generator]:
    """Independent counter-based generators, one per trial, derived from ``seed``."""
    return [np.random.Generator(np.random.Philox(ss)) for ss in np.random.SeedSequence(seed).spawn(trials)]


def track(
    sys: LinearSystem,
    noise: NoiseModel,
    xf,
    s: int,
    horizon: int,
    trials: int,
    seed: int,
    x0=None,
    reg: Regularization | None = None,
    xi: float | None = None,
    eta: float | None = None,
) -> TrackingRun:
    """Monte Carlo run of the Kalman + OMP tracking controller.

    At every step ``k`` the estimate ``x_hat(k)`` selects
    ``u(k) = omp(B, xf - A x_hat(k), s)`` (or, with ``reg``, OMP on the
    dictionary ``B^T Q B + R`` against ``B^T Q (xf - A x_hat(k))``); the plant
    then moves with process noise and the filter absorbs the new measurement.
    ``x_hat(0) = x(0)`` and ``P_0 = 0``. Trial ``t`` draws its noise from the
    ``t``-th child of ``seed``, so two calls with the same seed share noise
    paths (common random numbers across ``s``, ``x0``, ...).

    ``floor`` is evaluated from the steady Riccati solution and ``bound`` when
    ``xi`` is given and the bound is defined; otherwise they are ``None``.
    """
    _require_measurements(sys, noise)
    n, m = sys.n, sys.m
    if not 1 <= s <= m:
        raise InputError(f"s must lie in [1, {m}]")
    if horizon < 1 or trials < 1:
        raise InputError("horizon and trials must be positive")
    xf = _as_float_matrix(xf, "xf", ndim=1)
    x0 = np.zeros(n) if x0 is None else _as_float_matrix(x0, "x0", ndim=1)
    if xf.shape != (n,) or x0.shape != (n,):
        raise InputError("x0 and xf must have length n")
    if reg is not None and (reg.Q.shape != (n, n) or reg.R.shape != (m, m)):
        raise InputError("Q must be n x n and R must be m x m")

    A, B, C = sys.A, sys.B, sys.C
    if reg is None:
        dictionary, proj = B, None
    else:
        proj = B.T @ reg.Q
        dictionary = proj @ B + reg.R

    def control(x_hat):
        e = xf - A @ x_hat
        return omp(dictionary, e if proj is None else proj @ e, s).u

    Lv, Lw = noise.process_factor, noise.measurement_factor
    states = np.empty((trials, horizon + 1, n))
    estimates = np.empty((trials, horizon + 1, n))
    inputs = np.empty((trials, horizon, m))
    for t, rng in enumerate(trial_generators(seed, trials)):
        x = x0.copy()
        state = KalmanState(x0.copy(), np.zeros((n, n)))
        states[t, 0] = x
        estimates[t, 0] = state.x_hat
        u = control(state.x_hat)
        for k in range(1, horizon + 1):
            inputs[t, k - 1] = u
            x = A @ x + B @ u + Lv @ rng.standard_normal(n)
            y = C @ x + Lw @ rng.standard_normal(sys.p)
            state = kalman_step(sys, state, u, y, noise)
            states[t, k] = x
            estimates[t, k] = state.x_hat
            if k < horizon:
                u = control(state.x_hat)
    sq_error = np.sum((states[:, 1:] - xf) ** 2, axis=2)

    floor = bound = None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            ric = steady_state_covariance(sys, noise)
        floor = mse_floor(sys, ric.P, noise)
        if xi is not None:
            try:
                bound = mse_upper_bound(MseBoundInputs(xi, s, A, ric.P, noise.Sigma_v, xf, eta))
            except BoundUndefinedError:
                bound = None
    except ConvergenceError:
        pass
    return TrackingRun(s, states, estimates, inputs, sq_error, floor, bound)
