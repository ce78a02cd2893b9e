"""Orthogonal matching pursuit and the worst-case OMP residual contraction."""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .core import numerical_rank
from .errors import InputError


@dataclass(frozen=True, eq=False)
class OmpResult:
    u: np.ndarray
    support: list[int]
    residual_norms: list[float]  # residual_norms[0] is ||target||


@dataclass(frozen=True)
class DecayFactorEstimate:
    value: float
    method: str  # "analytic" or "sampled"
    samples: int
    is_lower_estimate: bool


def _normalized_columns(B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(B, axis=0)
    usable = norms > 0
    if not usable.any():
        raise InputError("B has no nonzero columns")
    return B / np.where(usable, norms, 1.0), usable


def omp(B, target, s: int, tol: float = 1e-12) -> OmpResult:
    """Greedy ``s``-sparse approximation of ``target`` in the columns of ``B``.

    Each iteration adds the unselected column with the largest normalized
    correlation ``|B_j^T r| / ||B_j||`` (lowest index on ties), then refits
    all selected coefficients by least squares. Stops after ``s`` atoms, when
    ``||r|| <= tol * ||target||``, or when the residual is orthogonal to
    every remaining column. Zero columns are never selected.
    """
    B = np.asarray(B, dtype=float)
    y = np.asarray(target, dtype=float)
    if B.ndim != 2 or y.shape != (B.shape[0],):
        raise InputError(f"target must have length {B.shape[0]}")
    if s < 1:
        raise InputError("s must be at least 1")
    n, m = B.shape
    Bn, usable = _normalized_columns(B)

    y_norm = float(np.linalg.norm(y))
    residual_norms = [y_norm]
    u = np.zeros(m)
    if y_norm == 0.0:
        return OmpResult(u, [], residual_norms)

    support: list[int] = []
    eligible = usable.copy()
    Q = np.zeros((n, 0))
    r = y.copy()
    while len(support) < s and residual_norms[-1] > tol * y_norm and eligible.any():
        corr = np.where(eligible, np.abs(Bn.T @ r), -1.0)
        j = int(np.argmax(corr))
        if corr[j] <= 1e-12 * residual_norms[-1]:
            break
        b = B[:, j]
        q = b - Q @ (Q.T @ b)
        q -= Q @ (Q.T @ q)
        q_norm = np.linalg.norm(q)
        eligible[j] = False
        if q_norm <= 1e-12 * np.linalg.norm(b):
            continue
        Q = np.column_stack([Q, q / q_norm])
        support.append(j)
        r = y - Q @ (Q.T @ y)
        residual_norms.append(float(np.linalg.norm(r)))

    if support:
        B_S = B[:, support]
        u[support] = np.linalg.solve(Q.T @ B_S, Q.T @ y)
    return OmpResult(u, support, residual_norms)


def _distinct_directions(Bn: np.ndarray, usable: np.ndarray) -> np.ndarray:
    cols: list[np.ndarray] = []
    for b in Bn[:, usable].T:
        if not any(abs(abs(b @ c) - 1.0) <= 1e-12 for c in cols):
            cols.append(b)
    return np.column_stack(cols)


def _worst_correlation(V: np.ndarray, Bn: np.ndarray) -> np.ndarray:
    # rows of V are unit vectors
    return np.max((V @ Bn) ** 2, axis=1)


def _descend(v: np.ndarray, Bn: np.ndarray, steps: int) -> float:
    """Smoothed-max descent on the sphere; returns the best objective seen."""
    best = float(np.max((Bn.T @ v) ** 2))
    for t in range(steps):
        a = Bn.T @ v
        f = a * a
        beta = 50.0 / max(f.max(), 1e-300)
        w = np.exp(beta * (f - f.max()))
        w /= w.sum()
        grad = Bn @ (2.0 * w * a)
        grad -= (grad @ v) * v
        gn = np.linalg.norm(grad)
        if gn == 0.0:
            break
        v = v - (0.2 * best / np.sqrt(t + 1.0)) * grad / gn
        v /= np.linalg.norm(v)
        best = min(best, float(np.max((Bn.T @ v) ** 2)))
    return best


def decay_factor(
    B,
    sample_budget: int = 10_000,
    seed: int | None = 0,
    descent_steps: int = 50,
    refine: int = 10,
) -> DecayFactorEstimate:
    """``1 - inf_{||v||=1} max_j (B_j^T v)^2 / ||B_j||^2``.

    Exact when ``B`` does not span the space (value 1) or when its distinct
    column directions form an orthonormal basis (value ``1 - 1/n``).
    Otherwise the infimum is searched with ``sample_budget`` random unit
    vectors followed by local descent from the ``refine`` best; any found
    point only upper-bounds the infimum, so the returned value is a lower
    estimate of the true factor.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    Bn, usable = _normalized_columns(B)
    if numerical_rank(Bn[:, usable]) < n:
        return DecayFactorEstimate(1.0, "analytic", 0, False)
    D = _distinct_directions(Bn, usable)
    if D.shape[1] == n and np.allclose(D.T @ D, np.eye(n), rtol=0.0, atol=1e-10):
        return DecayFactorEstimate(1.0 - 1.0 / n, "analytic", 0, False)
    if sample_budget < 1:
        raise InputError("sample_budget must be positive for a non-orthogonal B")

    rng = np.random.default_rng(seed)
    best: list[tuple[float, int, np.ndarray]] = []  # max-heap of the `refine` smallest, via negation
    counter = 0
    chunk = 2048
    for start in range(0, sample_budget, chunk):
        V = rng.standard_normal((min(chunk, sample_budget - start), n))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        obj = _worst_correlation(V, D)
        for idx in np.argsort(obj, kind="stable")[:refine]:
            item = (-float(obj[idx]), counter, V[idx])
            counter += 1
            if len(best) < refine:
                heapq.heappush(best, item)
            elif item[0] > best[0][0]:
                heapq.heapreplace(best, item)

    inf_est = min(-item[0] for item in best)
    for _, _, v in sorted(best, key=lambda it: (-it[0], it[1])):
        inf_est = min(inf_est, _descend(v.copy(), D, descent_steps))
    return DecayFactorEstimate(1.0 - inf_est, "sampled", sample_budget, True)
