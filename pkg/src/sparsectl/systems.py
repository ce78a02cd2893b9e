"""Test-system generators: random graphs, edge-list files and input matrices."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .core import ActuatorSchedule, numerical_rank
from .errors import InputError, ParseError

log = logging.getLogger(__name__)

B_DISTRIBUTIONS = ("uniform01", "gaussian", "identity")


@dataclass(frozen=True)
class EdgeListGraph:
    """Undirected simple graph on vertices ``1..n``; edges are stored 1-based."""

    n: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.n < 1:
            raise InputError("graph needs at least one vertex")
        for u, v in self.edges:
            if u == v:
                raise InputError(f"self-loop at vertex {u}")
            if not (1 <= u <= self.n and 1 <= v <= self.n):
                raise InputError(f"edge ({u}, {v}) out of range 1..{self.n}")

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n))
        for u, v in self.edges:
            adj[u - 1, v - 1] = adj[v - 1, u - 1] = 1.0
        return adj


def laplacian_system(adj: np.ndarray) -> np.ndarray:
    """``A = I - L / n`` with ``L = D - Adj``; rows of ``A`` sum to one."""
    n = adj.shape[0]
    L = np.diag(adj.sum(axis=1)) - adj
    return np.eye(n) - L / n


def graph_to_system(g: EdgeListGraph) -> np.ndarray:
    return laplacian_system(g.adjacency())


def erdos_renyi_system(n: int, seed, p_edge: float | None = None) -> np.ndarray:
    """Laplacian dynamics of an undirected G(n, p) graph.

    ``p_edge`` defaults to ``2 ln(n) / n`` (capped at 1).
    """
    if n < 2:
        raise InputError("n must be at least 2")
    p = min(1.0, 2.0 * math.log(n) / n) if p_edge is None else float(p_edge)
    if not 0.0 <= p <= 1.0:
        raise InputError("p_edge must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, k=1)
    upper = rng.random(iu[0].size) < p
    adj = np.zeros((n, n))
    adj[iu[0][upper], iu[1][upper]] = 1.0
    adj += adj.T
    return laplacian_system(adj)


def parse_edge_list(text: str) -> EdgeListGraph:
    """Parse whitespace-separated ``u v`` lines (1-based, ``#`` comments).

    A ``# vertices: N`` comment fixes the vertex count; otherwise it is the
    largest index seen. Duplicate edges are merged.
    """
    declared = None
    edges: dict[tuple[int, int], None] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("#"):
            body = line[1:].strip()
            if body.lower().startswith("vertices:"):
                try:
                    declared = int(body.split(":", 1)[1])
                except ValueError:
                    raise ParseError(f"bad vertex count {body!r}", lineno) from None
                if declared < 1:
                    raise ParseError("vertex count must be positive", lineno)
            continue
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ParseError(f"expected 'u v', got {raw.strip()!r}", lineno)
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer vertex in {raw.strip()!r}", lineno) from None
        if u < 1 or v < 1 or (declared is not None and max(u, v) > declared):
            raise ParseError(f"vertex out of range in {raw.strip()!r}", lineno)
        if u == v:
            raise ParseError(f"self-loop at vertex {u}", lineno)
        edges[(min(u, v), max(u, v))] = None
    if not edges and declared is None:
        raise ParseError("no edges and no vertex count", None)
    n = declared if declared is not None else max(max(e) for e in edges)
    return EdgeListGraph(n, tuple(edges))


def load_edge_list(path) -> EdgeListGraph:
    return parse_edge_list(Path(path).read_text())


def zachary_karate_club() -> EdgeListGraph:
    """The bundled 34-member karate club friendship graph."""
    text = resources.files("sparsectl").joinpath("data/zachary_karate.txt").read_text()
    return parse_edge_list(text)


def _sample_b(rng: np.random.Generator, n: int, m: int, dist: str) -> np.ndarray:
    if dist == "uniform01":
        return rng.random((n, m))
    return rng.standard_normal((n, m))


def random_b(n: int, m: int, dist: str, seed) -> np.ndarray:
    """Seeded input matrix with i.i.d. ``uniform01`` or ``gaussian`` entries.

    ``identity`` gives ``[I I ...]``, which needs ``m`` to be a multiple of ``n``.

    When ``m >= n`` and the draw is not full row rank, one fresh draw is taken
    (with a warning); the second draw is returned as is.
    """
    if dist not in B_DISTRIBUTIONS:
        raise InputError(f"unknown B distribution {dist!r}; choose from {B_DISTRIBUTIONS}")
    if n < 1 or m < 1:
        raise InputError("n and m must be positive")
    if dist == "identity":
        if m % n:
            raise InputError("identity-block B needs m to be a multiple of n")
        return np.tile(np.eye(n), (1, m // n))
    rng = np.random.default_rng(seed)
    B = _sample_b(rng, n, m, dist)
    if m >= n and numerical_rank(B) < n:
        log.warning("random B was rank deficient; resampling once")
        B = _sample_b(rng, n, m, dist)
    return B


def random_feasible_schedule(m: int, K: int, s: int, seed) -> ActuatorSchedule:
    """Every ``S_k`` an independent uniformly random ``s``-subset of the actuators."""
    if not 0 <= s <= m:
        raise InputError(f"s must lie in [0, {m}]")
    if K < 1:
        raise InputError("K must be positive")
    rng = np.random.default_rng(seed)
    sets = tuple(tuple(sorted(int(j) for j in rng.choice(m, size=s, replace=False))) for _ in range(K))
    return ActuatorSchedule(sets, s)
