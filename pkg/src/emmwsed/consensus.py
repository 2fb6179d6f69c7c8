"""Random SU networks, Metropolis-Hastings weights and average consensus."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import csgraph, csr_matrix

MAX_REJECTIONS = 10_000
EPS_ABS = 1e-12


class NetworkConfigError(ValueError):
    """The requested (N, c) cannot produce a connected graph."""


@dataclass(frozen=True, eq=False)
class SensorNetwork:
    n_sus: int
    edges: tuple[tuple[int, int], ...]  # 0-based, i < j
    degrees: np.ndarray
    weights: np.ndarray

    @property
    def mean_degree(self) -> float:
        return float(self.degrees.mean()) if self.n_sus else 0.0

    def to_edge_list(self) -> str:
        """One ``"i j"`` line per edge, nodes numbered from 1."""
        return "".join(f"{i + 1} {j + 1}\n" for i, j in self.edges)

    def write_edge_list(self, path) -> None:
        Path(path).write_text(self.to_edge_list())


def edge_count(n_sus: int, connectivity: float) -> int:
    """Active links for connectivity c, rounded half up."""
    return int(math.floor(connectivity * n_sus * (n_sus - 1) / 2 + 0.5))


def is_connected(n_sus: int, edges) -> bool:
    if n_sus <= 1:
        return True
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    adj = csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])), shape=(n_sus, n_sus))
    n_comp, _ = csgraph.connected_components(adj, directed=False)
    return n_comp == 1


def metropolis_weights(n_sus: int, edges) -> np.ndarray:
    """Symmetric doubly stochastic W with w_ij = 1 / max(d_i, d_j) on edges."""
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    deg = np.bincount(edges.ravel(), minlength=n_sus)
    W = np.zeros((n_sus, n_sus))
    if len(edges):
        i, j = edges[:, 0], edges[:, 1]
        w = 1.0 / np.maximum(deg[i], deg[j])
        W[i, j] = w
        W[j, i] = w
    W[np.diag_indices(n_sus)] = 1.0 - W.sum(axis=1)
    return W


def build_network(n_sus: int, edges) -> SensorNetwork:
    edges = tuple(sorted((min(a, b), max(a, b)) for a, b in edges))
    arr = np.asarray(edges, dtype=int).reshape(-1, 2)
    deg = np.bincount(arr.ravel(), minlength=n_sus)
    return SensorNetwork(n_sus, edges, deg, metropolis_weights(n_sus, arr))


def generate_network(n_sus: int, connectivity: float, rng: np.random.Generator) -> SensorNetwork:
    """Uniformly random connected graph with round(c*N(N-1)/2) edges.

    Edge sets are drawn uniformly and rejected until connected.
    """
    if n_sus < 1:
        raise NetworkConfigError("need at least one SU")
    if not 0.0 < connectivity <= 1.0:
        raise NetworkConfigError(f"connectivity must lie in (0, 1], got {connectivity}")
    n_pairs = n_sus * (n_sus - 1) // 2
    n_edges = edge_count(n_sus, connectivity)
    if n_edges < n_sus - 1:
        raise NetworkConfigError(
            f"{n_edges} edges cannot connect {n_sus} SUs (connectivity {connectivity})")
    iu, ju = np.triu_indices(n_sus, k=1)
    for _ in range(MAX_REJECTIONS):
        pick = np.sort(rng.choice(n_pairs, size=n_edges, replace=False))
        edges = np.column_stack([iu[pick], ju[pick]])
        if is_connected(n_sus, edges):
            return build_network(n_sus, map(tuple, edges.tolist()))
    raise NetworkConfigError(
        f"no connected graph after {MAX_REJECTIONS} draws (N={n_sus}, c={connectivity})")


@dataclass
class ConsensusRun:
    trace: np.ndarray  # (iterations + 1, N), row k holds y(k)
    iterations: int
    consensus_value: float
    converged: bool

    @property
    def final(self) -> np.ndarray:
        return self.trace[-1]


def _deviation_ok(Y, target, tol):
    scale = np.maximum(np.abs(target), EPS_ABS)
    return np.max(np.abs(Y - target), axis=0) <= tol * scale


def run_consensus(initial, W, tol: float = 0.01, max_iter: int = 1000) -> ConsensusRun:
    """Iterate y(k) = W y(k-1) until every SU is within ``tol`` (relative) of the mean.

    Non-convergence after ``max_iter`` steps is reported via ``converged``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    y = np.asarray(initial, dtype=float)
    W = np.asarray(W, dtype=float)
    target = y.mean()
    trace = [y]
    k = 0
    converged = bool(_deviation_ok(y[:, None], target, tol)[0])
    while not converged and k < max_iter:
        y = W @ y
        k += 1
        trace.append(y)
        converged = bool(_deviation_ok(y[:, None], target, tol)[0])
    return ConsensusRun(np.array(trace), k, float(y.mean()), converged)


@dataclass
class ConsensusWindow:
    values: np.ndarray  # (D,) consensus value per window index
    iterations: np.ndarray  # (D,) iterations to tolerance per index
    converged: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))


def consensus_window(samples, W, tol: float = 0.01, max_iter: int = 1000) -> ConsensusWindow:
    """Column-wise consensus on an (N, D) matrix of per-SU windows.

    Equivalent to :func:`run_consensus` on each column, run jointly.
    """
    Y = np.asarray(samples, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    W = np.asarray(W, dtype=float)
    target = Y.mean(axis=0)
    iters = np.zeros(Y.shape[1], dtype=int)
    done = _deviation_ok(Y, target, tol)
    k = 0
    while not done.all() and k < max_iter:
        Y = W @ Y
        k += 1
        hit = ~done & _deviation_ok(Y, target, tol)
        iters[hit] = k
        done |= hit
    iters[~done] = k
    return ConsensusWindow(Y.mean(axis=0), iters, done)
