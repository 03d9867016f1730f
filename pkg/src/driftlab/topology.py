"""Combination matrices for multi-agent averaging and their spectral structure.

A combination matrix is a symmetric doubly-stochastic K x K weight matrix
whose entry ``a[l, k]`` scales information sent from agent ``l`` to agent
``k``. Every valid matrix here mixes over a strongly connected graph with at
least one self-loop, which pins its Perron vector to the uniform vector and
keeps every other eigenvalue strictly inside the unit circle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import householder_basis, jacobi_eigh, sorted_eigh
from .exceptions import NonConvergenceError, TopologyError

STOCHASTIC_TOL = 1e-12


@dataclass(frozen=True)
class Graph:
    """Undirected agent graph given by a symmetric boolean adjacency."""

    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=bool)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise TopologyError("adjacency must be a square matrix")
        if adj.shape[0] < 1:
            raise TopologyError("graph needs at least one node")
        if not np.array_equal(adj, adj.T):
            raise TopologyError("adjacency must be symmetric")
        object.__setattr__(self, "adjacency", adj)

    @property
    def K(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, K: int, edges) -> "Graph":
        if K < 1:
            raise TopologyError("graph needs at least one node")
        adj = np.zeros((K, K), dtype=bool)
        for edge in edges:
            i, j = int(edge[0]), int(edge[1])
            if not (0 <= i < K and 0 <= j < K):
                raise TopologyError(f"edge ({i}, {j}) out of range for K={K}")
            adj[i, j] = adj[j, i] = True
        return cls(adj)

    @classmethod
    def ring(cls, K: int) -> "Graph":
        if K < 1:
            raise TopologyError("graph needs at least one node")
        return cls.from_edges(K, [(k, (k + 1) % K) for k in range(K)] if K > 1 else [])


def random_connected_graph(K: int, p: float = 0.3, seed: int | None = None,
                           max_tries: int = 1000) -> Graph:
    """Seeded Erdos-Renyi-style adjacency, resampled until connected."""
    if K < 1:
        raise TopologyError("graph needs at least one node")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        upper = rng.random((K, K)) < p
        adj = np.triu(upper, k=1)
        adj = adj | adj.T
        if _is_connected(adj | np.eye(K, dtype=bool)):
            return Graph(adj)
    raise TopologyError(f"no connected graph found in {max_tries} draws (p={p})")


def _is_connected(positive: np.ndarray) -> bool:
    """Breadth-first reachability on the positive-entry pattern."""
    K = positive.shape[0]
    seen = np.zeros(K, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        node = stack.pop()
        for nbr in np.flatnonzero(positive[node]):
            if not seen[nbr]:
                seen[nbr] = True
                stack.append(int(nbr))
    return bool(seen.all())


@dataclass(frozen=True)
class CombinationMatrix:
    """Symmetric doubly-stochastic mixing weights over a connected graph."""

    A: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "A", np.ascontiguousarray(self.A, dtype=float))

    @property
    def K(self) -> int:
        return self.A.shape[0]

    def to_csv(self, path) -> None:
        """Row-major CSV export with 17 significant digits."""
        np.savetxt(path, self.A, delimiter=",", fmt="%.17g")


@dataclass(frozen=True)
class ValidationReport:
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, (ok, _) in self.checks.items() if not ok]


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenstructure of a combination matrix.

    ``eigenvalues`` are ordered by descending magnitude with the Perron
    eigenvalue 1 first; ``V`` is orthogonal with first column equal to the
    normalized all-ones vector; ``V_alpha``/``P_alpha`` hold the remaining
    eigenvectors and sub-unit eigenvalues.
    """

    eigenvalues: np.ndarray
    V: np.ndarray

    @property
    def K(self) -> int:
        return self.V.shape[0]

    @property
    def V_alpha(self) -> np.ndarray:
        return self.V[:, 1:]

    @property
    def P_alpha(self) -> np.ndarray:
        return self.eigenvalues[1:]

    @property
    def spectral_gap(self) -> float:
        if self.K == 1:
            return 1.0
        return 1.0 - float(np.max(np.abs(self.P_alpha)))


def metropolis_weights(graph: Graph) -> np.ndarray:
    """Metropolis rule on a connected graph.

    The degree ``n_k`` counts the node itself; off-diagonal weights are
    ``1 / max(n_l, n_k)`` for linked pairs and the diagonal completes each
    column to one.
    """
    adj = graph.adjacency.copy()
    np.fill_diagonal(adj, True)
    if not _is_connected(adj):
        raise TopologyError("graph is not connected")
    K = graph.K
    degree = adj.sum(axis=1)  # includes the node itself
    A = np.zeros((K, K))
    for l in range(K):
        for k in range(l + 1, K):
            if adj[l, k]:
                A[l, k] = A[k, l] = 1.0 / max(degree[l], degree[k])
    np.fill_diagonal(A, 1.0 - A.sum(axis=0))
    return A


def build_combination_matrix(kind: str, K: int | None = None,
                             graph: Graph | None = None,
                             matrix: np.ndarray | None = None) -> CombinationMatrix:
    """Construct a combination matrix of the requested ``kind``.

    kind = "metropolis" requires ``graph``; "ring" applies the Metropolis
    rule to the K-cycle with self-loops; "centralized" is uniform averaging
    (1/K) 11^T; "custom" validates a user-supplied ``matrix``.
    """
    if kind == "metropolis":
        if graph is None:
            raise TopologyError("metropolis kind requires a graph")
        A = metropolis_weights(graph)
    elif kind == "ring":
        if K is None or K < 1:
            raise TopologyError("ring kind requires K >= 1")
        A = metropolis_weights(Graph.ring(K))
    elif kind == "centralized":
        if K is None or K < 1:
            raise TopologyError("centralized kind requires K >= 1")
        A = np.full((K, K), 1.0 / K)
    elif kind == "custom":
        if matrix is None:
            raise TopologyError("custom kind requires a matrix")
        A = np.asarray(matrix, dtype=float)
    else:
        raise TopologyError(f"unknown combination-matrix kind: {kind!r}")
    cm = CombinationMatrix(A=A, kind=kind)
    report = validate(cm)
    if not report.passed:
        raise TopologyError(f"invalid combination matrix: {report.failures()}")
    return cm


def validate(cm: CombinationMatrix | np.ndarray) -> ValidationReport:
    """Check every combination-matrix invariant; always returns a report."""
    A = cm.A if isinstance(cm, CombinationMatrix) else np.asarray(cm, dtype=float)
    checks = {}
    sym_err = float(np.abs(A - A.T).max())
    checks["symmetry"] = (sym_err <= STOCHASTIC_TOL, f"max asymmetry {sym_err:.2e}")
    row_err = float(np.abs(A.sum(axis=1) - 1.0).max())
    col_err = float(np.abs(A.sum(axis=0) - 1.0).max())
    checks["double_stochasticity"] = (
        max(row_err, col_err) <= STOCHASTIC_TOL,
        f"row-sum error {row_err:.2e}, column-sum error {col_err:.2e}")
    in_range = bool((A >= -STOCHASTIC_TOL).all() and (A <= 1.0 + STOCHASTIC_TOL).all())
    checks["entries_in_unit_interval"] = (in_range, "entries within [0, 1]")
    positive = A > 0.0
    connected = _is_connected(positive)
    checks["strong_connectivity"] = (connected, "reachability over positive entries")
    has_self_loop = bool(np.diag(A).max() > 0.0)
    checks["self_loop"] = (has_self_loop, "at least one positive diagonal entry")
    return ValidationReport(checks=checks)


def perron_vector(cm: CombinationMatrix, tol: float = 1e-13,
                  max_iter: int = 100_000) -> np.ndarray:
    """Perron vector of a valid combination matrix.

    Computed by power iteration from a non-uniform positive start as a
    cross-check; for any valid doubly-stochastic matrix the result is the
    uniform vector.
    """
    A = cm.A
    K = A.shape[0]
    if K == 1:
        return np.array([1.0])
    x = 1.0 + np.arange(K, dtype=float)
    x /= x.sum()
    for _ in range(max_iter):
        nxt = A @ x  # column sums are one, so the total mass stays one
        if np.abs(nxt - x).max() <= tol:
            x = nxt
            break
        x = nxt
    else:
        raise NonConvergenceError(
            "Perron power iteration did not converge; matrix is likely invalid")
    residual = np.abs(A @ x - x).max()
    if residual > 1e-10 or (x <= 0).any():
        raise NonConvergenceError(f"power iteration fixed point invalid "
                                  f"(residual {residual:.2e})")
    return x


def spectral_decompose(cm: CombinationMatrix) -> SpectralDecomposition:
    """Spectral decomposition with the Perron pair pinned analytically.

    The matrix is rotated into a basis whose first axis is the normalized
    all-ones vector (exact eigenvector of any doubly-stochastic matrix);
    Jacobi then diagonalizes the complementary (K-1) block. This keeps
    ``1^T V_alpha = 0`` exact up to roundoff regardless of degeneracies.
    """
    A = cm.A
    K = A.shape[0]
    ones_dir = np.full(K, 1.0 / np.sqrt(K))
    if K == 1:
        return SpectralDecomposition(eigenvalues=np.array([1.0]),
                                     V=np.array([[1.0]]))
    Q = householder_basis(ones_dir)
    B = Q.T @ A @ Q
    sub = 0.5 * (B[1:, 1:] + B[1:, 1:].T)  # symmetrize roundoff
    w, U = jacobi_eigh(sub)
    order = np.lexsort((-w, -np.abs(w)))
    w = w[order]
    U = U[:, order]
    V = np.empty((K, K))
    V[:, 0] = ones_dir
    V[:, 1:] = Q[:, 1:] @ U
    eigenvalues = np.concatenate(([1.0], w))
    return SpectralDecomposition(eigenvalues=eigenvalues, V=V)
