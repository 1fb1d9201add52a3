"""Communication topology: adjacency validation, Laplacian, leader-pinned
matrix and symmetric eigenvalue extremes.

The follower network is a static undirected graph given by a 0/1 adjacency
matrix; the leader is attached through a 0/1 pinning vector.  The pinned
matrix M = L + diag(leader_links) is positive definite exactly when the
follower graph is connected and at least one follower hears the leader,
which is what every certificate downstream relies on.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, TopologyError


@dataclass(frozen=True)
class Topology:
    """Validated follower graph plus leader pinning."""

    n: int
    adjacency: np.ndarray
    leader_links: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.leader_links, other.leader_links)
        )


@dataclass(frozen=True)
class SpectralExtremes:
    """Smallest/largest eigenvalue of a symmetric matrix, with the
    tolerance they were computed to."""

    lambda_min: float
    lambda_max: float
    tolerance: float


def build_topology(adjacency, leader_links) -> Topology:
    """Validate and freeze a follower adjacency matrix and pinning vector."""
    adj = np.asarray(adjacency, dtype=float)
    links = np.asarray(leader_links, dtype=float)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise TopologyError(f"adjacency must be square, got shape {adj.shape}")
    n = adj.shape[0]
    if n < 1:
        raise TopologyError("at least one follower is required")
    if links.shape != (n,):
        raise TopologyError(
            f"leader_links length {links.shape} does not match {n} followers")
    if not np.array_equal(adj, adj.T):
        raise TopologyError("adjacency must be symmetric")
    if np.any(np.diag(adj) != 0):
        raise TopologyError("adjacency diagonal must be zero (no self-loops)")
    if not np.isin(adj, (0.0, 1.0)).all():
        raise TopologyError("adjacency entries must be 0 or 1")
    if not np.isin(links, (0.0, 1.0)).all():
        raise TopologyError("leader_links entries must be 0 or 1")
    adj = adj.copy()
    links = links.copy()
    adj.flags.writeable = False
    links.flags.writeable = False
    return Topology(n=n, adjacency=adj, leader_links=links)


def laplacian(t: Topology) -> np.ndarray:
    """Graph Laplacian of the follower network: row sums are exactly zero."""
    lap = -t.adjacency.copy()
    np.fill_diagonal(lap, t.adjacency.sum(axis=1))
    return lap


def pinned_matrix(t: Topology) -> np.ndarray:
    """Laplacian plus diagonal leader pinning; symmetric by construction."""
    return laplacian(t) + np.diag(t.leader_links)


def is_connected(t: Topology) -> bool:
    """Breadth-first reachability over the follower graph."""
    n = t.n
    if n == 1:
        return True
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        i = stack.pop()
        for j in np.nonzero(t.adjacency[i])[0]:
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def eig_extremes_sym(m, tol: float = 1e-10, max_sweeps: int = 60) -> SpectralExtremes:
    """Extreme eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Deterministic: fixed sweep order, no pivot randomization.  Converges
    quadratically; each extreme is within `tol` of the true eigenvalue once
    the off-diagonal Frobenius norm falls below `tol`.
    """
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.allclose(a, a.T, rtol=0.0, atol=0.0):
        raise ValueError("matrix must be symmetric")
    vals = _jacobi_eigenvalues(a, tol, max_sweeps)
    return SpectralExtremes(lambda_min=float(vals[0]), lambda_max=float(vals[-1]),
                            tolerance=tol)


def _jacobi_eigenvalues(a: np.ndarray, tol: float, max_sweeps: int) -> np.ndarray:
    n = a.shape[0]
    if n == 1:
        return a.diagonal().copy()
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off <= tol:
            return np.sort(a.diagonal())
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                rot_p = c * a[:, p] - s * a[:, q]
                rot_q = s * a[:, p] + c * a[:, q]
                a[:, p] = rot_p
                a[:, q] = rot_q
                row_p = c * a[p, :] - s * a[q, :]
                row_q = s * a[p, :] + c * a[q, :]
                a[p, :] = row_p
                a[q, :] = row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
    raise NumericError(
        f"Jacobi eigenvalue iteration did not converge in {max_sweeps} sweeps")
