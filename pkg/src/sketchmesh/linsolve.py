"""Sparse linear least squares with reusable factorizations.

Solves min ||Ax - b||^2 through the regularized normal equations
(A'A + eps*I) x = A'b with a direct sparse factorization, so one
decomposition serves any number of right-hand sides (the interactive
solves re-use it on every handle drag). The elimination ordering is
pinned (COLAMD) to keep solutions bitwise reproducible on a platform.
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

REGULARIZATION = 1e-9  # x trace(A'A)/n added to the diagonal


class RankDeficiencyError(ValueError):
    """Normal matrix numerically singular beyond regularization."""

    def __init__(self, nullity: int):
        self.nullity = nullity
        super().__init__(
            f"system is rank-deficient (estimated null-space dimension {nullity})"
        )


def from_triples(rows: int, cols: int, triples) -> sparse.csr_matrix:
    """Build a matrix from (row, col, value) triples; duplicate entries are
    summed, magnitudes below 1e-15 dropped."""
    triples = list(triples)
    if triples:
        i, j, v = zip(*triples)
    else:
        i, j, v = [], [], []
    m = sparse.csr_matrix(
        (np.asarray(v, dtype=np.float64), (i, j)), shape=(rows, cols)
    )
    m.sum_duplicates()
    m.data[np.abs(m.data) < 1e-15] = 0.0
    m.eliminate_zeros()
    return m


class Factorization:
    """Opaque reusable decomposition of the regularized normal matrix.

    Immutable after construction; `solve` is deterministic (identical b
    gives bitwise-identical x).
    """

    def __init__(self, a: sparse.csr_matrix):
        a = sparse.csr_matrix(a)
        if a.shape[0] < a.shape[1]:
            raise ValueError(
                f"need rows >= cols, got {a.shape[0]} x {a.shape[1]}"
            )
        self._at = a.T.tocsr()
        ata = (self._at @ a).tocsc()
        self._ata_unreg = ata.tocsr()
        n = a.shape[1]
        eps = REGULARIZATION * (ata.diagonal().sum() / max(n, 1))
        ata = ata + eps * sparse.identity(n, format="csc")
        self.shape = a.shape
        try:
            self._lu = splu(ata, permc_spec="COLAMD")
        except RuntimeError as exc:  # SuperLU reports exact singularity
            raise RankDeficiencyError(_estimate_nullity(ata)) from exc
        # pivots at the regularization floor mean the direction is pinned by
        # eps alone: rank-deficient beyond what regularization should hide
        u_diag = np.abs(self._lu.U.diagonal())
        bad = int(np.sum(u_diag <= 8.0 * eps))
        if bad:
            raise RankDeficiencyError(bad)

    def solve(self, b: np.ndarray, refine_steps: int = 2) -> np.ndarray:
        """Least-squares solution for one or many right-hand-side columns.

        ``refine_steps`` rounds of iterative refinement against the
        unregularized normal equations cancel the diagonal-regularization
        bias (second order per step) while keeping its stabilizing effect
        on degenerate systems.
        """
        b = np.asarray(b, dtype=np.float64)
        squeeze = b.ndim == 1
        if squeeze:
            b = b[:, None]
        if b.shape[0] != self.shape[0]:
            raise ValueError(
                f"right-hand side has {b.shape[0]} rows, expected {self.shape[0]}"
            )
        atb = np.ascontiguousarray(self._at @ b)
        x = self._lu.solve(atb)
        for _ in range(refine_steps):
            residual = atb - self._ata_unreg @ x
            x = x + self._lu.solve(np.ascontiguousarray(residual))
        return x[:, 0] if squeeze else x


def factorize(a: sparse.csr_matrix) -> Factorization:
    return Factorization(a)


def solve_with(fact: Factorization, b: np.ndarray) -> np.ndarray:
    return fact.solve(b)


def least_squares(a: sparse.csr_matrix, b: np.ndarray) -> np.ndarray:
    """One-shot min ||Ax - b||^2 (factorize + solve)."""
    return Factorization(a).solve(b)


def _estimate_nullity(ata: sparse.csc_matrix) -> int:
    diag = np.abs(ata.diagonal())
    scale = diag.max() if diag.size else 1.0
    return max(1, int(np.sum(diag <= 1e-14 * scale)))
