"""Small dense linear algebra: cyclic Jacobi eigensolver and pivoted LU.

Everything here works at desk scale (n <= ~40).  The Jacobi solver accepts
stacks of matrices with shape (..., n, n) and rotates the whole stack at
once, which is what makes multistart searches affordable.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100
LU_SINGULAR_TOL = 1e-10


class EigenNonConvergence(RuntimeError):
    """Jacobi sweeps hit the iteration cap before the off-diagonal mass vanished."""


class SingularMatrixError(np.linalg.LinAlgError):
    def __init__(self, message: str, rank: int):
        super().__init__(message)
        self.rank = rank


def _offdiag_norm(A: np.ndarray) -> np.ndarray:
    n = A.shape[-1]
    mask = ~np.eye(n, dtype=bool)
    return np.sqrt(np.sum(A[:, mask] ** 2, axis=-1))


def jacobi_eigh(A, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS, V0=None):
    """Eigen-decomposition of real symmetric matrices by cyclic Jacobi rotations.

    Returns ``(w, V)`` with eigenvalues ascending along the last axis and
    eigenvectors in the columns of ``V``, exactly like ``numpy.linalg.eigh``.
    Sweeps stop once the off-diagonal Frobenius mass is at most
    ``tol * ||A||_F`` for every matrix in the stack.

    ``V0`` (same stack shape) warm-starts the rotation from a previous
    eigenbasis; nearby matrices then converge in one or two sweeps.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {A.shape}")
    batch_shape = A.shape[:-2]
    n = A.shape[-1]
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    A = A.reshape(-1, n, n).copy()
    norms = np.sqrt(np.sum(A**2, axis=(-1, -2)))
    if V0 is None:
        V = np.broadcast_to(np.eye(n), A.shape).copy()
    else:
        V = np.asarray(V0, dtype=float).reshape(-1, n, n).copy()
        A = np.swapaxes(V, -1, -2) @ A @ V
        A = 0.5 * (A + np.swapaxes(A, -1, -2))

    for _ in range(max_sweeps + 1):
        if n < 2 or np.all(_offdiag_norm(A) <= tol * norms):
            break
        for P, Q in _round_robin(n):
            _rotate(A, V, P, Q)
    else:
        raise EigenNonConvergence(f"Jacobi did not converge in {max_sweeps} sweeps (n={n})")

    w = np.diagonal(A, axis1=-2, axis2=-1).copy()
    order = np.argsort(w, axis=-1, kind="stable")
    w = np.take_along_axis(w, order, axis=-1)
    V = np.take_along_axis(V, order[:, None, :], axis=-1)
    return w.reshape(batch_shape + (n,)), V.reshape(batch_shape + (n, n))


@lru_cache(maxsize=None)
def _round_robin(n: int) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
    """Tournament ordering: n - 1 rounds (n even) of disjoint index pairs covering every pair once."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(k - 1):
        pairs = [(players[i], players[k - 1 - i]) for i in range(k // 2)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0]
        rounds.append((np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return tuple(rounds)


def _rotate(A: np.ndarray, V: np.ndarray, P: np.ndarray, Q: np.ndarray) -> None:
    """Apply the Jacobi rotations for the disjoint index pairs (P[k], Q[k]) at once."""
    apq = A[:, P, Q]
    nz = apq != 0.0
    if not nz.any():
        return
    app = A[:, P, P]
    aqq = A[:, Q, Q]
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        theta = np.where(nz, (aqq - app) / (2.0 * np.where(nz, apq, 1.0)), 0.0)
        big = np.abs(theta) > 1e150
        t = np.where(
            big,
            0.5 / np.where(big, theta, 1.0),
            np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0)),
        )
    t = np.where(nz, t, 0.0)
    c = 1.0 / np.sqrt(1.0 + t * t)
    s = t * c
    c1 = c[:, None, :]
    s1 = s[:, None, :]

    col_p = A[:, :, P]
    col_q = A[:, :, Q]
    A[:, :, P] = c1 * col_p - s1 * col_q
    A[:, :, Q] = s1 * col_p + c1 * col_q
    row_p = A[:, P, :]
    row_q = A[:, Q, :]
    c2 = c[:, :, None]
    s2 = s[:, :, None]
    A[:, P, :] = c2 * row_p - s2 * row_q
    A[:, Q, :] = s2 * row_p + c2 * row_q
    A[:, P, Q] = 0.0
    A[:, Q, P] = 0.0

    vp = V[:, :, P]
    vq = V[:, :, Q]
    V[:, :, P] = c1 * vp - s1 * vq
    V[:, :, Q] = s1 * vp + c1 * vq


def jacobi_eigvalsh(A, **kwargs) -> np.ndarray:
    return jacobi_eigh(A, **kwargs)[0]


def hermitian_embedding(H: np.ndarray) -> np.ndarray:
    """Real symmetric 2n x 2n matrix [[Re H, -Im H], [Im H, Re H]].

    Each eigenvalue of a Hermitian H appears twice in the embedding; an
    eigenvector (a, b) of the embedding corresponds to a + ib for H.
    """
    H = np.asarray(H)
    re, im = H.real, H.imag
    top = np.concatenate([re, -im], axis=-1)
    bottom = np.concatenate([im, re], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def numerical_rank(A, rtol: float = 1e-10) -> int:
    """Rank from singular values (square roots of Jacobi eigenvalues of A^T A)."""
    A = np.asarray(A)
    if A.size == 0:
        return 0
    if np.iscomplexobj(A):
        A = hermitian_embedding(A) if A.shape[0] == A.shape[1] else np.block(
            [[A.real, -A.imag], [A.imag, A.real]]
        )
        return numerical_rank(A, rtol) // 2
    w = np.clip(jacobi_eigvalsh(A.T @ A), 0.0, None)
    sv = np.sqrt(w)
    if sv[-1] == 0.0:
        return 0
    return int(np.sum(sv > max(rtol, 1e-8) * sv[-1]))


def lu_factor(A, singular_tol: float = LU_SINGULAR_TOL):
    """LU factorisation with partial (row) pivoting: P A = L U packed in one array.

    Raises SingularMatrixError when a pivot falls below
    ``singular_tol * ||A||_F``; the error carries the numerical rank.
    """
    A = np.array(A, dtype=np.result_type(A, float))
    n, n2 = A.shape
    if n != n2:
        raise ValueError(f"LU needs a square matrix, got {A.shape}")
    scale = np.linalg.norm(A)
    LU = A.copy()
    piv = np.arange(n)
    for k in range(n):
        i = k + int(np.argmax(np.abs(LU[k:, k])))
        if abs(LU[i, k]) <= singular_tol * scale or scale == 0.0:
            rank = numerical_rank(A, singular_tol)
            raise SingularMatrixError(f"matrix is singular (numerical rank {rank} of {n})", rank)
        if i != k:
            LU[[k, i]] = LU[[i, k]]
            piv[[k, i]] = piv[[i, k]]
        LU[k + 1 :, k] /= LU[k, k]
        LU[k + 1 :, k + 1 :] -= np.outer(LU[k + 1 :, k], LU[k, k + 1 :])
    return LU, piv


def lu_solve(factors, b) -> np.ndarray:
    LU, piv = factors
    x = np.array(b, dtype=np.result_type(LU, b))[piv]
    n = LU.shape[0]
    for k in range(n):
        x[k + 1 :] -= LU[k + 1 :, k] * x[k]
    for k in range(n - 1, -1, -1):
        x[k] = (x[k] - LU[k, k + 1 :] @ x[k + 1 :]) / LU[k, k]
    return x


def solve(A, b, singular_tol: float = LU_SINGULAR_TOL) -> np.ndarray:
    return lu_solve(lu_factor(A, singular_tol), b)
