"""Signal recovery from measurement vectors.

Tight ensembles are inverted exactly, block by block, with one square linear
solve each.  Arbitrary ensembles go through a multistart Levenberg-Marquardt
fit, which is best-effort.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _linalg
from .forward import gradients, measure, real_dim
from .model import Ensemble, Field, MetaKind, from_real, random_signal, to_real
from .constructions import recovery_matrix


class RecoveryError(ValueError):
    pass


class SingularOffsetsError(RecoveryError):
    def __init__(self, message: str, rank: int, block: int | None = None):
        super().__init__(message)
        self.rank = rank
        self.block = block


class InconsistentMeasurements(RecoveryError):
    pass


class InconsistentMeasurementsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BlockSolution:
    z: np.ndarray
    s: float
    residual: float

    @property
    def consistent(self) -> bool:
        return self.residual <= 1e-8 * (1 + abs(self.s))


def block_recover(offsets, y_block, field: Field) -> BlockSolution:
    """Recover z from ||z + b_k||^2 = y_k for the block offsets b_k.

    Unknowns are (Re z, [Im z,] s) with s standing in for ||z||^2, so the
    system is linear: 2 <b_k, z>_R + s = y_k - ||b_k||^2.  The gap
    |s - ||z||^2| is returned as ``residual``; it vanishes exactly when the
    measurements come from an actual signal.
    """
    field = Field(field)
    offsets = [np.asarray(b, dtype=field.dtype) for b in offsets]
    y_block = np.asarray(y_block, dtype=float)
    A = recovery_matrix(offsets, field)
    if A.shape[0] != A.shape[1]:
        raise SingularOffsetsError(
            f"need a square system, got {A.shape[0]} offsets for {A.shape[1]} unknowns",
            rank=_linalg.numerical_rank(A),
        )
    if y_block.shape != (A.shape[0],):
        raise RecoveryError(f"expected {A.shape[0]} measurements, got {y_block.shape}")
    rhs = y_block - np.array([np.sum(np.abs(b) ** 2) for b in offsets])
    try:
        sol = _linalg.solve(A, rhs)
    except _linalg.SingularMatrixError as exc:
        raise SingularOffsetsError(
            f"offsets do not span: recovery matrix has rank {exc.rank} < {A.shape[0]}", exc.rank
        ) from None
    r = len(offsets[0])
    s = float(sol[-1])
    z = sol[:r] if field is Field.REAL else sol[:r] + 1j * sol[r : 2 * r]
    return BlockSolution(z, s, abs(s - float(np.sum(np.abs(z) ** 2))))


def tight_blocks(E: Ensemble, y) -> list[BlockSolution]:
    if E.meta is None or E.meta.kind not in (MetaKind.TIGHT, MetaKind.PERTURBED):
        raise RecoveryError("tight recovery needs an ensemble built by tight_ensemble")
    y = np.asarray(y, dtype=float)
    if y.shape != (E.m,):
        raise RecoveryError(f"expected {E.m} measurements, got shape {y.shape}")
    out = []
    for t, blk in enumerate(E.meta.blocks, start=1):
        try:
            out.append(block_recover(blk.offset_array(E.field), y[blk.pairs[0] : blk.pairs[1]], E.field))
        except SingularOffsetsError as exc:
            raise SingularOffsetsError(f"block {t}: {exc}", exc.rank, t) from None
    return out


def tight_recover(E: Ensemble, y, strict: bool = False) -> np.ndarray:
    """Invert the measurements of a tight ensemble exactly.

    Measurements that no signal can produce are flagged with an
    InconsistentMeasurementsWarning, or raised as InconsistentMeasurements
    when ``strict``.
    """
    blocks = tight_blocks(E, y)
    x = np.zeros(E.d, dtype=E.field.dtype)
    bad = []
    for t, (blk, sol) in enumerate(zip(E.meta.blocks, blocks), start=1):
        x[blk.rows[0] : blk.rows[1]] = sol.z
        if not sol.consistent:
            bad.append(t)
    if bad:
        msg = f"measurements are not realizable (blocks {bad} inconsistent)"
        if strict:
            raise InconsistentMeasurements(msg)
        warnings.warn(msg, InconsistentMeasurementsWarning, stacklevel=2)
    return x


@dataclass
class RecoveryReport:
    x: np.ndarray
    success: bool
    residual: float
    iterations: int
    restarts: int
    best_restart: int
    tol: float


def _lm_fit(E: Ensemble, y: np.ndarray, u: np.ndarray, max_iter: int, target: float):
    """Levenberg-Marquardt on r(u) = y(u) - y; returns (u, ||r||, iterations)."""
    n = u.shape[0]
    eye = np.eye(n)

    def residual(u):
        return measure(E, from_real(u, E.field)) - y

    res = residual(u)
    cost = float(res @ res)
    mu = None
    it = 0
    for it in range(1, max_iter + 1):
        if np.sqrt(cost) <= target:
            break
        J = 2 * gradients(E, u)  # (m, n) residual Jacobian
        JtJ = J.T @ J
        g = J.T @ res
        if mu is None:
            mu = 1e-3 * max(np.trace(JtJ) / n, 1e-12)
        accepted = False
        while mu < 1e16:
            try:
                step = _linalg.solve(JtJ + mu * eye, -g, singular_tol=1e-14)
            except _linalg.SingularMatrixError:
                mu *= 10
                continue
            trial = u + step
            res_t = residual(trial)
            cost_t = float(res_t @ res_t)
            if cost_t < cost:
                u, res, cost = trial, res_t, cost_t
                mu /= 10
                accepted = True
                break
            mu *= 10
        if not accepted or np.linalg.norm(step) <= 1e-15 * (1 + np.linalg.norm(u)):
            break
    return u, float(np.sqrt(cost)), it


def lsq_recover(
    E: Ensemble,
    y,
    restarts: int = 20,
    max_iter: int = 200,
    tol: float = 1e-10,
    seed: int = 0,
    init_scale: float | None = None,
) -> RecoveryReport:
    """Multistart Levenberg-Marquardt fit of a signal to measurements.

    Succeeds when ||measure(E, x) - y|| <= tol * (1 + ||y||).  All restarts
    run; the reported one is the best by (success, residual, restart index).
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (E.m,):
        raise RecoveryError(f"expected {E.m} measurements, got shape {y.shape}")
    target = tol * (1 + float(np.linalg.norm(y)))
    rng = np.random.default_rng(seed)
    if init_scale is None:
        # rough signal size from the data: y_j ~ ||M_j||^2 ||x||^2
        mass = float(np.mean(np.sum(np.abs(E.Ms) ** 2, axis=(1, 2)))) or 1.0
        init_scale = max(1.0, float(np.sqrt(np.mean(y) / mass)))
    best = None
    total_iter = 0
    for k in range(restarts):
        u0 = to_real(random_signal(rng, E.d, E.field)) * init_scale / np.sqrt(real_dim(E) / E.d)
        u, res, it = _lm_fit(E, y, u0, max_iter, target)
        total_iter += it
        key = (not res <= target, res, k)
        if best is None or key < best[0]:
            best = (key, u, res)
    (_, _, k_best), u, res = best
    return RecoveryReport(from_real(u, E.field), res <= target, res, total_iter, restarts, k_best, tol)
