"""Ensembles with known injectivity behaviour.

``tight_ensemble`` splits the d coordinates into consecutive blocks of r rows
(plus one shorter block when r does not divide d).  Every pair of block t
reads only x_{T_t} through an identity submatrix, and the block's offsets
make its measurements invertible by a single linear solve.  That gives
d + floor(d/r) + eps pairs over R and 2d + floor(d/r) + eps over C, which
matches the lower bound when r | d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import numerical_rank
from .forward import measure, measurement_scale
from .model import Block, ConstructionMeta, Ensemble, Field, MeasurementPair, MetaKind


class OffsetError(ValueError):
    pass


def min_measurements(d: int, r: int, field: Field) -> int:
    """Smallest m for which an injective ensemble exists: d + floor(d/r) (+d over C)."""
    base = 2 * d if Field(field) is Field.COMPLEX else d
    return base + d // r


def tight_count(d: int, r: int, field: Field) -> int:
    """Size of the tight construction: the lower bound plus 1 when r does not divide d."""
    return min_measurements(d, r, field) + (0 if d % r == 0 else 1)


def default_spanning_offsets(r: int, field: Field) -> list[np.ndarray]:
    """Canonical offsets for one block of size r.

    Real: 0, e_1, ..., e_r.  Complex: i e_1, ..., i e_r, e_1, ..., e_r, 0.
    """
    field = Field(field)
    if r < 1:
        raise ValueError("r must be >= 1")
    eye = np.eye(r)
    if field is Field.REAL:
        return [np.zeros(r)] + [eye[k].copy() for k in range(r)]
    return [1j * eye[k] for k in range(r)] + [eye[k].astype(complex) for k in range(r)] + [np.zeros(r, complex)]


def recovery_matrix(offsets, field: Field) -> np.ndarray:
    """Rows [2 Re b_k^T, (2 Im b_k^T), 1] of the block linear system.

    ||z + b_k||^2 - ||b_k||^2 = s + 2 <b_k, z>_R with s = ||z||^2, so the
    block is recoverable exactly when this matrix is square and nonsingular.
    """
    B = np.array([np.asarray(b) for b in offsets])
    ones = np.ones((B.shape[0], 1))
    if Field(field) is Field.REAL:
        return np.hstack([2 * B.real, ones])
    return np.hstack([2 * B.real, 2 * B.imag, ones])


def check_offsets(offsets, r: int, field: Field) -> None:
    """Raise OffsetError unless the offsets satisfy the spanning condition."""
    field = Field(field)
    need = r + 1 if field is Field.REAL else 2 * r + 1
    if len(offsets) != need:
        raise OffsetError(f"need {need} offsets of length {r}, got {len(offsets)}")
    for k, b in enumerate(offsets, start=1):
        b = np.asarray(b)
        if b.shape != (r,):
            raise OffsetError(f"offset {k} has shape {b.shape}, expected ({r},)")
        if field is Field.REAL and np.iscomplexobj(b) and np.any(b.imag != 0):
            raise OffsetError(f"offset {k} is complex in a real construction")
    rank = numerical_rank(recovery_matrix(offsets, field))
    if rank < need:
        raise OffsetError(f"offsets do not span: recovery matrix has rank {rank} < {need}")


def _to_tuple(b: np.ndarray, field: Field) -> tuple:
    if field is Field.REAL:
        return tuple(float(v) for v in np.real(b))
    return tuple(complex(v) for v in b)


def tight_ensemble(d: int, r: int, field: Field = Field.REAL, offsets=None) -> Ensemble:
    """Block construction with m = d + floor(d/r) + eps (real) or 2d + floor(d/r) + eps (complex).

    ``offsets`` replaces the default offsets of the full-size blocks; a
    leftover block of size d mod r always uses the default family for its
    own size, zero-padded to length r.
    """
    field = Field(field)
    if d < 1 or r < 1:
        raise ValueError("d and r must be >= 1")
    if offsets is None:
        offsets = default_spanning_offsets(r, field)
    else:
        offsets = [np.asarray(b, dtype=field.dtype) for b in offsets]
        check_offsets(offsets, r, field)

    q, rem = divmod(d, r)
    pairs: list[MeasurementPair] = []
    blocks: list[Block] = []
    for t in range(q):
        rows = (t * r, (t + 1) * r)
        M = np.zeros((d, r), dtype=field.dtype)
        M[rows[0] : rows[1], :] = np.eye(r)
        start = len(pairs)
        for b in offsets:
            pairs.append(MeasurementPair(M, b))
        blocks.append(Block(rows, (start, len(pairs)), tuple(_to_tuple(b, field) for b in offsets)))
    if rem:
        rows = (q * r, d)
        M = np.zeros((d, r), dtype=field.dtype)
        M[rows[0] :, :rem] = np.eye(rem)
        small = default_spanning_offsets(rem, field)
        start = len(pairs)
        for b in small:
            padded = np.zeros(r, dtype=field.dtype)
            padded[:rem] = b
            pairs.append(MeasurementPair(M, padded))
        blocks.append(Block(rows, (start, len(pairs)), tuple(_to_tuple(b, field) for b in small)))
    meta = ConstructionMeta(MetaKind.TIGHT, tuple(blocks), epsilon_dr=0 if rem == 0 else 1)
    return Ensemble(field, d, r, tuple(pairs), meta)


def is_tight(E: Ensemble) -> bool:
    """True when E is exactly the tight construction its metadata describes."""
    if E.meta is None or E.meta.kind is not MetaKind.TIGHT:
        return False
    blocks = E.meta.blocks
    if not blocks or E.d % E.r and len(blocks) != E.d // E.r + 1:
        return False
    try:
        offsets = [np.array(b, dtype=E.field.dtype) for b in blocks[0].offsets] if blocks[0].size == E.r else None
        rebuilt = tight_ensemble(E.d, E.r, E.field, offsets)
    except (OffsetError, ValueError):
        return False
    return rebuilt == E


@dataclass(frozen=True)
class PerturbationWitness:
    """A slightly perturbed tight ensemble together with a collision for it."""

    original: Ensemble
    perturbed: Ensemble
    x: np.ndarray
    y: np.ndarray
    delta: float

    @property
    def distance(self) -> float:
        """Frobenius distance between the first matrices of both ensembles."""
        return float(np.linalg.norm(self.original.pairs[0].M - self.perturbed.pairs[0].M))

    @property
    def gap(self) -> float:
        return float(np.max(np.abs(measure(self.perturbed, self.x) - measure(self.perturbed, self.y))))

    @property
    def scale(self) -> float:
        return measurement_scale(measure(self.perturbed, self.x), measure(self.perturbed, self.y))


def _perturbation_offsets(r: int, field: Field) -> list[np.ndarray]:
    # b_1 must have a nonzero first entry and b_2.. a zero first entry
    # (real case); the complex default family already has that structure.
    base = default_spanning_offsets(r, field)
    if field is Field.REAL:
        base[0], base[1] = base[1], base[0]
    return base


def perturbed_ensemble(d: int, r: int, field: Field, delta: float) -> PerturbationWitness:
    """Injective tight ensemble plus a perturbation of size O(delta) that is not injective.

    Real: the first matrix gains delta * b_{1,1} at entry (2, 1);
    x = (b_{1,1}, -1/delta, 0, ...) and y = (-b_{1,1}, -1/delta, 0, ...) collide.
    Complex, r >= 2: M_1 gains i*delta at (1, 2) and -i*delta at (2, 1);
    x = (i, -1/(2 delta), 0, ...), y = (-i, -1/(2 delta), 0, ...).
    Complex, r = 1: M_1 gains -i*delta at (2, 1) and the collision is
    x = (i, -1/delta, 0, ...), y = (-i, -1/delta, 0, ...).
    """
    field = Field(field)
    if not delta > 0:
        raise ValueError("delta must be > 0")
    if d < 2:
        raise ValueError("perturbation needs d >= 2")
    if not 1 <= r <= d:
        raise ValueError("perturbation needs 1 <= r <= d")
    base = tight_ensemble(d, r, field, _perturbation_offsets(r, field))
    M1 = base.pairs[0].M.copy()
    b1 = base.pairs[0].b
    x = np.zeros(d, dtype=field.dtype)
    y = np.zeros(d, dtype=field.dtype)
    if field is Field.REAL:
        b11 = float(b1[0])
        M1[1, 0] += delta * b11
        x[0], x[1] = b11, -1.0 / delta
        y[0], y[1] = -b11, -1.0 / delta
    elif r >= 2:
        M1[0, 1] += 1j * delta
        M1[1, 0] -= 1j * delta
        x[0], x[1] = 1j, -1.0 / (2 * delta)
        y[0], y[1] = -1j, -1.0 / (2 * delta)
    else:
        M1[1, 0] -= 1j * delta
        x[0], x[1] = 1j, -1.0 / delta
        y[0], y[1] = -1j, -1.0 / delta
    pairs = (MeasurementPair(M1, b1),) + base.pairs[1:]
    meta = ConstructionMeta(MetaKind.PERTURBED, base.meta.blocks, base.meta.epsilon_dr, delta=float(delta))
    perturbed = Ensemble(field, d, r, pairs, meta)
    return PerturbationWitness(base, perturbed, x, y, float(delta))


def random_ensemble(d: int, r: int, m: int, field: Field, seed: int) -> Ensemble:
    """I.i.d. standard normal M_j and b_j (real and imaginary parts independent)."""
    field = Field(field)
    if min(d, r, m) < 1:
        raise ValueError("d, r, m must be >= 1")
    rng = np.random.default_rng(seed)
    if field is Field.REAL:
        Ms = rng.standard_normal((m, d, r))
        bs = rng.standard_normal((m, r))
    else:
        Ms = rng.standard_normal((m, d, r)) + 1j * rng.standard_normal((m, d, r))
        bs = rng.standard_normal((m, r)) + 1j * rng.standard_normal((m, r))
    meta = ConstructionMeta(MetaKind.RANDOM, seed=int(seed))
    return Ensemble.from_arrays(Ms, bs, field, meta)
