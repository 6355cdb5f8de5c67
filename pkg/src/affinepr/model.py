"""Signals, measurement pairs and ensembles over R and C.

A measurement pair (M, b) with M of shape (d, r) and b of length r produces
the squared norm ||M^* x + b||^2 from a signal x of length d.  Signals are
plain numpy arrays (float64 for the real field, complex128 for the complex
field).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np


class Field(str, enum.Enum):
    REAL = "real"
    COMPLEX = "complex"

    @property
    def dtype(self):
        return np.float64 if self is Field.REAL else np.complex128

    @classmethod
    def of(cls, *arrays) -> "Field":
        return cls.COMPLEX if any(np.iscomplexobj(a) for a in arrays) else cls.REAL


class FieldMismatch(TypeError):
    pass


@dataclass(frozen=True, eq=False)
class MeasurementPair:
    M: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        M = np.array(self.M)
        b = np.array(self.b).reshape(-1)
        dtype = np.complex128 if (np.iscomplexobj(M) or np.iscomplexobj(b)) else np.float64
        M = M.astype(dtype)
        if M.ndim == 1:
            M = M.reshape(-1, 1)
        M.setflags(write=False)
        b = b.astype(dtype)
        b.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "b", b)

    @property
    def d(self) -> int:
        return self.M.shape[0]

    @property
    def r(self) -> int:
        return self.M.shape[1]

    @property
    def field(self) -> Field:
        return Field.of(self.M, self.b)

    def astype(self, field: Field) -> "MeasurementPair":
        return MeasurementPair(self.M.astype(field.dtype), self.b.astype(field.dtype))

    def __eq__(self, other):
        if not isinstance(other, MeasurementPair):
            return NotImplemented
        return (
            self.M.shape == other.M.shape
            and self.b.shape == other.b.shape
            and np.array_equal(self.M, other.M)
            and np.array_equal(self.b, other.b)
        )


class MetaKind(str, enum.Enum):
    TIGHT = "tight"
    PERTURBED = "perturbed"
    RANDOM = "random"
    CUSTOM = "custom"


@dataclass(frozen=True)
class Block:
    """One coordinate block T_t of a structured ensemble.

    ``rows`` and ``pairs`` are 0-based half-open ranges: the block reads
    signal entries ``rows[0]:rows[1]`` through pairs ``pairs[0]:pairs[1]``.
    ``offsets`` are the block's offset vectors, of length ``rows[1]-rows[0]``.
    """

    rows: tuple[int, int]
    pairs: tuple[int, int]
    offsets: tuple[tuple, ...]

    @property
    def size(self) -> int:
        return self.rows[1] - self.rows[0]

    def offset_array(self, field: Field) -> np.ndarray:
        return np.array(self.offsets, dtype=field.dtype).reshape(len(self.offsets), self.size)


@dataclass(frozen=True)
class ConstructionMeta:
    kind: MetaKind
    blocks: tuple[Block, ...] = ()
    epsilon_dr: int = 0
    delta: float | None = None
    seed: int | None = None


@dataclass(frozen=True, eq=False)
class Ensemble:
    """An ordered list of measurement pairs sharing (field, d, r).

    The constructor does not enforce consistency; call
    :func:`validate_ensemble` (or :meth:`check`) for a full report.
    """

    field: Field
    d: int
    r: int
    pairs: tuple[MeasurementPair, ...]
    meta: ConstructionMeta | None = None

    def __post_init__(self):
        object.__setattr__(self, "field", Field(self.field))
        object.__setattr__(self, "pairs", tuple(self.pairs))

    @classmethod
    def from_arrays(cls, Ms, bs, field: Field | None = None, meta=None) -> "Ensemble":
        Ms = np.asarray(Ms)
        bs = np.asarray(bs)
        if field is None:
            field = Field.of(Ms, bs)
        m, d, r = Ms.shape
        pairs = tuple(MeasurementPair(Ms[j], bs[j]) for j in range(m))
        return cls(field, d, r, pairs, meta)

    @property
    def m(self) -> int:
        return len(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __eq__(self, other):
        if not isinstance(other, Ensemble):
            return NotImplemented
        return (
            self.field == other.field
            and (self.d, self.r) == (other.d, other.r)
            and self.pairs == other.pairs
            and self.meta == other.meta
        )

    @cached_property
    def Ms(self) -> np.ndarray:
        """Stacked matrices, shape (m, d, r)."""
        self.check()
        out = np.array([p.M for p in self.pairs], dtype=self.field.dtype).reshape(self.m, self.d, self.r)
        out.setflags(write=False)
        return out

    @cached_property
    def bs(self) -> np.ndarray:
        """Stacked offsets, shape (m, r)."""
        self.check()
        out = np.array([p.b for p in self.pairs], dtype=self.field.dtype).reshape(self.m, self.r)
        out.setflags(write=False)
        return out

    @cached_property
    def lifted(self) -> np.ndarray:
        """Stacked lifted matrices A_j, shape (m, d+1, d+1)."""
        return lift_stack(self.Ms, self.bs)

    def check(self) -> None:
        report = validate_ensemble(self)
        if not report.ok:
            raise ValueError("invalid ensemble: " + "; ".join(report.errors))

    def without(self, index: int) -> "Ensemble":
        """The ensemble with pair ``index`` removed (construction metadata dropped)."""
        pairs = self.pairs[:index] + self.pairs[index + 1 :]
        return Ensemble(self.field, self.d, self.r, pairs, None)

    def signal(self, x) -> np.ndarray:
        return as_signal(x, self.field, self.d)


def as_signal(x, field: Field, d: int | None = None) -> np.ndarray:
    field = Field(field)
    x = np.asarray(x)
    if field is Field.REAL and np.iscomplexobj(x):
        if np.any(x.imag != 0):
            raise FieldMismatch("complex signal given to a real ensemble")
        x = x.real
    x = x.astype(field.dtype).reshape(-1)
    if d is not None and x.shape[0] != d:
        raise ValueError(f"signal has length {x.shape[0]}, ensemble d={d}")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal has non-finite entries")
    return x


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    m: int = 0

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_ensemble(E: Ensemble) -> ValidationReport:
    """Check dimensions, finiteness and construction metadata of ``E``.

    Injectivity is not judged here.  Problems are collected, not raised.
    """
    report = ValidationReport(m=len(E.pairs))
    errors = report.errors
    if not (isinstance(E.d, (int, np.integer)) and E.d >= 1):
        errors.append(f"d must be a positive integer, got {E.d!r}")
    if not (isinstance(E.r, (int, np.integer)) and E.r >= 1):
        errors.append(f"r must be a positive integer, got {E.r!r}")
    if len(E.pairs) < 1:
        errors.append("m must be >= 1")
    for j, p in enumerate(E.pairs, start=1):
        if p.M.ndim != 2:
            errors.append(f"pair {j}: M must be a matrix")
            continue
        if p.M.shape[0] != E.d:
            errors.append(f"pair {j} has d={p.M.shape[0]}, ensemble d={E.d}")
        if p.M.shape[1] != E.r:
            errors.append(f"pair {j} has r={p.M.shape[1]}, ensemble r={E.r}")
        if p.b.shape != (E.r,):
            errors.append(f"pair {j} has offset length {p.b.shape[0]}, ensemble r={E.r}")
        if not (np.all(np.isfinite(p.M)) and np.all(np.isfinite(p.b))):
            errors.append(f"pair {j} has non-finite entries")
        if E.field is Field.REAL and p.field is Field.COMPLEX:
            errors.append(f"pair {j} is complex in a real ensemble")
    if E.meta is not None and not errors:
        errors.extend(_meta_errors(E))
    return report


def _meta_errors(E: Ensemble) -> list[str]:
    meta = E.meta
    errors = []
    if meta.kind not in (MetaKind.TIGHT, MetaKind.PERTURBED):
        return errors
    blocks = meta.blocks
    q, rem = divmod(E.d, E.r)
    expected_eps = 0 if rem == 0 else 1
    if meta.epsilon_dr != expected_eps:
        errors.append(f"meta epsilon_dr={meta.epsilon_dr} but d={E.d}, r={E.r} gives {expected_eps}")
    row = 0
    pair = 0
    for t, blk in enumerate(blocks, start=1):
        if blk.rows[0] != row:
            errors.append(f"meta block {t} starts at row {blk.rows[0]}, expected {row}")
        size = blk.size
        expected = E.r if t <= q else rem
        if size != expected:
            errors.append(f"meta block {t} has {size} rows, expected {expected}")
        if blk.pairs[0] != pair:
            errors.append(f"meta block {t} starts at pair {blk.pairs[0]}, expected {pair}")
        if blk.pairs[1] - blk.pairs[0] != len(blk.offsets):
            errors.append(f"meta block {t} lists {len(blk.offsets)} offsets for {blk.pairs[1] - blk.pairs[0]} pairs")
        row = blk.rows[1]
        pair = blk.pairs[1]
    if row != E.d:
        errors.append(f"meta blocks cover rows 0..{row}, expected 0..{E.d}")
    if pair != E.m:
        errors.append(f"meta blocks cover {pair} pairs, ensemble has m={E.m}")
    if meta.kind is MetaKind.PERTURBED and not (meta.delta is not None and meta.delta > 0):
        errors.append("perturbed meta needs delta > 0")
    return errors


def lift_stack(Ms: np.ndarray, bs: np.ndarray) -> np.ndarray:
    m, d, r = Ms.shape
    Mb = np.einsum("mdr,mr->md", Ms, bs)
    A = np.zeros((m, d + 1, d + 1), dtype=Ms.dtype)
    A[:, :d, :d] = Ms @ np.conj(np.swapaxes(Ms, -1, -2))
    A[:, :d, d] = Mb
    A[:, d, :d] = np.conj(Mb)
    A[:, d, d] = np.sum(np.abs(bs) ** 2, axis=-1)
    return A


def lift_measurement(p: MeasurementPair) -> np.ndarray:
    """Lifted matrix A = [[M M^*, M b], [(M b)^*, b^* b]] of size (d+1, d+1).

    For x~ = (x, 1):  x~^* A x~ = ||M^* x + b||^2.
    """
    return lift_stack(p.M[None], p.b[None])[0]


class RealifiedPair(NamedTuple):
    F: np.ndarray
    c: np.ndarray
    const_term: float


def realify_pair(p: MeasurementPair) -> RealifiedPair:
    """Real quadratic form of a pair in the variables u = (Re x, Im x).

    ||M^* x + b||^2 = u^T F u + 2 c^T u + b^* b with F = [[B, -C], [C, B]]
    where M M^* = B + iC.  Real pairs give C = 0.
    """
    H = p.M @ np.conj(p.M.T)
    Mb = p.M @ p.b
    F = np.block([[H.real, -H.imag], [H.imag, H.real]])
    c = np.concatenate([Mb.real, Mb.imag])
    return RealifiedPair(F, c, float(np.sum(np.abs(p.b) ** 2)))


def to_real(x: np.ndarray) -> np.ndarray:
    """Real parameter vector of a signal: x itself if real, (Re x, Im x) if complex."""
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return np.concatenate([x.real, x.imag], axis=-1)
    return x.astype(float)


def from_real(u: np.ndarray, field: Field) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if Field(field) is Field.REAL:
        return u
    d = u.shape[-1] // 2
    return u[..., :d] + 1j * u[..., d:]


def random_signal(rng: np.random.Generator, d: int, field: Field) -> np.ndarray:
    if Field(field) is Field.REAL:
        return rng.standard_normal(d)
    return rng.standard_normal(d) + 1j * rng.standard_normal(d)


def stack_pairs(pairs: Sequence[MeasurementPair], field: Field) -> tuple[np.ndarray, np.ndarray]:
    Ms = np.array([p.M for p in pairs], dtype=field.dtype)
    bs = np.array([p.b for p in pairs], dtype=field.dtype)
    return Ms, bs
