"""The measurement map x -> (||M_j^* x + b_j||^2)_j and its first-order structure.

Jacobian and margin work happens in real coordinates: a real signal is its
own parameter vector, a complex signal x is realified to (Re x, Im x).  In
those coordinates measurement j is the quadratic u^T F_j u + 2 c_j^T u + k_j,
with gradient 2 w_j(u), w_j(u) = F_j u + c_j.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ._linalg import jacobi_eigh
from .model import Ensemble, Field, MeasurementPair, as_signal, to_real

RANK_RTOL = 1e-9


class QuadraticForms(NamedTuple):
    F: np.ndarray  # (m, n, n) symmetric
    c: np.ndarray  # (m, n)
    const: np.ndarray  # (m,)


def quadratic_forms(E: Ensemble) -> QuadraticForms:
    """Real quadratic forms of every measurement (n = d real, n = 2d complex)."""
    cached = E.__dict__.get("_quadratic_forms")
    if cached is not None:
        return cached
    Ms, bs = E.Ms, E.bs
    H = Ms @ np.conj(np.swapaxes(Ms, -1, -2))
    Mb = np.einsum("mdr,mr->md", Ms, bs)
    const = np.sum(np.abs(bs) ** 2, axis=-1)
    if E.field is Field.REAL:
        forms = QuadraticForms(H, Mb, const)
    else:
        F = np.concatenate(
            [np.concatenate([H.real, -H.imag], axis=-1), np.concatenate([H.imag, H.real], axis=-1)],
            axis=-2,
        )
        forms = QuadraticForms(F, np.concatenate([Mb.real, Mb.imag], axis=-1), const)
    for a in forms:
        a.setflags(write=False)
    E.__dict__["_quadratic_forms"] = forms
    return forms


def real_dim(E: Ensemble) -> int:
    return E.d if E.field is Field.REAL else 2 * E.d


def measure(E: Ensemble, x) -> np.ndarray:
    """Measurement vector (||M_j^* x + b_j||^2)_{j=1..m}."""
    x = as_signal(x, E.field, E.d)
    z = np.einsum("mdr,d->mr", np.conj(E.Ms), x) + E.bs
    return np.sum(z.real**2 + z.imag**2, axis=-1) if E.field is Field.COMPLEX else np.sum(z**2, axis=-1)


def measure_many(E: Ensemble, X) -> np.ndarray:
    """Measurements of a stack of signals, shape (k, m)."""
    X = np.asarray(X, dtype=E.field.dtype)
    z = np.einsum("mdr,kd->kmr", np.conj(E.Ms), X) + E.bs[None]
    return np.sum(np.abs(z) ** 2, axis=-1)


def polarization_gap(p: MeasurementPair, x, y) -> float:
    """||M^* x + b||^2 - ||M^* y + b||^2 written as a bilinear form.

    With u = (x + y)/2 and v = (x - y)/2 the difference equals
    4 (u^T M M^T v + (M b)^T v), or 4 Re(u^* M M^* v + (M b)^* v) over C.
    Evaluating it this way avoids cancelling two large squared norms.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != (p.d,) or y.shape != (p.d,):
        raise ValueError(f"signals must have length d={p.d}")
    u = (x + y) / 2
    v = (x - y) / 2
    H = p.M @ np.conj(p.M.T)
    val = np.vdot(u, H @ v) + np.vdot(p.M @ p.b, v)
    return float(4 * np.real(val))


def polarization_gaps(E: Ensemble, x, y) -> np.ndarray:
    """Vector of polarization-form differences y_j(x) - y_j(y)."""
    F, c, _ = quadratic_forms(E)
    ux = to_real(as_signal(x, E.field, E.d))
    uy = to_real(as_signal(y, E.field, E.d))
    u = (ux + uy) / 2
    v = (ux - uy) / 2
    return 4 * (np.einsum("i,mij,j->m", u, F, v) + c @ v)


def gradients(E: Ensemble, u_real: np.ndarray) -> np.ndarray:
    """w_j(u) = F_j u + c_j for all j, shape (m, n)."""
    F, c, _ = quadratic_forms(E)
    return np.einsum("mij,j->mi", F, u_real) + c


def jacobian(E: Ensemble, x) -> np.ndarray:
    """Real Jacobian of the measurement map, shape (n, m): column j is grad y_j."""
    u = to_real(as_signal(x, E.field, E.d))
    return 2 * gradients(E, u).T


def gram(E: Ensemble, u) -> np.ndarray:
    """G(u) = sum_j w_j w_j^T = J(u) J(u)^T / 4."""
    W = gradients(E, to_real(as_signal(u, E.field, E.d)))
    return W.T @ W


class MarginResult(NamedTuple):
    value: float
    direction: np.ndarray


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(v)))
    return -v if v[k] < 0 else v


def margin(E: Ensemble, u) -> MarginResult:
    """Smallest eigenvalue of G(u) and a unit eigenvector for it.

    A zero margin at u means some nonzero v is orthogonal to every w_j(u),
    i.e. x = u + v and y = u - v produce the same measurements.  The
    direction lives in real coordinates (length 2d for complex ensembles).
    """
    G = gram(E, u)
    w, V = jacobi_eigh(G)
    v = _canonical_sign(V[:, 0])
    return MarginResult(float(max(w[0], 0.0)), v)


def jacobian_rank(E: Ensemble, x) -> int:
    """Rank of J(x), decided on G = J J^T / 4 with threshold 1e-9 * max(1, lambda_max)."""
    w = jacobi_eigh(gram(E, x))[0]
    return int(np.sum(w > RANK_RTOL * max(1.0, w[-1])))


def measurement_scale(*ys) -> float:
    """Magnitude used for relative measurement comparisons: max(1, max |y_j|)."""
    return max([1.0] + [float(np.max(np.abs(y))) for y in ys if np.size(y)])
