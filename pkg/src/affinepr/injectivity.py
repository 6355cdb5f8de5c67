"""Refuting (or failing to refute) injectivity of the measurement map.

Two signals x != y collide exactly when, with u = (x+y)/2 and v = (x-y)/2,
every gradient direction w_j(u) is orthogonal to v.  This module finds such
pairs constructively when an ensemble has too few measurements, searches for
them by driving the smallest eigenvalue of G(u) = sum_j w_j w_j^T to zero
otherwise, and converts collisions to and from rank-2 lifted certificates Q.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._linalg import EigenNonConvergence, hermitian_embedding, jacobi_eigh
from .constructions import is_tight, min_measurements
from .forward import (
    gradients,
    margin,
    measure,
    measurement_scale,
    polarization_gaps,
    quadratic_forms,
    real_dim,
)
from .model import Ensemble, Field, MetaKind, as_signal, from_real, to_real

WITNESS_RTOL = 1e-8
CERT_RTOL = 1e-9
SUBSET_BUDGET = 200


class DeficiencyError(RuntimeError):
    """No consistent index subset was found.

    ``reason`` is "structurally infeasible" when every candidate subset was
    tried, "budget exhausted" when the random search stopped early.
    """

    def __init__(self, message: str, reason: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason


class CertificateInvalid(ValueError):
    def __init__(self, condition: str, message: str = ""):
        super().__init__(f"certificate invalid ({condition}){': ' + message if message else ''}")
        self.condition = condition


@dataclass(frozen=True)
class CollisionWitness:
    x: np.ndarray
    y: np.ndarray
    gap: float
    separation: float
    scale: float

    @property
    def valid(self) -> bool:
        return self.separation > 0 and self.gap <= WITNESS_RTOL * self.scale


def witness_scale(E: Ensemble, x, y) -> float:
    """Tolerance scale for comparing M_A(x) with M_A(y): max(1, max_j y_j)."""
    return measurement_scale(measure(E, x), measure(E, y))


def make_witness(E: Ensemble, x, y) -> CollisionWitness:
    """Package (x, y) with its measured gap max_j |y_j(x) - y_j(y)|."""
    x = as_signal(x, E.field, E.d)
    y = as_signal(y, E.field, E.d)
    yx, yy = measure(E, x), measure(E, y)
    return CollisionWitness(
        x, y, float(np.max(np.abs(yx - yy))), float(np.linalg.norm(x - y)), measurement_scale(yx, yy)
    )


# -- constructive collisions below the bound --------------------------------


def _offset_system(E: Ensemble, S) -> tuple[np.ndarray, np.ndarray]:
    """Real linear system for M_j^* u = -b_j, j in S, in real coordinates of u."""
    K = np.conj(np.swapaxes(E.Ms[list(S)], -1, -2)).reshape(-1, E.d)
    rhs = -E.bs[list(S)].reshape(-1)
    if E.field is Field.REAL:
        return K, rhs
    L = np.block([[K.real, -K.imag], [K.imag, K.real]])
    return L, np.concatenate([rhs.real, rhs.imag])


def _solve_subset(E: Ensemble, S) -> Optional[np.ndarray]:
    if not S:
        return np.zeros(real_dim(E))
    L, rhs = _offset_system(E, S)
    u, *_ = np.linalg.lstsq(L, rhs, rcond=None)
    resid = np.linalg.norm(L @ u - rhs)
    if resid <= 1e-8 * max(1.0, np.linalg.norm(rhs), np.linalg.norm(L) * np.linalg.norm(u)):
        return u
    return None


def _candidate_subsets(E: Ensemble, k: int, rng: np.random.Generator):
    m = E.m
    if E.meta is not None and E.meta.kind is MetaKind.TIGHT and is_tight(E):
        firsts = [blk.pairs[0] for blk in E.meta.blocks]
        if len(firsts) >= k:
            yield tuple(firsts[:k])
    yield tuple(range(k))
    # greedy scan in index order
    S: list[int] = []
    for j in range(m):
        if len(S) == k:
            break
        if _solve_subset(E, S + [j]) is not None:
            S.append(j)
    if len(S) == k:
        yield tuple(S)
    total = math.comb(m, k)
    if total <= SUBSET_BUDGET:
        yield from itertools.combinations(range(m), k)
    else:
        for _ in range(SUBSET_BUDGET):
            yield tuple(sorted(rng.choice(m, size=k, replace=False).tolist()))


def deficiency_collision(E: Ensemble, seed: int = 0) -> CollisionWitness:
    """Collision for an ensemble with fewer than the minimal number of measurements.

    Pick a subset S whose pairs can be zeroed simultaneously (M_j^* u = -b_j),
    so w_j(u) = 0 for j in S.  The remaining m - |S| directions w_j(u) number
    fewer than n (n = d, or 2d over C), so a unit v orthogonal to all of them
    exists; x = u + v and y = u - v then have equal measurements.
    """
    n = real_dim(E)
    k = max(0, E.m - n + 1)
    rng = np.random.default_rng(seed)
    exhaustive = math.comb(E.m, k) <= SUBSET_BUDGET
    tried = set()
    for S in _candidate_subsets(E, k, rng):
        if S in tried:
            continue
        tried.add(S)
        u = _solve_subset(E, S)
        if u is None:
            continue
        rest = [j for j in range(E.m) if j not in S]
        W = gradients(E, u)[rest]
        w, V = jacobi_eigh(W.T @ W)
        v = V[:, 0]
        x = from_real(u + v, E.field)
        y = from_real(u - v, E.field)
        return make_witness(E, x, y)
    bound = min_measurements(E.d, E.r, E.field)
    msg = f"no subset of {k} pairs with a common zero (m={E.m}, bound={bound})"
    raise DeficiencyError(msg, "structurally infeasible" if exhaustive else "budget exhausted")


# -- search by margin minimisation -------------------------------------------


@dataclass
class SearchOptions:
    restarts: int = 50
    max_iter: int = 300
    tol: float = WITNESS_RTOL
    seed: int = 0
    candidate_rtol: float = 1e-3
    max_polish: int = 8


@dataclass
class InjectivityReport:
    verdict: str  # "non_injective" or "no_collision_found"
    witness: Optional[CollisionWitness] = None
    certificate: Optional["Certificate"] = None
    min_margin: float = math.inf
    argmin: Optional[np.ndarray] = None
    restarts: int = 0
    method: str = ""
    proved_injective: bool = False
    tolerances: dict = field(default_factory=dict)

    @property
    def non_injective(self) -> bool:
        return self.verdict == "non_injective"


NON_INJECTIVE = "non_injective"
NO_COLLISION = "no_collision_found"


def _batched_margin(F, c, U, V0=None):
    W = np.einsum("mij,rj->rmi", F, U) + c[None]
    G = np.einsum("rmi,rmj->rij", W, W)
    w, V = jacobi_eigh(G, V0=V0)
    return w[:, 0], V, W, w[:, -1]


def _descend(E: Ensemble, opts: SearchOptions):
    """Multistart gradient descent on mu(u) = lambda_min(G(u)) with backtracking.

    A restart is retired once it stalls (no acceptable step) or its margin
    stops improving by more than 1% over a window of iterations.
    """
    F, c, _ = quadratic_forms(E)
    n = F.shape[-1]
    rng = np.random.default_rng(opts.seed)
    radii = np.array([1.0, 3.0, 0.3])[np.arange(opts.restarts) % 3]
    U = rng.standard_normal((opts.restarts, n)) * radii[:, None]
    mu, V, W, top = _batched_margin(F, c, U)
    step = np.ones(opts.restarts)
    live = np.ones(opts.restarts, dtype=bool)
    window = 25
    history = [mu.copy()]
    for it in range(1, opts.max_iter + 1):
        live &= mu / np.maximum(1.0, top) > 1e-14
        if not live.any():
            break
        idx_live = np.nonzero(live)[0]
        v = V[idx_live, :, 0]
        a = np.einsum("rmi,ri->rm", W[idx_live], v)
        Fv = np.einsum("mij,rj->rmi", F, v)
        grad = np.zeros_like(U)
        grad[idx_live] = 2 * np.einsum("rm,rmi->ri", a, Fv)
        g2 = np.sum(grad**2, axis=1)
        live &= g2 > 0
        pending = live.copy()
        t = np.minimum(step * 2.0, 1e6)
        for _ in range(40):
            if not pending.any():
                break
            idx = np.nonzero(pending)[0]
            trial = U[idx] - t[idx, None] * grad[idx]
            m_t, V_t, W_t, top_t = _batched_margin(F, c, trial, V[idx])
            ok = m_t <= mu[idx] - 1e-4 * t[idx] * g2[idx]
            acc = idx[ok]
            U[acc] = trial[ok]
            mu[acc] = m_t[ok]
            V[acc] = V_t[ok]
            W[acc] = W_t[ok]
            top[acc] = top_t[ok]
            step[acc] = t[acc]
            pending[acc] = False
            t[idx[~ok]] *= 0.5
        live &= ~pending
        history.append(mu.copy())
        if it >= window:
            live &= mu < 0.99 * history[-window - 1]
        if it % 20 == 0:
            # refresh from scratch to keep the warm-started eigenbasis orthogonal
            mu, V, W, top = _batched_margin(F, c, U)
    return U, mu, top


POLISH_RTOL = 1e-11


def _polish(E: Ensemble, u: np.ndarray, v: np.ndarray, iters: int = 60):
    """Gauss-Newton on w_j(u).v = 0 (all j) and |v|^2 = 1 over (u, v)."""
    F, c, _ = quadratic_forms(E)
    n = u.shape[0]
    for _ in range(iters):
        W = np.einsum("mij,j->mi", F, u) + c
        R = np.concatenate([W @ v, [0.5 * (v @ v - 1.0)]])
        res = np.max(np.abs(R)) / max(1.0, np.max(np.abs(W)))
        if res <= 1e-15:
            break
        Fv = np.einsum("mij,j->mi", F, v)
        J = np.zeros((E.m + 1, 2 * n))
        J[:-1, :n] = Fv
        J[:-1, n:] = W
        J[-1, n:] = v
        step, *_ = np.linalg.lstsq(J, -R, rcond=None)
        u = u + step[:n]
        v = v + step[n:]
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(v)):
            return None
    W = np.einsum("mij,j->mi", F, u) + c
    nv = np.linalg.norm(v)
    # a stalled solve far from the origin can still pass a relative gap test
    if nv == 0 or np.max(np.abs(W @ v)) > POLISH_RTOL * max(1.0, np.max(np.abs(W))) * nv:
        return None
    return u, v / nv


def collision_search(E: Ensemble, opts: SearchOptions | None = None, **kwargs) -> InjectivityReport:
    """Search for a collision by minimising the injectivity margin.

    A returned non-injective verdict always carries a witness whose measured
    gap passes ``opts.tol``; "no_collision_found" is evidence only.
    """
    opts = opts or SearchOptions(**kwargs)
    report = InjectivityReport(NO_COLLISION, restarts=opts.restarts, method="search")
    report.tolerances = {"witness_rtol": opts.tol, "candidate_rtol": opts.candidate_rtol}
    try:
        U, mu, top = _descend(E, opts)
    except EigenNonConvergence:
        report.method = "search (eigen non-convergence)"
        return report
    rel = mu / np.maximum(1.0, top)
    order = np.argsort(rel, kind="stable")
    best = order[0]
    report.argmin = from_real(U[best], E.field)
    report.min_margin = float(mu[best])
    for k in order[: opts.max_polish]:
        if rel[k] > opts.candidate_rtol:
            break
        res = margin(E, from_real(U[k], E.field))
        polished = _polish(E, U[k], res.direction)
        if polished is None:
            continue
        u, v = polished
        w = make_witness(E, from_real(u + v, E.field), from_real(u - v, E.field))
        if w.separation > 0 and w.gap <= opts.tol * w.scale:
            report.verdict = NON_INJECTIVE
            report.witness = w
            return report
    return report


# -- rank-2 certificates -----------------------------------------------------


@dataclass(frozen=True)
class Certificate:
    Q: np.ndarray
    field: Field


@dataclass
class CertificateReport:
    hermitian: bool
    corner_zero: bool
    rank_le_2: bool
    kernel: bool
    normalized: bool
    failing_pairs: list[int]
    third_eigenvalue: float
    normalization: float

    @property
    def ok(self) -> bool:
        return self.hermitian and self.corner_zero and self.rank_le_2 and self.kernel and self.normalized

    def first_failure(self) -> str | None:
        for name in ("hermitian", "corner_zero", "rank_le_2", "kernel", "normalized"):
            if not getattr(self, name):
                return name
        return None


def lifted_outer(x) -> np.ndarray:
    xt = np.append(np.asarray(x), 1.0)
    return np.outer(xt, np.conj(xt))


def certificate_from_collision(w: CollisionWitness, E: Ensemble) -> Certificate:
    """Q = (x~ x~^* - y~ y~^*) / ||x - y||, x~ = (x, 1), y~ = (y, 1).

    The 1/||x - y|| factor makes the last column (without the corner) a unit vector.
    """
    x = as_signal(w.x, E.field, E.d)
    y = as_signal(w.y, E.field, E.d)
    sep = np.linalg.norm(x - y)
    if sep == 0:
        raise ValueError("degenerate witness: x == y")
    Q = (lifted_outer(x) - lifted_outer(y)) / sep
    return Certificate(Q, E.field)


def _symmetric_eig(Q: np.ndarray, field: Field):
    H = 0.5 * (Q + np.conj(Q.T))
    if field is Field.REAL:
        return jacobi_eigh(H.real)
    return jacobi_eigh(hermitian_embedding(H))


def T_map(E: Ensemble, Q) -> np.ndarray:
    """(tr(A_1^* Q), ..., tr(A_m^* Q)) for the lifted matrices A_j."""
    return np.einsum("mij,ij->m", np.conj(E.lifted), np.asarray(Q))


def verify_certificate(E: Ensemble, Q, rtol: float = CERT_RTOL) -> CertificateReport:
    """Check the five defining conditions of a non-injectivity certificate."""
    return _verify(E, Q, rtol)[0]


def _verify(E: Ensemble, Q, rtol: float):
    Q = np.asarray(Q)
    d = E.d
    if Q.shape != (d + 1, d + 1):
        raise ValueError(f"Q must be {(d + 1, d + 1)}, got {Q.shape}")
    if E.field is Field.REAL and np.iscomplexobj(Q):
        Q = Q.real if np.all(Q.imag == 0) else Q
    qn = float(np.linalg.norm(Q))
    tol = rtol * qn
    hermitian = bool(float(np.max(np.abs(Q - np.conj(Q.T)))) <= tol)
    corner = bool(abs(Q[d, d]) <= tol)
    w, V = _symmetric_eig(Q, E.field)
    mags = np.sort(np.abs(w))[::-1]
    third = float(mags[2] if E.field is Field.REAL else mags[4]) if len(mags) > (2 if E.field is Field.REAL else 4) else 0.0
    rank_ok = bool(third <= tol)
    T = T_map(E, Q)
    a_norms = np.sqrt(np.sum(np.abs(E.lifted) ** 2, axis=(1, 2)))
    failing = [j + 1 for j in range(E.m) if abs(T[j]) > rtol * max(a_norms[j], 1e-300) * qn]
    if E.field is Field.REAL:
        norm_val = complex(np.sum(Q[:d, d] ** 2))
    else:
        norm_val = complex(np.sum(Q[:d, d] * Q[d, :d]))
    normalized = bool(abs(norm_val - 1.0) <= max(tol, rtol))
    rep = CertificateReport(
        hermitian, corner, rank_ok, not failing, normalized, failing, third, float(norm_val.real)
    )
    return rep, w, V


def collision_from_certificate(Q, E: Ensemble, rtol: float = CERT_RTOL) -> CollisionWitness:
    """Extract a colliding pair from a valid certificate.

    Q = lambda_+ u u^* + lambda_- v v^* with lambda_+ > 0 > lambda_-; the
    zero corner forces both u and v to have nonzero last entries, and
    x = u[:d] / u[d], y = v[:d] / v[d] collide.
    """
    if isinstance(Q, Certificate):
        Q = Q.Q
    Q = np.asarray(Q)
    d = E.d
    if Q.shape == (d + 1, d + 1):
        # the two cheap checks come first in failure order; skip the eigensolve
        tol = rtol * float(np.linalg.norm(Q))
        if float(np.max(np.abs(Q - np.conj(Q.T)))) > tol:
            raise CertificateInvalid("hermitian", "")
        if abs(Q[d, d]) > tol:
            raise CertificateInvalid("corner_zero", "")
    rep, w, V = _verify(E, Q, rtol)
    if not rep.ok:
        bad = rep.first_failure()
        detail = f"pairs {rep.failing_pairs}" if bad == "kernel" else ""
        raise CertificateInvalid(bad, detail)
    lam_pos, lam_neg = w[-1], w[0]
    tol = rtol * float(np.linalg.norm(Q))
    if not (lam_pos > tol and lam_neg < -tol):
        raise CertificateInvalid("eigenvalue signs", f"extreme eigenvalues {lam_neg:.3g}, {lam_pos:.3g}")
    vecs = []
    for col in (V[:, -1], V[:, 0]):
        z = col if E.field is Field.REAL else col[: d + 1] + 1j * col[d + 1 :]
        if abs(z[d]) <= 1e-12 * np.linalg.norm(z):
            raise CertificateInvalid("last component", "eigenvector has a vanishing last entry")
        vecs.append(z[:d] / z[d])
    return make_witness(E, vecs[0], vecs[1])


# -- orchestration ----------------------------------------------------------


def injectivity_report(E: Ensemble, opts: SearchOptions | None = None, **kwargs) -> InjectivityReport:
    """Verdict for E: constructive collision below the bound, margin search otherwise."""
    opts = opts or SearchOptions(**kwargs)
    report = None
    if E.m < min_measurements(E.d, E.r, E.field):
        try:
            w = deficiency_collision(E, seed=opts.seed)
        except DeficiencyError:
            w = None
        if w is not None and w.gap <= opts.tol * w.scale:
            report = InjectivityReport(NON_INJECTIVE, witness=w, restarts=0, method="deficiency")
            report.tolerances = {"witness_rtol": opts.tol}
    if report is None:
        report = collision_search(E, opts)
    if report.witness is not None:
        report.certificate = certificate_from_collision(report.witness, E)
    report.proved_injective = report.verdict == NO_COLLISION and is_tight(E)
    return report


def polarization_check(E: Ensemble, w: CollisionWitness) -> float:
    """|max direct gap - max polarization gap| for a witness (both evaluations)."""
    direct = measure(E, w.x) - measure(E, w.y)
    return float(np.max(np.abs(direct - polarization_gaps(E, w.x, w.y))))
