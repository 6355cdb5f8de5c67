from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from affinepr.constructions import random_ensemble, tight_ensemble
from affinepr.forward import (
    gradients,
    gram,
    jacobian,
    jacobian_rank,
    margin,
    measure,
    measure_many,
    measurement_scale,
    polarization_gap,
    polarization_gaps,
)
from affinepr.model import Ensemble, Field, MeasurementPair, random_signal, to_real, from_real


def _deficient():
    Ms = np.array([[[1.0], [0.0]], [[1.0], [0.0]], [[0.0], [1.0]]])
    return Ensemble.from_arrays(Ms, np.array([[0.0], [1.0], [0.0]]))


def _random_case(rng, field):
    d = int(rng.integers(1, 5))
    r = int(rng.integers(1, d + 1))
    m = int(rng.integers(1, 9))
    E = random_ensemble(d, r, m, field, int(rng.integers(2**32)))
    return E, random_signal(rng, d, field), random_signal(rng, d, field)


def central_differences(E, x, h=1e-6):
    u = to_real(E.signal(x))
    cols = []
    for i in range(u.size):
        e = np.zeros_like(u)
        e[i] = h
        cols.append((measure(E, from_real(u + e, E.field)) - measure(E, from_real(u - e, E.field))) / (2 * h))
    return np.array(cols)  # (n, m)


# -- measure ---------------------------------------------------------------------


def test_measure_tight_real():
    x = np.array([1.0, 2.0])
    # offsets 0, 1 on each coordinate
    expected = [x[0] ** 2, (x[0] + 1) ** 2, x[1] ** 2, (x[1] + 1) ** 2]
    assert measure(tight_ensemble(2, 1, Field.REAL), x).tolist() == expected == [1, 4, 4, 9]


def test_measure_zero_ensemble():
    E = Ensemble.from_arrays(np.zeros((5, 3, 2)), np.zeros((5, 2)))
    assert not measure(E, [1.0, -2.0, 3.0]).any()


def test_measure_tight_complex():
    x = 1 + 2j
    expected = [abs(x + 1j) ** 2, abs(x + 1) ** 2, abs(x) ** 2]
    y = measure(tight_ensemble(1, 1, Field.COMPLEX), [x])
    assert np.allclose(y, expected, rtol=0, atol=1e-14)
    assert np.allclose(y, [10, 8, 5], rtol=0, atol=1e-14)


def test_measure_dimension_mismatch():
    with pytest.raises(ValueError):
        measure(tight_ensemble(2, 1), [1.0, 2.0, 3.0])


def test_measure_many_matches_measure(rng):
    E = random_ensemble(3, 2, 6, Field.COMPLEX, 5)
    X = np.array([random_signal(rng, 3, Field.COMPLEX) for _ in range(4)])
    assert np.allclose(measure_many(E, X), [measure(E, x) for x in X], rtol=1e-14)


def test_zero_pair_appended(rng):
    for field in Field:
        E = random_ensemble(3, 2, 4, field, 9)
        z = MeasurementPair(np.zeros((3, 2), field.dtype), np.zeros(2, field.dtype))
        F = Ensemble(field, 3, 2, E.pairs + (z,))
        x = random_signal(rng, 3, field)
        assert np.array_equal(measure(F, x), np.append(measure(E, x), 0.0))


# -- polarization ----------------------------------------------------------------


def test_polarization_real_example():
    p = MeasurementPair(np.array([[1.0], [0.0]]), [1.0])
    assert polarization_gap(p, [1.0, 2.0], [3.0, 0.0]) == pytest.approx(4 - 16, abs=1e-12)


def test_polarization_equal_signals_is_zero(rng):
    p = MeasurementPair(rng.standard_normal((3, 2)), rng.standard_normal(2))
    x = rng.standard_normal(3)
    assert polarization_gap(p, x, x) == 0.0


def test_polarization_complex_example():
    p = MeasurementPair(np.array([[1.0 + 0j]]), [1j])
    assert polarization_gap(p, [1 + 2j], [0j]) == pytest.approx(10 - 1, abs=1e-12)


def test_polarization_identity_1000():
    rng = np.random.default_rng(21)
    for k in range(1000):
        field = Field.REAL if k % 2 else Field.COMPLEX
        E, x, y = _random_case(rng, field)
        yx, yy = measure(E, x), measure(E, y)
        pol = np.array([polarization_gap(p, x, y) for p in E.pairs])
        assert np.sum(np.abs(yx - yy - pol)) <= 1e-9 * measurement_scale(yx, yy)
        assert np.allclose(polarization_gaps(E, x, y), pol, rtol=0, atol=1e-9 * measurement_scale(yx, yy))


# -- Jacobian -------------------------------------------------------------------------


def test_jacobian_tight_real():
    J = jacobian(tight_ensemble(2, 1), [1.0, 2.0])
    expected = 2 * np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 2.0], [0.0, 3.0]]).T
    assert np.array_equal(J, expected)
    assert np.allclose(J, central_differences(tight_ensemble(2, 1), [1.0, 2.0]), atol=1e-6)


def test_jacobian_vanishes_at_common_zero():
    Ms = np.array([[[1.0], [0.0]], [[0.0], [1.0]], [[1.0], [1.0]]])
    bs = np.array([[-1.0], [-2.0], [-3.0]])
    E = Ensemble.from_arrays(Ms, bs)
    assert not jacobian(E, [1.0, 2.0]).any()


def test_jacobian_complex_example():
    E = tight_ensemble(1, 1, Field.COMPLEX)
    J = jacobian(E, [1 + 2j])
    assert J.shape == (2, 3)
    assert np.allclose(J, central_differences(E, [1 + 2j]), rtol=1e-7, atol=1e-7)
    assert np.linalg.matrix_rank(J) == 2
    assert jacobian_rank(E, [1 + 2j]) == 2


@pytest.mark.parametrize("field", list(Field))
def test_jacobian_finite_differences_100(field):
    rng = np.random.default_rng(31)
    for _ in range(100):
        E, x, _ = _random_case(rng, field)
        J = jacobian(E, x)
        fd = central_differences(E, x)
        assert np.all(np.abs(J - fd) <= 1e-5 * np.maximum(np.abs(J), 1.0))


@pytest.mark.parametrize("field", list(Field))
def test_gram_jacobian_identity_100(field):
    rng = np.random.default_rng(41)
    for _ in range(100):
        E, x, _ = _random_case(rng, field)
        G = gram(E, x)
        J = jacobian(E, x)
        assert np.linalg.norm(G - J @ J.T / 4) <= 1e-9 * np.linalg.norm(G)


# -- margin ----------------------------------------------------------------------------


def test_margin_tight_real():
    E = tight_ensemble(2, 1)
    assert np.array_equal(gram(E, [1.0, 2.0]), np.diag([5.0, 13.0]))
    res = margin(E, [1.0, 2.0])
    assert res.value == pytest.approx(5.0, abs=1e-12)
    assert np.allclose(np.abs(res.direction), [1.0, 0.0], atol=1e-12)


def test_margin_at_origin_of_tight():
    # w_j(0) = M_j b_j = (0,0), (1,0), (0,0), (0,1): G = I
    res = margin(tight_ensemble(2, 1), [0.0, 0.0])
    assert res.value >= 1 - 1e-9


def test_margin_deficient():
    res = margin(_deficient(), [0.0, 0.0])
    assert res.value == pytest.approx(0.0, abs=1e-14)
    assert np.allclose(np.abs(res.direction), [0.0, 1.0], atol=1e-12)


def test_margin_degenerate_block():
    # two identical pairs on coordinate 1; both gradients vanish when u_1 = 0
    Ms = np.array([[[1.0], [0.0]], [[1.0], [0.0]], [[0.0], [1.0]], [[0.0], [1.0]]])
    bs = np.array([[0.0], [0.0], [0.0], [1.0]])
    E = Ensemble.from_arrays(Ms, bs)
    assert margin(E, [0.0, 3.7]).value == pytest.approx(0.0, abs=1e-14)


def test_margin_complex_direction_length():
    res = margin(tight_ensemble(2, 1, Field.COMPLEX), [1 + 1j, -1j])
    assert res.direction.shape == (4,)


@given(st.integers(0, 2**32 - 1), st.sampled_from(list(Field)))
def test_margin_rayleigh_consistency(seed, field):
    rng = np.random.default_rng(seed)
    E, u, _ = _random_case(rng, field)
    res = margin(E, u)
    G = gram(E, u)
    assert abs(np.linalg.norm(res.direction) - 1) <= 1e-12
    assert res.value >= 0
    assert abs(res.value - res.direction @ G @ res.direction) <= 1e-9 * max(1.0, np.linalg.norm(G))
    assert res.value <= np.linalg.eigvalsh(G)[0] + 1e-9 * max(1.0, np.linalg.norm(G))


def test_gradients_shape():
    E = random_ensemble(3, 1, 5, Field.COMPLEX, 0)
    assert gradients(E, np.zeros(6)).shape == (5, 6)
