import math

import numpy as np
import pytest

from helpers import factor_set, random_coefficients, random_surface
from multiway.errors import NumericalError, UserError
from multiway.lattice import (
    RiskSurface,
    coefficients_from_surface,
    enumerate_patterns,
    flip_factor,
    is_multiplicative,
    log_additive_over_disjoint,
    moebius,
    pattern_sizes,
    recode_jacobian,
    submasks,
    surface_from_coefficients,
    zeta,
)
from multiway.model import CoefficientTable


def test_enumerate_patterns_counts_and_order() -> None:
    assert enumerate_patterns(2) == [0, 1, 2, 3]
    assert len(enumerate_patterns(3)) == 8
    assert enumerate_patterns(20)[-1] == (1 << 20) - 1


@pytest.mark.parametrize("n", [1, 21])
def test_enumerate_patterns_rejects_out_of_range(n: int) -> None:
    with pytest.raises(UserError):
        enumerate_patterns(n)


def test_pattern_sizes_and_submasks() -> None:
    assert pattern_sizes(3).tolist() == [0, 1, 1, 2, 1, 2, 2, 3]
    assert submasks(0b101).tolist() == [0, 1, 4, 5]
    assert submasks(0).tolist() == [0]


def test_surface_from_table2_coefficients(table2_surface: RiskSurface) -> None:
    assert table2_surface[0] == 1.0
    assert table2_surface[0b001] == pytest.approx(1.43, abs=0.01)
    assert table2_surface[0b010] == pytest.approx(1.34, abs=0.01)
    assert table2_surface[0b100] == pytest.approx(1.51, abs=0.01)
    assert table2_surface[0b111] == pytest.approx(math.exp(1.24), rel=1e-12)


def test_zero_coefficients_give_unit_surface() -> None:
    surface = surface_from_coefficients(CoefficientTable.from_vector(factor_set(3), [0.0] * 7))
    np.testing.assert_array_equal(surface.rr, np.ones(8))


def test_coefficients_from_surface_two_factor_example() -> None:
    surface = RiskSurface(factor_set(2), np.array([1.0, 2.0, 3.0, 12.0]))
    coeffs = coefficients_from_surface(surface)
    assert coeffs.coefficient(0b01) == pytest.approx(math.log(2))
    assert coeffs.coefficient(0b10) == pytest.approx(math.log(3))
    assert coeffs.coefficient(0b11) == pytest.approx(math.log(2))


def test_unit_surface_has_zero_coefficients() -> None:
    coeffs = coefficients_from_surface(RiskSurface(factor_set(3), np.ones(8)))
    assert all(value == 0.0 for value in coeffs.entries.values())


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_zeta_moebius_round_trip(n: int) -> None:
    rng = np.random.default_rng(100 + n)
    for _ in range(50):
        values = rng.normal(size=1 << n)
        np.testing.assert_allclose(moebius(zeta(values, n), n), values, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(zeta(moebius(values, n), n), values, rtol=1e-12, atol=1e-12)
        coeffs = random_coefficients(rng, n)
        back = coefficients_from_surface(surface_from_coefficients(coeffs))
        np.testing.assert_allclose(back.vector(), coeffs.vector(), rtol=1e-12, atol=1e-12)


def test_overflowing_coefficients_raise() -> None:
    coeffs = CoefficientTable.from_vector(factor_set(2), [800.0, 0.0, 0.0])
    with pytest.raises(NumericalError):
        surface_from_coefficients(coeffs)


def test_surface_requires_unit_reference() -> None:
    with pytest.raises(UserError):
        RiskSurface(factor_set(2), np.array([1.1, 2.0, 3.0, 4.0]))
    with pytest.raises(NumericalError):
        RiskSurface(factor_set(2), np.array([1.0, -2.0, 3.0, 4.0]))


def test_flip_factor_re_references_the_table() -> None:
    surface = RiskSurface(factor_set(2), np.array([1.0, 0.5, 2.0, 1.5]))
    flipped = flip_factor(surface, 0)
    np.testing.assert_allclose(flipped.rr, [1.0, 2.0, 3.0, 4.0])


def test_flip_factor_recodes_protective_drug() -> None:
    surface = RiskSurface(factor_set(2), np.array([1.0, 0.25, 0.25, 0.0625]))
    assert flip_factor(surface, 0)[0b01] == pytest.approx(4.0)


def test_flip_factor_is_an_involution() -> None:
    rng = np.random.default_rng(7)
    for n in range(2, 6):
        surface = random_surface(rng, n)
        for i in range(n):
            twice = flip_factor(flip_factor(surface, i), i)
            assert twice[0] == 1.0
            np.testing.assert_allclose(twice.rr, surface.rr, rtol=1e-14)


def test_recode_jacobian_matches_surface_flip() -> None:
    rng = np.random.default_rng(11)
    for n in range(2, 5):
        coeffs = random_coefficients(rng, n)
        surface = surface_from_coefficients(coeffs)
        for i in range(n):
            expected = coefficients_from_surface(flip_factor(surface, i)).vector()
            np.testing.assert_allclose(
                recode_jacobian(n, i) @ coeffs.vector(), expected, rtol=1e-10, atol=1e-12
            )


def test_log_additivity_iff_no_product_terms() -> None:
    rng = np.random.default_rng(3)
    for n in range(2, 5):
        coeffs = random_coefficients(rng, n)
        main_only = CoefficientTable(
            coeffs.factor_set, {m: v for m, v in coeffs.entries.items() if m.bit_count() == 1}
        )
        assert is_multiplicative(main_only)
        assert log_additive_over_disjoint(surface_from_coefficients(main_only))
        assert not is_multiplicative(coeffs)
        assert not log_additive_over_disjoint(surface_from_coefficients(coeffs))
