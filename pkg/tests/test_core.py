import math
import warnings

import numpy as np
import pytest

from helpers import cohort_from_counts, factor_set
from multiway.additive import reri_n, tot_reri
from multiway.core import (
    PipelineOptions,
    recode_coefficients,
    run_data_pipeline,
    run_pipeline,
    run_screening,
)
from multiway.errors import FitError, PipelineError, ProtectiveFactorError, ProtectiveFactorWarning
from multiway.lattice import flip_factor, recode_jacobian, surface_from_coefficients
from multiway.model import CoefficientTable, CovarianceBlock, FactorSet, canonical_terms
from multiway.report import (
    SECTION_ABSENT,
    SECTION_COEFFICIENTS,
    SECTION_HAZARD_RATIOS,
    SECTION_MULTIPLICATIVE,
    SECTION_PRESENT,
)

TRIPLE = "lowMD,highBMI,smoking"


def _diagonal(n: int, variance: float = 0.01) -> CovarianceBlock:
    terms = canonical_terms(n)
    return CovarianceBlock(terms, np.eye(len(terms)) * variance)


def test_table2_pipeline(table2_coeffs: CoefficientTable) -> None:
    report = run_pipeline(table2_coeffs)
    est = report.estimates
    assert est[f"TotRERI3({TRIPLE})"] == pytest.approx(1.1791, abs=1e-4)
    assert est[f"RERI3({TRIPLE})"] == pytest.approx(1.9698, abs=1e-4)
    assert est["RERI2(lowMD,highBMI | smoking=0)"] == pytest.approx(-0.3074, abs=1e-4)
    assert est["RERI2(lowMD,highBMI | smoking=1)"] == pytest.approx(1.1032, abs=1e-4)
    assert est["RERI2(highBMI,smoking | lowMD=1)"] == pytest.approx(1.1935, abs=1e-4)
    assert est[f"TotI3({TRIPLE})"] == pytest.approx(1.1973, abs=1e-4)
    assert est[f"I3({TRIPLE})"] == pytest.approx(2.509, abs=1e-3)
    assert len(report.section(SECTION_ABSENT)) == 3
    assert len(report.section(SECTION_PRESENT)) == 3
    assert len(report.section(SECTION_MULTIPLICATIVE)) == 8
    assert report.section(SECTION_COEFFICIENTS)[-1] == "lowMD*highBMI*smoking"
    assert report.section(SECTION_HAZARD_RATIOS)[0] == "HR(lowMD)"
    assert report.cis == {}
    assert report.qualitative == ()
    assert report.qualitative_comparisons == 12
    assert [f.protective for f in report.flags] == [False, False, False]
    assert report.scale_relation is not None and report.scale_relation.consistent
    assert report.provenance["input_kind"] == "coefficients"


def test_intervals_with_covariance(table2_coeffs: CoefficientTable) -> None:
    report = run_pipeline(table2_coeffs, covariance=_diagonal(3))
    for name, estimate in report.estimates.items():
        lower, upper = report.cis[name]
        assert lower <= estimate <= upper
        assert report.standard_errors[name] >= 0.0
    for name in report.section(SECTION_MULTIPLICATIVE):
        assert report.cis[name][0] > 0.0
    hr = report.cis["HR(lowMD)"]
    assert hr[0] == pytest.approx(math.exp(0.36 - 1.959964 * 0.1), rel=1e-6)


def test_zero_coefficients_give_null_indices() -> None:
    coeffs = CoefficientTable.from_vector(factor_set(3), [0.0] * 7)
    report = run_pipeline(coeffs, PipelineOptions(protective_policy="error"))
    additive = [*report.section("tot_reri"), *report.section("reri")]
    assert [report.estimates[name] for name in additive] == [0.0, 0.0]
    for name in report.section(SECTION_MULTIPLICATIVE):
        assert report.estimates[name] == pytest.approx(1.0)


def test_detected_protective_factor_is_recoded() -> None:
    coeffs = CoefficientTable.from_vector(factor_set(2), [-0.7, 0.5, 0.3])
    covariance = CovarianceBlock(
        canonical_terms(2), np.array([[0.04, 0.01, -0.01], [0.01, 0.09, 0.0], [-0.01, 0.0, 0.16]])
    )
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        report = run_pipeline(coeffs, covariance=covariance)
    assert report.factors == ("not_x1", "x2")
    flag = report.flags[0]
    assert (flag.factor, flag.protective, flag.mode, flag.recoded) == ("x1", True, "surface", True)
    expected = flip_factor(surface_from_coefficients(coeffs), 0)
    assert report.estimates["RERI2(not_x1,x2)"] == pytest.approx(reri_n(expected), rel=1e-12)
    assert report.estimates["TotRERI2(not_x1,x2)"] == pytest.approx(tot_reri(expected), rel=1e-12)
    assert report.standard_errors["not_x1"] == pytest.approx(0.2)


def test_recode_coefficients_carries_covariance() -> None:
    rng = np.random.default_rng(21)
    coeffs = CoefficientTable.from_vector(factor_set(3), rng.normal(0.0, 0.5, size=7))
    root = rng.normal(0.0, 0.1, size=(7, 7))
    covariance = CovarianceBlock(canonical_terms(3), root @ root.T)
    recoded, block = recode_coefficients(coeffs, covariance, [0, 2])
    assert recoded.factor_set.names == ("not_x1", "x2", "not_x3")
    assert recoded.factor_set.risk_orientation == ("risk", "unknown", "risk")
    jacobian = recode_jacobian(3, 2) @ recode_jacobian(3, 0)
    np.testing.assert_allclose(recoded.vector(), jacobian @ coeffs.vector(), atol=1e-12)
    assert block is not None
    np.testing.assert_allclose(
        block.matrix, jacobian @ covariance.matrix @ jacobian.T, atol=1e-12
    )
    back, _ = recode_coefficients(recoded, None, [0, 2])
    assert back.factor_set.names == coeffs.factor_set.names
    np.testing.assert_allclose(back.vector(), coeffs.vector(), atol=1e-12)


def test_declared_protective_factor_is_always_recoded() -> None:
    fs = FactorSet(("drug", "x2"), ("protective", "risk"))
    coeffs = CoefficientTable.from_vector(fs, [0.2, 0.5, 0.1])
    report = run_pipeline(coeffs, PipelineOptions(protective_policy="ignore"))
    assert report.factors == ("not_drug", "x2")
    assert report.flags[0].mode == "declared"
    assert report.flags[0].recoded


def test_declared_risk_factor_is_left_alone_with_a_note() -> None:
    fs = FactorSet(("x1", "x2"), ("risk", "risk"))
    coeffs = CoefficientTable.from_vector(fs, [-0.4, 0.5, 0.1])
    with pytest.warns(ProtectiveFactorWarning):
        report = run_pipeline(coeffs)
    assert report.factors == ("x1", "x2")
    assert not report.flags[0].recoded
    assert any("not recoded" in note for note in report.notes)


def test_protective_policy_error_stops_the_pipeline() -> None:
    coeffs = CoefficientTable.from_vector(factor_set(2), [-0.4, 0.5, 0.1])
    options = PipelineOptions(protective_policy="error", recode_protective=False)
    with pytest.raises(PipelineError) as excinfo:
        run_pipeline(coeffs, options)
    assert excinfo.value.step == "orientation"
    assert isinstance(excinfo.value.cause, ProtectiveFactorError)


def test_screening_only(table2_coeffs: CoefficientTable) -> None:
    report = run_screening(table2_coeffs)
    assert report.estimates == {}
    assert report.qualitative_comparisons == 12
    assert report.scale_relation is None


def test_data_pipeline() -> None:
    cells = {0b00: (10, 100), 0b01: (20, 100), 0b10: (15, 100), 0b11: (30, 100)}
    report, fit = run_data_pipeline(cohort_from_counts(("x1", "x2"), cells))
    assert fit.converged
    assert report.estimates["x1"] == pytest.approx(0.8109, abs=1e-4)
    assert report.standard_errors["x1"] == pytest.approx(0.4167, abs=1e-4)
    assert "RERI2(x1,x2)" in report.cis
    assert report.provenance["input_kind"] == "data"
    assert report.provenance["fit_converged"] == "true"
    assert all(flag.mode == "data" for flag in report.flags)


def test_data_pipeline_recodes_protective_column() -> None:
    cells = {0b00: (30, 200), 0b01: (12, 200), 0b10: (60, 200), 0b11: (25, 200)}
    report, fit = run_data_pipeline(cohort_from_counts(("x1", "x2"), cells))
    assert report.factors == ("not_x1", "x2")
    assert fit.coefficients.factor_set.names == ("not_x1", "x2")
    assert report.estimates["not_x1"] > 0.0


def test_fit_failure_is_reported_as_pipeline_step() -> None:
    cells = {0b00: (10, 100), 0b01: (0, 100), 0b10: (15, 100), 0b11: (12, 100)}
    with pytest.raises(PipelineError) as excinfo:
        run_data_pipeline(cohort_from_counts(("x1", "x2"), cells))
    assert excinfo.value.step == "fit"
    assert isinstance(excinfo.value.cause, FitError)
