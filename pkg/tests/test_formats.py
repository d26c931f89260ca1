import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from multiway.errors import ParseError
from multiway.formats import (
    dump_coefficient_spec,
    parse_coefficient_spec,
    parse_covariance_spec,
    parse_data_table,
    parse_simulation_spec,
    write_data_table,
)
from multiway.model import CoefficientTable

DATA_CSV = "x1,x2,outcome,age\n0,0,0,41\n1,0,1,55\n0,1,0,38\n1,1,1,62\n"


def _document(coefficients: dict[str, object], **extra: object) -> str:
    return json.dumps({"factors": ["x1", "x2", "x3"], "coefficients": coefficients, **extra})


def test_parse_table2(table2_path: Path) -> None:
    coeffs, covariance = parse_coefficient_spec(table2_path.read_text(encoding="utf-8"))
    assert covariance is None
    assert coeffs.saturated
    assert coeffs.factor_set.names == ("lowMD", "highBMI", "smoking")
    assert coeffs.factor_set.risk_orientation == ("risk", "risk", "risk")
    assert coeffs.coefficient(0b111) == 0.92
    assert list(coeffs.labels())[3] == "lowMD*highBMI"


def test_term_labels_are_canonicalized() -> None:
    text = _document({"x3*x1": 0.5, "x1": 0.1}, saturated=False)
    coeffs, _ = parse_coefficient_spec(text, allow_missing_terms=True)
    assert coeffs.coefficient(0b101) == 0.5
    assert list(coeffs.labels()) == ["x1", "x1*x3"]
    assert coeffs.factor_set.risk_orientation == ("unknown",) * 3


def test_missing_terms_need_explicit_opt_in() -> None:
    partial = {"x1": 0.1, "x2": 0.2, "x3": 0.3}
    with pytest.raises(ParseError, match="missing terms"):
        parse_coefficient_spec(_document(partial))
    with pytest.raises(ParseError, match="allow_missing_terms"):
        parse_coefficient_spec(_document(partial, saturated=False))
    coeffs, _ = parse_coefficient_spec(
        _document(partial, saturated=False), allow_missing_terms=True
    )
    assert not coeffs.saturated
    assert coeffs.coefficient(0b111) == 0.0


@pytest.mark.parametrize(
    "coefficients",
    [
        {"x1": 0.1, "x2": 0.2, "x1*x2": 0.3, "x2*x1": 0.3},
        {"x1": 0.1, "x4": 0.2},
        {"x1": 0.1, "x1*x1": 0.2},
        {"x1": "0.1"},
        {"x1": True},
        {},
    ],
)
def test_bad_coefficient_maps_are_rejected(coefficients: dict[str, object]) -> None:
    with pytest.raises(ParseError):
        parse_coefficient_spec(_document(coefficients, saturated=False), allow_missing_terms=True)


def test_duplicate_json_keys_are_rejected() -> None:
    text = '{"factors": ["x1", "x2"], "coefficients": {"x1": 0.1, "x1": 0.2}}'
    with pytest.raises(ParseError, match="Duplicate key"):
        parse_coefficient_spec(text)


def test_non_finite_coefficient_is_rejected() -> None:
    text = '{"factors": ["x1", "x2"], "coefficients": {"x1": NaN, "x2": 0.1, "x1*x2": 0.0}}'
    with pytest.raises(ParseError, match="not finite"):
        parse_coefficient_spec(text)


@pytest.mark.parametrize(
    "text",
    [
        "not json",
        "[1, 2]",
        '{"factors": "x1", "coefficients": {"x1": 0.1}}',
        '{"factors": ["x1"], "coefficients": {"x1": 0.1}}',
        '{"factors": ["x1", "x2"], "orientation": {"x1": "harmful"}, "coefficients": {"x1": 0.1}}',
        '{"factors": ["x1", "x2"], "saturated": "yes", "coefficients": {"x1": 0.1}}',
    ],
)
def test_malformed_documents(text: str) -> None:
    with pytest.raises(ParseError):
        parse_coefficient_spec(text)


def test_covariance_rows_use_canonical_order_inline_and_standalone() -> None:
    rows = [[0.01, 0.0, 0.0], [0.0, 0.04, 0.0], [0.0, 0.0, 0.09]]
    document = {"factors": ["x1", "x2"], "coefficients": {"x1*x2": 0.3, "x2": 0.2, "x1": 0.1}}
    coeffs, inline = parse_coefficient_spec(json.dumps({**document, "covariance": rows}))
    standalone = parse_covariance_spec(json.dumps(rows), coeffs)
    assert inline is not None
    for mask in (0b01, 0b10, 0b11):
        assert inline.standard_error(mask) == pytest.approx(standalone.standard_error(mask))
    assert inline.standard_error(0b01) == pytest.approx(0.1)
    assert inline.standard_error(0b11) == pytest.approx(0.3)


def test_inline_covariance_with_terms() -> None:
    text = json.dumps(
        {
            "factors": ["x1", "x2"],
            "coefficients": {"x1": 0.1, "x2": 0.2, "x1*x2": 0.3},
            "covariance": {
                "terms": ["x1*x2", "x2", "x1"],
                "covariance": [[0.09, 0.0, 0.0], [0.0, 0.04, 0.0], [0.0, 0.0, 0.01]],
            },
        }
    )
    _, covariance = parse_coefficient_spec(text)
    assert covariance is not None
    assert covariance.standard_error(0b11) == pytest.approx(0.3)
    assert covariance.standard_error(0b01) == pytest.approx(0.1)


def test_inline_covariance_shape_and_symmetry() -> None:
    base = {"factors": ["x1", "x2"], "coefficients": {"x1": 0.1, "x2": 0.2, "x1*x2": 0.3}}
    with pytest.raises(ParseError, match="3x3"):
        parse_coefficient_spec(json.dumps({**base, "covariance": [[1.0, 0.0], [0.0, 1.0]]}))
    asymmetric = [[1.0, 0.5, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
    with pytest.raises(ParseError, match="symmetric"):
        parse_coefficient_spec(json.dumps({**base, "covariance": asymmetric}))


def test_standalone_covariance(table2_coeffs: CoefficientTable) -> None:
    rows = np.diag(np.arange(1, 8) / 100.0).tolist()
    bare = parse_covariance_spec(json.dumps(rows), table2_coeffs)
    assert bare.standard_error(0b001) == pytest.approx(0.1)

    labelled = {
        "terms": ["smoking", "highBMI"],
        "covariance": [[0.04, 0.01], [0.01, 0.09]],
    }
    block = parse_covariance_spec(json.dumps(labelled), table2_coeffs)
    assert block.terms == (0b100, 0b010)
    assert block.standard_error(0b010) == pytest.approx(0.3)
    assert block.standard_error(0b001) == 0.0

    with pytest.raises(ParseError, match="twice"):
        parse_covariance_spec(
            json.dumps({"terms": ["lowMD", "lowMD"], "covariance": [[1, 0], [0, 1]]}),
            table2_coeffs,
        )
    with pytest.raises(ParseError, match="no 'covariance'"):
        parse_covariance_spec(json.dumps({"terms": ["lowMD"]}), table2_coeffs)


def test_dumped_coefficients_parse_back(table2_coeffs: CoefficientTable) -> None:
    _, covariance = parse_coefficient_spec(
        json.dumps(
            {
                "factors": list(table2_coeffs.factor_set.names),
                "coefficients": table2_coeffs.labels(),
                "covariance": np.diag(np.full(7, 0.01)).tolist(),
            }
        )
    )
    coeffs, back = parse_coefficient_spec(dump_coefficient_spec(table2_coeffs, covariance))
    np.testing.assert_array_equal(coeffs.vector(), table2_coeffs.vector())
    assert back is not None and covariance is not None
    np.testing.assert_array_equal(back.matrix, covariance.matrix)


def test_parse_data_table() -> None:
    table = parse_data_table(DATA_CSV, ["x1", "x2"], "outcome", confounders=["age"])
    assert table.n_rows == 4
    assert table.patterns().tolist() == [0, 1, 2, 3]
    assert table.outcomes().tolist() == [0, 1, 0, 1]
    assert table.confounders == ("age",)
    assert table.frame["age"].tolist() == [41, 55, 38, 62]


def test_data_table_reports_bad_cell() -> None:
    text = "x1,x2,outcome\n0,0,0\n2,0,1\n"
    with pytest.raises(ParseError) as excinfo:
        parse_data_table(text, ["x1", "x2"], "outcome")
    assert str(excinfo.value) == "Row 2, column 'x1': value '2' is not 0 or 1."


@pytest.mark.parametrize(
    ("text", "message"),
    [
        ("", "empty"),
        ("x1,x2,outcome\n", "no rows"),
        ("x1,outcome\n0,1\n", "no column 'x2'"),
        ("x1,x2,y\n0,1,1\n", "no outcome column"),
    ],
)
def test_data_table_structure_errors(text: str, message: str) -> None:
    with pytest.raises(ParseError, match=message):
        parse_data_table(text, ["x1", "x2"], "outcome")


def test_written_data_table_reads_back() -> None:
    table = parse_data_table(DATA_CSV, ["x1", "x2"], "outcome", confounders=["age"])
    text = write_data_table(table)
    assert text.splitlines()[0] == "x1,x2,outcome,age"
    again = parse_data_table(text, ["x1", "x2"], "outcome", confounders=["age"])
    pd.testing.assert_frame_equal(again.frame, table.frame)


def test_parse_simulation_spec() -> None:
    document = {
        "factors": ["x1", "x2"],
        "coefficients": {"x1": 0.69, "x2": 1.1},
        "saturated": False,
        "baseline_risk": 0.01,
        "size": 1000,
        "prevalence": {"x1": 0.2, "x2": 0.3},
        "seed": 5,
    }
    spec = parse_simulation_spec(json.dumps(document))
    assert spec.size == 1000
    assert spec.seed == 5
    assert spec.truth[0b11] == pytest.approx(np.exp(1.79))
    assert spec.prevalence[0b11] == pytest.approx(0.06)
    assert parse_simulation_spec(json.dumps(document), seed=9).seed == 9

    uniform = parse_simulation_spec(json.dumps({**document, "prevalence": None}))
    np.testing.assert_allclose(uniform.prevalence, np.full(4, 0.25))


@pytest.mark.parametrize(
    "change",
    [
        {"size": 10.5},
        {"size": 0},
        {"baseline_risk": "0.01"},
        {"baseline_risk": 0.5},
        {"prevalence": [0.5, 0.5]},
        {"prevalence": {"x9": 0.1}},
        {"seed": "abc"},
        {"outcome": ""},
    ],
)
def test_simulation_spec_errors(change: dict[str, object]) -> None:
    document = {
        "factors": ["x1", "x2"],
        "coefficients": {"x1": 0.69, "x2": 1.1, "x1*x2": 0.0},
        "baseline_risk": 0.01,
        "size": 1000,
        **change,
    }
    with pytest.raises(ParseError):
        parse_simulation_spec(json.dumps(document))
