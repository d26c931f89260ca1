from __future__ import annotations

import logging
from pathlib import Path
from typing import Iterator

import pytest

from multiway.formats import parse_coefficient_spec
from multiway.lattice import RiskSurface, surface_from_coefficients
from multiway.model import CoefficientTable

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def reset_multiway_logger() -> Iterator[None]:
    # The CLI installs its own handler and stops propagation; caplog needs it back.
    yield
    logger = logging.getLogger("multiway")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.setLevel(logging.NOTSET)
    logger.propagate = True


@pytest.fixture
def table2_path() -> Path:
    return FIXTURES / "table2.json"


@pytest.fixture
def table2_coeffs(table2_path: Path) -> CoefficientTable:
    coeffs, _ = parse_coefficient_spec(table2_path.read_text(encoding="utf-8"))
    return coeffs


@pytest.fixture
def table2_surface(table2_coeffs: CoefficientTable) -> RiskSurface:
    return surface_from_coefficients(table2_coeffs)
