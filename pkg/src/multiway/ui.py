from __future__ import annotations

from contextlib import AbstractContextManager

from rich import box
from rich.console import Console
from rich.status import Status
from rich.table import Table
from rich.text import Text

from .fitting import FitResult


class StatusLine(AbstractContextManager["StatusLine"]):
    """Spinner on a terminal, plain progress lines otherwise."""

    def __init__(self, console: Console, message: str) -> None:
        self._console = console
        self._message = message
        self._status: Status | None = None

    def __enter__(self) -> "StatusLine":
        if self._console.is_terminal:
            self._status = self._console.status(self._message, spinner="dots")
            self._status.__enter__()
        else:
            self._console.print(self._message, markup=False)
        return self

    def update(self, message: str) -> None:
        self._message = message
        if self._status is not None:
            self._status.update(message)
        else:
            self._console.print(message, markup=False)

    def __exit__(self, exc_type, exc, exc_tb) -> bool | None:
        if self._status is not None:
            return self._status.__exit__(exc_type, exc, exc_tb)
        return False


def fit_summary(result: FitResult) -> Table:
    state = "converged" if result.converged else "NOT converged"
    table = Table(
        title=(
            f"Saturated logistic fit: {state} in {result.iterations} iterations, "
            f"log-likelihood {result.log_likelihood:.4f}"
        ),
        box=box.SIMPLE_HEAD,
    )
    for header in ("Column", "b", "se(b)", "z", "p"):
        table.add_column(header, justify="left" if header == "Column" else "right")
    for name, test in result.wald.items():
        table.add_row(
            Text(name),
            f"{test.estimate:.4f}",
            f"{test.standard_error:.4f}",
            f"{test.z:.2f}",
            f"{test.p_value:.4g}",
        )
    return table
