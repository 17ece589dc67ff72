"""Column-named numeric tables rendered as CSV and aligned text."""

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

from src.exceptions import CheckpointError, ConfigError

Cell = str | int | float


def format_number(value: float, raw: bool = False) -> str:
    """Six significant digits, or the shortest exact repr with ``raw``; always '.' decimals."""
    if not math.isfinite(value):
        return repr(value)
    if raw:
        return repr(float(value))
    text = f"{value:.6g}"
    return "0" if text == "-0" else text


def _cell(value: Cell, raw: bool) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_number(value, raw)
    return str(value)


@dataclass
class Table:
    """A grid of named columns; every row holds one cell per column."""

    columns: list[str]
    rows: list[list[Cell]] = field(default_factory=list)

    def add(self, *cells: Cell) -> None:
        if len(cells) != len(self.columns):
            raise ConfigError(f"Row has {len(cells)} cells for {len(self.columns)} columns")
        self.rows.append(list(cells))

    def column(self, name: str) -> list[Cell]:
        index = self.columns.index(name)
        return [row[index] for row in self.rows]

    def to_csv(self, raw: bool = False) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_cell(v, raw) for v in row])
        return buffer.getvalue()

    def to_text(self, raw: bool = False) -> str:
        """Left-aligned first column, right-aligned numbers."""
        cells = [list(self.columns)] + [[_cell(v, raw) for v in row] for row in self.rows]
        widths = [max(len(r[i]) for r in cells) for i in range(len(self.columns))]
        lines = []
        for r in cells:
            parts = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
            lines.append("  ".join(parts).rstrip())
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


def write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    except OSError as exc:
        raise CheckpointError(f"Cannot write {path}: {exc}") from exc
    return path


def write_table(table: Table, path: Path, raw: bool = False) -> Path:
    return write_text(path, table.to_csv(raw))
