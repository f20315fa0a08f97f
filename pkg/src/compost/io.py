"""Reading and writing count tables and composition tables.

Tables are delimited text with cells in rows and samples in columns, as in
OTU tables.  The delimiter (comma, tab, semicolon or whitespace) is sniffed.
A header row is recognised by a non-numeric field, and so is a leading
column of row labels.  Lines starting with ``#`` are skipped.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass

import numpy as np


class TableParseError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.line = line


@dataclass(frozen=True)
class Table:
    values: np.ndarray  # rows x columns
    row_labels: tuple[str, ...] | None = None
    column_names: tuple[str, ...] | None = None
    label_header: str | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, key: str | int | None = None) -> tuple[np.ndarray, str | None]:
        """Select one column by name or 0-based index; ``None`` requires a single column."""
        ncol = self.values.shape[1]
        if key is None:
            if ncol != 1:
                raise ValueError(f"input has {ncol} columns; choose one with --column")
            idx = 0
        elif isinstance(key, int) or (isinstance(key, str) and key.isdigit()):
            idx = int(key)
            if not 0 <= idx < ncol:
                raise ValueError(f"column index {idx} out of range (0..{ncol - 1})")
        else:
            if not self.column_names or key not in self.column_names:
                raise ValueError(f"no column named {key!r}")
            idx = self.column_names.index(key)
        name = self.column_names[idx] if self.column_names else None
        return self.values[:, idx], name


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _split(line: str, delim: str | None) -> list[str]:
    if delim is None:
        return line.split()
    return [f.strip() for f in next(csv.reader([line], delimiter=delim))]


def _sniff(lines: list[str]) -> str | None:
    sample = "\n".join(lines[:20])
    try:
        return csv.Sniffer().sniff(sample, delimiters=",\t;").delimiter
    except csv.Error:
        pass
    for d in ("\t", ",", ";"):
        if d in lines[0]:
            return d
    return None


def read_table(path) -> Table:
    try:
        with open(path, newline="") as fh:
            raw = fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise TableParseError(path, None, f"not a text file ({exc.reason})") from exc
    numbered = [(i + 1, ln) for i, ln in enumerate(raw) if ln.strip() and not ln.lstrip().startswith("#")]
    if not numbered:
        raise TableParseError(path, None, "no data rows")
    delim = _sniff([ln for _, ln in numbered])
    rows = [(no, _split(ln, delim)) for no, ln in numbered]

    header = None
    first_no, first = rows[0]
    # a header has no numeric field after the (possible) label column
    if (len(first) > 1 and not any(_is_number(f) for f in first[1:])) or (
        len(first) == 1 and not _is_number(first[0])
    ):
        header = first
        rows = rows[1:]
    if not rows:
        raise TableParseError(path, first_no, "header without data rows")

    has_labels = all(not _is_number(r[0]) for _, r in rows) and len(rows[0][1]) > 1
    width = len(rows[0][1])
    labels, data = [], []
    for no, fields in rows:
        if len(fields) != width:
            raise TableParseError(path, no, f"expected {width} fields, found {len(fields)}")
        if has_labels:
            labels.append(fields[0])
            fields = fields[1:]
        try:
            data.append([float(f) for f in fields])
        except ValueError:
            bad = next(f for f in fields if not _is_number(f))
            raise TableParseError(path, no, f"non-numeric value {bad!r}") from None
    values = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        no = rows[int(np.flatnonzero(~np.isfinite(values).all(axis=1))[0])][0]
        raise TableParseError(path, no, "non-finite value")

    label_header = None
    names = None
    if header is not None:
        if has_labels and len(header) == values.shape[1] + 1:
            label_header, names = header[0], tuple(header[1:])
        elif len(header) == values.shape[1]:
            names = tuple(header)
        else:
            raise TableParseError(path, first_no, "header width does not match data")
    return Table(values, tuple(labels) if has_labels else None, names, label_header)


def format_value(x: float) -> str:
    return format(float(x), ".17g")


def write_atomic(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".compost-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_table(path, values, row_labels=None, column_names=None, label_header="cell", delimiter=",") -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    lines = []
    if column_names is not None:
        head = list(column_names)
        if row_labels is not None:
            head = [label_header or "cell"] + head
        lines.append(delimiter.join(head))
    for i, row in enumerate(values):
        fields = [format_value(v) for v in row]
        if row_labels is not None:
            fields = [row_labels[i]] + fields
        lines.append(delimiter.join(fields))
    write_atomic(path, "\n".join(lines) + "\n")
