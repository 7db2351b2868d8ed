#!/usr/bin/env python3

"""CSV output with bit-stable float formatting."""

import csv
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence, TextIO

import numpy as np

FLOAT_FORMAT = ".17g"


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), FLOAT_FORMAT)
    return str(value)


@contextmanager
def open_output(path: Optional[str]) -> Iterator[TextIO]:
    """Yield a text stream for ``path``, or stdout when no path is given."""
    if path is None or path == "-":
        yield sys.stdout
        return
    target = Path(path)
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", newline="") as f:
        yield f


def write_rows(stream: TextIO, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """Write header and rows; returns the number of data rows."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    count = 0
    for row in rows:
        writer.writerow([format_value(v) for v in row])
        count += 1
    return count


def write_csv(path: Optional[str], header: Sequence[str], rows: Iterable[Sequence]) -> int:
    with open_output(path) as stream:
        return write_rows(stream, header, rows)
