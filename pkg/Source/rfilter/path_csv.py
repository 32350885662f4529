"""
Path CSV files: a header `t,y1..yd[,a12,a13,...]`, one row per grid point,
numbers written with 17 significant digits (enough to round-trip a double).
Lines starting with `#` are comments.
"""
import csv
import re
from contextlib import nullcontext
from pathlib import Path
from typing import Iterable, Mapping, TextIO

import numpy as np
from numpy.typing import NDArray

from .rough_path import DEFAULT_ALPHA, EnhancedPath, PathError, lift_piecewise_linear


COMMENT = "#"
_VALUE = re.compile(r"y(\d+)$")
_AREA = re.compile(r"a(\d+)_?(\d+)$")


def format_number(x: float) -> str:
    return format(float(x), '.17g')


def area_columns(d: int) -> list[tuple[int, int]]:
    """ Upper triangular (i, j) pairs, 0-based, in column order. """
    return [(i, j) for i in range(d) for j in range(i + 1, d)]


def _area_name(i: int, j: int, d: int) -> str:
    return f"a{i + 1}{j + 1}" if d < 10 else f"a{i + 1}_{j + 1}"


def path_header(d: int, areas: bool = True) -> list[str]:
    header = ["t"] + [f"y{k + 1}" for k in range(d)]
    if areas:
        header += [_area_name(i, j, d) for i, j in area_columns(d)]
    return header


def write_path_csv(
    target: str | Path | TextIO,
    path: EnhancedPath,
    extra: Mapping[str, NDArray[np.float64]] | None = None
) -> None:
    """
    Writes `path` (and optional extra per-row columns) as path CSV to a
    file name or an open text stream.
    """
    d = path.dim
    pairs = area_columns(d)
    extra = dict(extra or {})
    for name, column in extra.items():
        if len(column) != path.size:
            raise ValueError(f"extra column '{name}' has {len(column)} rows, expected {path.size}")
    if isinstance(target, (str, Path)):
        opened = open(target, 'w', newline='', encoding='utf-8')
    else:
        opened = nullcontext(target)
    with opened as stream:
        writer = csv.writer(stream, lineterminator='\n')
        writer.writerow(path_header(d) + list(extra))
        for n in range(path.size):
            row = [path.times[n], *path.values[n], *(path.areas[n, i, j] for i, j in pairs)]
            row += [column[n] for column in extra.values()]
            writer.writerow([format_number(x) for x in row])


def _parse(rows: Iterable[list[str]], columns: list[int], source: str) -> NDArray[np.float64]:
    try:
        return np.array([[float(row[c]) for c in columns] for row in rows], dtype=float)
    except (ValueError, IndexError) as error:
        raise PathError(f"malformed number in {source}: {error}") from error


def read_path_csv(source: str | Path, alpha: float = DEFAULT_ALPHA) -> EnhancedPath:
    """
    Reads a path CSV. When the file carries no area columns the values are
    lifted piecewise-linearly. Unrecognised columns are ignored.
    """
    with open(source, newline='', encoding='utf-8') as stream:
        reader = csv.reader(line for line in stream if not line.startswith(COMMENT))
        try:
            header = [name.strip() for name in next(reader)]
        except StopIteration:
            raise PathError(f"{source} is empty") from None
        rows = [row for row in reader if row]
    if "t" not in header:
        raise PathError(f"{source} has no 't' column")
    value_index = {int(m.group(1)): k for k, name in enumerate(header) if (m := _VALUE.match(name))}
    d = len(value_index)
    if d == 0 or sorted(value_index) != list(range(1, d + 1)):
        raise PathError(f"{source} must have columns y1..yd, got {header}")
    table = _parse(rows, [header.index("t")] + [value_index[k] for k in range(1, d + 1)], str(source))
    times, values = table[:, 0], table[:, 1:]

    area_index: dict[tuple[int, int], int] = {}
    for k, name in enumerate(header):
        if m := _AREA.match(name):
            i, j = int(m.group(1)) - 1, int(m.group(2)) - 1
            if 0 <= i < j < d:
                area_index[(i, j)] = k
    if not area_index:
        return lift_piecewise_linear(times, values, alpha)
    pairs = area_columns(d)
    if set(area_index) != set(pairs):
        raise PathError(f"{source} has an incomplete set of area columns")
    upper = _parse(rows, [area_index[pair] for pair in pairs], str(source))
    areas = np.zeros((len(rows), d, d))
    for c, (i, j) in enumerate(pairs):
        areas[:, i, j] = upper[:, c]
        areas[:, j, i] = -upper[:, c]
    return EnhancedPath(times, values, areas, alpha)
