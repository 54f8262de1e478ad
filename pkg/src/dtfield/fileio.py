"""Text interchange formats for tensor fields, masks, and DWI stacks.

Three line-oriented formats, each with a versioned magic header:

  DTF1 <width> <height> <m> <z>   then width*height pixel lines, row-major,
                                  six space-separated floats per line in the
                                  layout [a11 a22 a33 a12 a13 a23].
  MSK1 <width> <height>           then height rows of 0/1 characters.
  DWI1 <width> <height> <k> <b> <a0>  then k unit-direction lines gx gy gz,
                                  then k image blocks, each height lines of
                                  width space-separated values.

Floats are written with shortest round-trip precision, so write -> read is
exact and rewriting the same object is byte-identical.
"""
from __future__ import annotations

import numpy as np

from .field import Mask, TensorField
from .synth import DwiSet


class FormatError(ValueError):
    """An interchange file violates its format; the message names the line."""


def _fail(line_no: int, message: str):
    raise FormatError(f"line {line_no}: {message}")


def _parse_int(token: str, line_no: int, what: str) -> int:
    try:
        value = int(token)
    except ValueError:
        _fail(line_no, f"{what} must be an integer, got {token!r}")
    if value < 1:
        _fail(line_no, f"{what} must be >= 1, got {value}")
    return value


def _parse_float(token: str, line_no: int, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        _fail(line_no, f"{what} must be a number, got {token!r}")


def _body_rows(lines: list[str], expected: int, what: str) -> list[tuple[int, str]]:
    """Non-empty body lines with 1-based numbers; exactly `expected` of them."""
    rows = [(no, line.strip()) for no, line in enumerate(lines[1:], start=2)]
    while rows and not rows[-1][1]:
        rows.pop()
    for no, line in rows:
        if not line:
            _fail(no, f"blank line inside the {what} block")
    if len(rows) < expected:
        last = rows[-1][0] if rows else 1
        _fail(last, f"file ends after {len(rows)} of {expected} {what} lines")
    if len(rows) > expected:
        _fail(rows[expected][0], f"unexpected extra line after {expected} {what} lines")
    return rows


def _floats_row(row: tuple[int, str], count: int, what: str) -> list[float]:
    no, line = row
    tokens = line.split()
    if len(tokens) != count:
        _fail(no, f"expected {count} {what}, got {len(tokens)}")
    return [_parse_float(tok, no, what) for tok in tokens]


# ---- tensor fields (DTF1) ----

def field_to_text(w: TensorField) -> str:
    lines = [f"DTF1 {w.width} {w.height} 3 {w.log_bound!r}"]
    for pixel in w.coeffs.reshape(-1, 6):
        lines.append(" ".join(repr(float(v)) for v in pixel))
    return "\n".join(lines) + "\n"


def field_from_text(text: str) -> TensorField:
    lines = text.splitlines()
    if not lines:
        _fail(1, "empty file, expected a 'DTF1 <width> <height> <m> <z>' header")
    header = lines[0].split()
    if len(header) != 5 or header[0] != "DTF1":
        _fail(1, f"expected header 'DTF1 <width> <height> <m> <z>', got {lines[0]!r}")
    width = _parse_int(header[1], 1, "width")
    height = _parse_int(header[2], 1, "height")
    dim = _parse_int(header[3], 1, "matrix dimension")
    if dim != 3:
        _fail(1, f"only 3x3 tensors are supported, got m={dim}")
    bound = _parse_float(header[4], 1, "log-norm bound")
    rows = _body_rows(lines, height * width, "pixel")
    coeffs = np.array([_floats_row(row, 6, "coefficients") for row in rows])
    return TensorField(coeffs.reshape(height, width, 6), bound)


# ---- masks (MSK1) ----

def mask_to_text(mask: Mask) -> str:
    lines = [f"MSK1 {mask.width} {mask.height}"]
    for row in mask.values:
        lines.append("".join("1" if v else "0" for v in row))
    return "\n".join(lines) + "\n"


def mask_from_text(text: str) -> Mask:
    lines = text.splitlines()
    if not lines:
        _fail(1, "empty file, expected a 'MSK1 <width> <height>' header")
    header = lines[0].split()
    if len(header) != 3 or header[0] != "MSK1":
        _fail(1, f"expected header 'MSK1 <width> <height>', got {lines[0]!r}")
    width = _parse_int(header[1], 1, "width")
    height = _parse_int(header[2], 1, "height")
    rows = _body_rows(lines, height, "mask row")
    values = np.zeros((height, width), dtype=bool)
    for i, (no, line) in enumerate(rows):
        if len(line) != width or set(line) - {"0", "1"}:
            _fail(no, f"expected {width} characters of 0/1, got {line!r}")
        values[i] = [ch == "1" for ch in line]
    return Mask(values)


# ---- DWI stacks (DWI1) ----

def dwis_to_text(dwis: DwiSet) -> str:
    k = dwis.directions.shape[0]
    lines = [f"DWI1 {dwis.width} {dwis.height} {k} "
             f"{dwis.b_value!r} {dwis.a0!r}"]
    for g in dwis.directions:
        lines.append(" ".join(repr(float(v)) for v in g))
    for image in dwis.images:
        for row in image:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def dwis_from_text(text: str) -> DwiSet:
    lines = text.splitlines()
    if not lines:
        _fail(1, "empty file, expected a 'DWI1 <width> <height> <k> <b> <a0>' header")
    header = lines[0].split()
    if len(header) != 6 or header[0] != "DWI1":
        _fail(1, f"expected header 'DWI1 <width> <height> <k> <b> <a0>', got {lines[0]!r}")
    width = _parse_int(header[1], 1, "width")
    height = _parse_int(header[2], 1, "height")
    count = _parse_int(header[3], 1, "direction count")
    b_value = _parse_float(header[4], 1, "b-value")
    a0 = _parse_float(header[5], 1, "reference signal")
    rows = _body_rows(lines, count + count * height, "direction/image")
    directions = np.array([_floats_row(row, 3, "direction components")
                           for row in rows[:count]])
    values = np.array([_floats_row(row, width, "image values")
                       for row in rows[count:]])
    return DwiSet(directions, b_value, a0, values.reshape(count, height, width))


# ---- path wrappers ----

def _write(path, text: str):
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(text)


def _read(path) -> str:
    with open(path, "r", encoding="ascii") as fh:
        return fh.read()


def write_field(w: TensorField, path):
    _write(path, field_to_text(w))


def read_field(path) -> TensorField:
    return field_from_text(_read(path))


def write_mask(mask: Mask, path):
    _write(path, mask_to_text(mask))


def read_mask(path) -> Mask:
    return mask_from_text(_read(path))


def write_dwis(dwis: DwiSet, path):
    _write(path, dwis_to_text(dwis))


def read_dwis(path) -> DwiSet:
    return dwis_from_text(_read(path))
