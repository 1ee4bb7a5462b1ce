"""Class-attribute predicate matrices and the pairwise margin function.

A predicate matrix is a K x A binary table: row y marks which attributes
class y possesses. The margin between two classes is the average Hamming
distance between their rows; it feeds the ranking hinge losses. Matrices
from disjoint class sets over the same attributes can be merged, which is
how text-only classes (rows without any images) extend a training set.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import CodedError


@dataclass(frozen=True)
class PredicateMatrix:
    """Immutable K x A binary class-attribute table.

    Construction accepts any K >= 0 so that merges can be expressed with
    empty operands; parsing and the training entry points enforce K >= 2.
    """

    class_names: tuple[str, ...]
    attribute_names: tuple[str, ...]
    rows: np.ndarray = field(repr=False)

    def __post_init__(self):
        if len(self.attribute_names) < 1:
            raise ValueError("need at least one attribute")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("class names must be pairwise distinct")
        if len(set(self.attribute_names)) != len(self.attribute_names):
            raise ValueError("attribute names must be pairwise distinct")
        if self.rows.shape != (len(self.class_names), len(self.attribute_names)):
            raise ValueError(f"rows shape {self.rows.shape} does not match names")
        if self.rows.size and not np.isin(self.rows, (0, 1)).all():
            raise ValueError("every cell must be exactly 0 or 1")
        self.rows.flags.writeable = False

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_attributes(self) -> int:
        return len(self.attribute_names)

    def index(self, class_name: str) -> int:
        try:
            return self.class_names.index(class_name)
        except ValueError:
            raise CodedError("E_UNKNOWN_TRUE_CLASS", f"class {class_name!r} not in predicate matrix") from None

    def row(self, class_name: str) -> np.ndarray:
        return self.rows[self.index(class_name)]

    def subset(self, class_names: Sequence[str]) -> "PredicateMatrix":
        """Rows for the given classes, in the order given."""
        idx = [self.index(name) for name in class_names]
        return PredicateMatrix(tuple(class_names), self.attribute_names, self.rows[idx].copy())


def parse_predicate_csv(lines: Iterable[str], binarize_threshold: float | None = None) -> PredicateMatrix:
    """Parse the predicate CSV: header ``class,<attr>,...``, one class per row.

    Without a threshold every cell must already be exactly 0 or 1; with one,
    cells >= threshold map to 1 and the rest to 0.
    """
    if binarize_threshold is not None and not (0.0 < binarize_threshold < 1.0):
        raise ValueError(f"binarize_threshold must lie in (0, 1), got {binarize_threshold}")
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise CodedError("E_BAD_HEADER", "empty predicate stream") from None
    if not header or header[0] != "class":
        raise CodedError("E_BAD_HEADER", "first header cell must be the literal 'class'")
    attribute_names = tuple(header[1:])
    if not attribute_names:
        raise CodedError("E_BAD_HEADER", "header names no attributes")
    if len(set(attribute_names)) != len(attribute_names):
        raise CodedError("E_DUP_ATTR", "duplicate attribute name in header")

    class_names: list[str] = []
    rows: list[list[int]] = []
    for lineno, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(attribute_names) + 1:
            raise CodedError(
                "E_RAGGED_ROW",
                f"row {lineno}: expected {len(attribute_names) + 1} cells, found {len(record)}",
            )
        name = record[0]
        if not name:
            raise CodedError("E_BAD_CELL", f"row {lineno}: empty class name")
        if name in class_names:
            raise CodedError("E_DUP_CLASS", f"row {lineno}: duplicate class {name!r}")
        cells = []
        for col, cell in zip(attribute_names, record[1:]):
            try:
                value = float(cell)
            except ValueError:
                raise CodedError("E_BAD_CELL", f"row {lineno}, attribute {col!r}: non-numeric cell {cell!r}") from None
            if binarize_threshold is None:
                if value not in (0.0, 1.0):
                    raise CodedError(
                        "E_NONBINARY",
                        f"row {lineno}, attribute {col!r}: cell {cell!r} not in {{0,1}} and no threshold given",
                    )
                cells.append(int(value))
            else:
                cells.append(1 if value >= binarize_threshold else 0)
        class_names.append(name)
        rows.append(cells)

    if len(class_names) < 2:
        raise CodedError("E_TOO_FEW_CLASSES", f"need at least 2 classes, found {len(class_names)}")
    return PredicateMatrix(tuple(class_names), attribute_names, np.array(rows, dtype=np.uint8))


def load_predicate_file(path, binarize_threshold: float | None = None) -> PredicateMatrix:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_predicate_csv(fh, binarize_threshold)


def format_predicate_csv(pm: PredicateMatrix) -> str:
    lines = ["class," + ",".join(pm.attribute_names)]
    for name, row in zip(pm.class_names, pm.rows):
        lines.append(name + "," + ",".join(str(int(c)) for c in row))
    return "\n".join(lines) + "\n"


def hamming_margin(row_a, row_b) -> float:
    """Fraction of positions where two equal-length binary rows differ."""
    a = np.asarray(row_a)
    b = np.asarray(row_b)
    if a.shape != b.shape or a.ndim != 1:
        raise CodedError("E_LENGTH_MISMATCH", f"rows have shapes {a.shape} and {b.shape}")
    if a.size < 1:
        raise CodedError("E_LENGTH_MISMATCH", "rows must have at least one position")
    return float(np.count_nonzero(a != b)) / a.size


def margin_matrix(pm: PredicateMatrix) -> np.ndarray:
    """K x K matrix of pairwise margins; symmetric with zero diagonal."""
    rows = pm.rows
    diff = rows[:, None, :] != rows[None, :, :]
    return diff.mean(axis=2)


def merge_predicates(base: PredicateMatrix, extra: PredicateMatrix) -> PredicateMatrix:
    """Append the rows of ``extra`` after those of ``base``.

    Requires identical attribute lists (same order) and disjoint class sets;
    base rows are preserved bit-exactly.
    """
    if base.attribute_names != extra.attribute_names:
        raise CodedError("E_ATTR_MISMATCH", "attribute names differ between the two matrices")
    collisions = set(base.class_names) & set(extra.class_names)
    if collisions:
        raise CodedError("E_CLASS_COLLISION", f"classes present in both matrices: {sorted(collisions)}")
    rows = np.concatenate([base.rows, extra.rows], axis=0)
    return PredicateMatrix(base.class_names + extra.class_names, base.attribute_names, rows)
