"""Text file formats: attribute profiles, class lists, reports, histories.

Profile CSV: header ``image_id,true_class,<attr_1>,...,<attr_A>``; posterior
cells are decimals in [0, 1]. The attribute columns define the canonical
attribute order; when an expected order is supplied the header must match
it exactly. Report JSON carries floats at 17 significant digits so values
survive a write/read round trip bit-exactly. All writes are atomic
(temp file then rename).
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from typing import Iterable, Sequence

import numpy as np

from .errors import CodedError
from .model import AttributeProfile, EvaluationReport
from .training import TrainingHistory


def parse_attribute_profiles(
    lines: Iterable[str], attr_names: Sequence[str] | None = None
) -> tuple[list[AttributeProfile], tuple[str, ...]]:
    """Parse profiles; returns them with the attribute order in force.

    ``attr_names=None`` infers the order from the header; otherwise the
    header's attribute columns must match the given order exactly.
    """
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise CodedError("E_BAD_HEADER", "empty profile stream") from None
    if len(header) < 3 or header[0] != "image_id" or header[1] != "true_class":
        raise CodedError("E_BAD_HEADER", "header must be image_id,true_class,<attributes...>")
    file_attrs = tuple(header[2:])
    if attr_names is not None and tuple(attr_names) != file_attrs:
        raise CodedError(
            "E_ATTR_ORDER_MISMATCH",
            f"profile attribute columns {list(file_attrs)} do not match expected {list(attr_names)}",
        )
    profiles = []
    for lineno, record in enumerate(reader, start=2):
        if not record:
            continue
        if len(record) != len(file_attrs) + 2:
            raise CodedError(
                "E_RAGGED_ROW", f"row {lineno}: expected {len(file_attrs) + 2} cells, found {len(record)}"
            )
        image_id, true_class = record[0], record[1]
        values = np.empty(len(file_attrs))
        for j, (col, cell) in enumerate(zip(file_attrs, record[2:])):
            try:
                value = float(cell)
            except ValueError:
                raise CodedError(
                    "E_BAD_CELL", f"row {lineno}, attribute {col!r}: non-numeric cell {cell!r}"
                ) from None
            if not np.isfinite(value) or value < 0.0 or value > 1.0:
                raise CodedError(
                    "E_OUT_OF_RANGE",
                    f"row {lineno}, attribute {col!r}: posterior {cell!r} outside [0, 1]",
                )
            values[j] = value
        profiles.append(AttributeProfile(image_id, true_class, values))
    return profiles, file_attrs


def load_profile_file(path, attr_names: Sequence[str] | None = None):
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_attribute_profiles(fh, attr_names)


def format_attribute_profiles(profiles: Sequence[AttributeProfile], attr_names: Sequence[str]) -> str:
    lines = ["image_id,true_class," + ",".join(attr_names)]
    for p in profiles:
        lines.append(f"{p.image_id},{p.true_class}," + ",".join(repr(float(x)) for x in p.posteriors))
    return "\n".join(lines) + "\n"


def parse_class_list(lines: Iterable[str]) -> list[str]:
    """One class name per line; blank lines skipped."""
    names = [line.strip() for line in lines]
    names = [n for n in names if n]
    if not names:
        raise CodedError("E_EMPTY", "class list has no entries")
    if len(set(names)) != len(names):
        raise CodedError("E_DUP_CLASS", "class list contains duplicates")
    return names


def load_class_list(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return parse_class_list(fh)


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    try:
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise CodedError("E_IO", f"cannot write {path}: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _fmt_float(x: float) -> str:
    # 17 significant digits round-trip any float64; force a decimal point so
    # JSON readers keep the value a float.
    s = f"{float(x):.17g}"
    if not any(c in s for c in ".eE"):
        s += ".0"
    return s


def format_report_json(report: EvaluationReport) -> str:
    """Report schema: normalized accuracy, per-class accuracies (sorted by
    name), sparse confusion counts (zero entries omitted), image count."""
    per_class = ",\n".join(
        f"    {json.dumps(name)}: {_fmt_float(acc)}"
        for name, acc in sorted(report.per_class_accuracy.items())
    )
    confusion_entries = []
    for (true, predicted), count in sorted(report.confusion.items()):
        if count == 0:
            continue
        confusion_entries.append(
            f"    {{\"true\": {json.dumps(true)}, \"predicted\": {json.dumps(predicted)}, \"count\": {count}}}"
        )
    confusion = ",\n".join(confusion_entries)
    return (
        "{\n"
        f'  "normalized_accuracy": {_fmt_float(report.normalized_accuracy)},\n'
        '  "per_class": {\n' + per_class + "\n  },\n"
        '  "confusion": [\n' + confusion + "\n  ],\n"
        f'  "n_images": {report.n_images}\n'
        "}\n"
    )


def write_report(report: EvaluationReport, path) -> None:
    atomic_write_text(path, format_report_json(report))


def format_history_csv(history: TrainingHistory) -> str:
    lines = ["iteration,objective,val_accuracy"]
    for rec in history.records:
        val = "" if rec.val_accuracy is None else repr(float(rec.val_accuracy))
        lines.append(f"{rec.iteration},{repr(float(rec.objective))},{val}")
    return "\n".join(lines) + "\n"


def write_history(history: TrainingHistory, path) -> None:
    atomic_write_text(path, format_history_csv(history))
