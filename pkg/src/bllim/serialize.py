"""Model document and CSV persistence.

Model files are canonical JSON (sorted keys, fixed indentation) so that a
serialize/deserialize/serialize round trip is byte-identical. All writes go
through a temp-file-then-rename so readers never observe partial files.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile

import numpy as np

from .errors import DataError
from .model import BlockStructure, InverseParams

MODEL_FORMAT_VERSION = 1


def atomic_write_text(path: str, text: str) -> None:
    """Write text to ``path`` via a temporary file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def canonical_json(document: dict) -> str:
    return json.dumps(document, sort_keys=True, indent=2) + "\n"


def model_to_dict(theta: InverseParams, report: dict | None = None) -> dict:
    """Serializable document for a fitted model (1-based block indices)."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "n_clusters": theta.n_clusters,
        "response_dim": theta.response_dim,
        "covariate_dim": theta.covariate_dim,
        "blocks": theta.structure.to_indices_1based(),
        "weights": theta.weights.tolist(),
        "response_means": theta.response_means.tolist(),
        "response_covs": theta.response_covs.tolist(),
        "coeffs": theta.coeffs.tolist(),
        "intercepts": theta.intercepts.tolist(),
        "residual_covs": theta.residual_covs.tolist(),
    }
    if report is not None:
        doc["report"] = report
    return doc


def model_from_dict(doc: dict) -> tuple[InverseParams, dict | None]:
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version!r}")
    structure = BlockStructure.from_indices_1based(
        doc["blocks"], doc["covariate_dim"])
    theta = InverseParams(
        weights=np.asarray(doc["weights"]),
        response_means=np.asarray(doc["response_means"]),
        response_covs=np.asarray(doc["response_covs"]),
        coeffs=np.asarray(doc["coeffs"]),
        intercepts=np.asarray(doc["intercepts"]),
        residual_covs=np.asarray(doc["residual_covs"]),
        structure=structure,
    )
    return theta, doc.get("report")


def save_model(path: str, theta: InverseParams, report: dict | None = None) -> None:
    atomic_write_text(path, canonical_json(model_to_dict(theta, report)))


def load_model(path: str) -> tuple[InverseParams, dict | None]:
    try:
        with open(path, encoding="utf-8") as handle:
            doc = json.load(handle)
    except OSError as exc:
        raise DataError(f"cannot read model file: {exc}", source=path) from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"model file is not valid JSON: {exc.msg}",
                        source=path, line=exc.lineno, column=exc.colno) from exc
    return model_from_dict(doc)


def write_matrix_csv(path: str, matrix: np.ndarray, columns: list[str]) -> None:
    """Write a numeric matrix with a header row (comma separated, UTF-8)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.shape[1] != len(columns):
        raise ValueError("column names do not match the matrix width")
    lines = [",".join(columns)]
    for row in matrix:
        lines.append(",".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_matrix_csv(path: str) -> tuple[np.ndarray, list[str]]:
    """Parse a headered numeric CSV; errors carry file, line and column."""
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read file: {exc}", source=path) from exc
    rows = [row for row in rows if row]
    if not rows:
        raise DataError("file is empty", source=path)
    header = [cell.strip() for cell in rows[0]]
    width = len(header)
    data = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DataError(
                f"ragged row: expected {width} cells, found {len(row)}",
                source=path, line=i)
        for j, cell in enumerate(row):
            try:
                data[i - 2, j] = float(cell)
            except ValueError:
                raise DataError(f"non-numeric cell {cell!r}",
                                source=path, line=i, column=j + 1) from None
    return data, header
