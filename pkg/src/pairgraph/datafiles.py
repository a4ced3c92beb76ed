"""Dataset directories: a JSON manifest plus one CSV matrix per subject and stage."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from pairgraph.model import PairedDataset

MANIFEST = "manifest.json"


class DataError(ValueError):
    """Malformed or inconsistent input data."""


def atomic_write(path, text: str) -> None:
    """Write ``text`` via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x: float) -> str:
    """17 significant digits; enough to round-trip any double."""
    return format(float(x), ".17g")


def matrix_to_csv(m, delimiter: str = ",") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    for row in np.atleast_2d(m):
        w.writerow(fmt(v) for v in row)
    return buf.getvalue()


def write_matrix(path, m, delimiter: str = ",") -> None:
    atomic_write(path, matrix_to_csv(m, delimiter))


def read_matrix(path, shape=None, label: str = "", delimiter: str = ",",
                header: bool = False) -> np.ndarray:
    """Parse a numeric CSV matrix, checking ``shape`` when given.

    Errors name ``label`` (e.g. the subject) and the offending row/column,
    both 1-based.
    """
    path = Path(path)
    tag = f"{label}: " if label else ""
    if not path.is_file():
        raise DataError(f"{tag}missing file {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter) if r]
    if header:
        rows = rows[1:]
    out = []
    for i, row in enumerate(rows, 1):
        vals = []
        for j, cell in enumerate(row, 1):
            try:
                vals.append(float(cell))
            except ValueError:
                raise DataError(
                    f"{tag}non-numeric cell {cell.strip()!r} at row {i}, column {j} "
                    f"of {path.name}") from None
        out.append(vals)
    widths = {len(r) for r in out}
    if len(widths) > 1:
        raise DataError(f"{tag}ragged rows in {path.name}")
    m = np.array(out, dtype=float).reshape(len(out), widths.pop() if widths else 0)
    if shape is not None and m.shape != tuple(shape):
        raise DataError(f"{tag}expected {shape[0]}×{shape[1]}, got {m.shape[0]}×{m.shape[1]}")
    if not np.isfinite(m).all():
        raise DataError(f"{tag}non-finite value in {path.name}")
    return m


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    try:
        man = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataError(f"missing manifest {path}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"manifest is not valid JSON: {e}") from None
    for key in ("n", "p", "q", "subjects"):
        if key not in man:
            raise DataError(f"manifest lacks {key!r}")
    for key in ("n", "p", "q"):
        if not isinstance(man[key], int) or man[key] < 1:
            raise DataError(f"manifest {key!r} must be a positive integer")
    subs = man["subjects"]
    if not isinstance(subs, list) or len(subs) != man["n"]:
        raise DataError(f"manifest declares n={man['n']} but lists "
                        f"{len(subs) if isinstance(subs, list) else 'no'} subjects")
    for s in subs:
        if not isinstance(s, dict) or not {"id", "pre", "post"} <= s.keys():
            raise DataError("each subject needs 'id', 'pre' and 'post'")
    man["_root"] = path.parent
    return man


def ingest_dataset(manifest_path) -> PairedDataset:
    man = load_manifest(manifest_path)
    root, p, q = man["_root"], man["p"], man["q"]
    delim = man.get("delimiter", ",")
    header = bool(man.get("header", False))
    pre, post, ids = [], [], []
    for s in man["subjects"]:
        sid = str(s["id"])
        for stage, acc in (("pre", pre), ("post", post)):
            acc.append(read_matrix(root / s[stage], (p, q), f"subject {sid} ({stage})",
                                   delim, header))
        ids.append(sid)
    try:
        return PairedDataset(np.stack(pre), np.stack(post), ids)
    except ValueError as e:
        raise DataError(str(e)) from None


def write_dataset(out_dir, dataset: PairedDataset) -> Path:
    """Write matrices under ``data/`` and the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    subjects = []
    for k, sid in enumerate(dataset.subject_ids):
        rel = {stage: f"data/{sid}_{stage}.csv" for stage in ("pre", "post")}
        write_matrix(out_dir / rel["pre"], dataset.pre[k])
        write_matrix(out_dir / rel["post"], dataset.post[k])
        subjects.append({"id": sid, **rel})
    man = {"n": dataset.n, "p": dataset.p, "q": dataset.q, "subjects": subjects}
    atomic_write(out_dir / MANIFEST, json.dumps(man, indent=2) + "\n")
    return out_dir / MANIFEST
