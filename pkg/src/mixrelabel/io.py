"""CSV trace/dataset files with ``key=value`` metadata sidecars.

Trace CSV columns::

    iter, w_1..w_K, mu_1_1..mu_K_d, sigma_<k>_<a>_<b> (lower triangle,
    row-major), [z_1..z_n], [log_post]

Component, coordinate and allocation labels in files are 1-based.  Floats
are written with 17 significant digits so a write/read round trip is exact.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import DataFormatError
from .model import Dataset, MixtureSpec, Trace

FLOAT_FMT = "%.17g"


def meta_path(path) -> Path:
    return Path(path).with_suffix(".meta")


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT % value
    if isinstance(value, (list, tuple, np.ndarray)):
        return " ".join(_fmt(v) for v in np.asarray(value).ravel().tolist())
    return str(value)


def write_meta(path, meta: dict) -> None:
    lines = []
    for key, value in meta.items():
        text = _fmt(value)
        if "\n" in text or "=" in str(key):
            raise DataFormatError(f"metadata entry {key!r} cannot be serialised on one line")
        lines.append(f"{key}={text}\n")
    _write_text(meta_path(path), "".join(lines))


def read_meta(path) -> dict:
    mp = meta_path(path)
    if not mp.exists():
        raise DataFormatError(f"missing metadata sidecar {mp}")
    meta = {}
    for lineno, line in enumerate(mp.read_text().splitlines(), 1):
        if not line.strip():
            continue
        if "=" not in line:
            raise DataFormatError(f"{mp}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        meta[key.strip()] = value.strip()
    return meta


def _write_text(path, text: str) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataFormatError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _write_rows(path, header, rows_text: str) -> None:
    _write_text(path, ",".join(header) + "\n" + rows_text)


def _matrix_text(columns) -> str:
    """Render columns (list of (array, fmt)) as CSV rows."""
    if not columns:
        return ""
    n = len(columns[0][0])
    parts = []
    for arr, fmt in columns:
        arr = np.asarray(arr)
        arr = arr.reshape(n, arr.size // n if n else 0)
        parts.append(np.char.mod(fmt, arr))
    table = np.concatenate(parts, axis=1)
    return "".join(",".join(row) + "\n" for row in table.tolist())


def _read_table(path):
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"no such file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    try:
        values = np.array(rows, dtype=float).reshape(len(rows), len(header))
    except ValueError as exc:
        raise DataFormatError(f"{path}: malformed numeric table ({exc})") from exc
    return [h.strip() for h in header], values


# --------------------------------------------------------------------------
# traces
# --------------------------------------------------------------------------

def trace_header(K: int, d: int, n: Optional[int], log_post: bool) -> list:
    cols = ["iter"] + [f"w_{k + 1}" for k in range(K)]
    cols += [f"mu_{k + 1}_{a + 1}" for k in range(K) for a in range(d)]
    rows, cols_ = np.tril_indices(d)
    cols += [f"sigma_{k + 1}_{a + 1}_{b + 1}" for k in range(K) for a, b in zip(rows, cols_)]
    if n is not None:
        cols += [f"z_{i + 1}" for i in range(n)]
    if log_post:
        cols.append("log_post")
    return cols


def write_trace(path, trace: Trace, extra_meta: Optional[dict] = None) -> None:
    M, K, d = len(trace), trace.K, trace.d
    header = trace_header(K, d, trace.n, trace.log_posterior is not None)
    rows, cols = np.tril_indices(d)
    columns = [(trace.iters, "%d"), (trace.weights, FLOAT_FMT),
               (trace.means.reshape(M, K * d), FLOAT_FMT),
               (trace.covs[:, :, rows, cols].reshape(M, K * len(rows)), FLOAT_FMT)]
    if trace.allocations is not None:
        columns.append((trace.allocations + 1, "%d"))
    if trace.log_posterior is not None:
        columns.append((trace.log_posterior, FLOAT_FMT))
    _write_rows(path, header, _matrix_text(columns) if M else "")
    meta = {"K": K, "d": d, "n": trace.n if trace.n is not None else "",
            "M": M, "dataset_id": trace.dataset_id,
            "has_allocation": trace.allocations is not None,
            "has_log_post": trace.log_posterior is not None}
    meta.update({k: v for k, v in trace.meta.items() if k not in meta})
    meta.update(extra_meta or {})
    write_meta(path, meta)


def read_trace(path, validate: bool = True) -> Trace:
    meta = read_meta(path)
    try:
        K, d = int(meta["K"]), int(meta["d"])
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{meta_path(path)}: K and d are required integers") from exc
    has_z = meta.get("has_allocation") == "true"
    has_lp = meta.get("has_log_post") == "true"
    n = int(meta["n"]) if has_z else None
    header, values = _read_table(path)
    expected = trace_header(K, d, n, has_lp)
    if header != expected:
        raise DataFormatError(
            f"{path}: column layout does not match metadata (expected {len(expected)} columns "
            f"starting {expected[:4]}, got {len(header)} starting {header[:4]})")
    M = values.shape[0]
    pos = 0

    def take(width):
        nonlocal pos
        block = values[:, pos:pos + width]
        pos += width
        return block

    iters = take(1)[:, 0].astype(np.int64)
    weights = take(K)
    means = take(K * d).reshape(M, K, d)
    tri = take(K * d * (d + 1) // 2).reshape(M, K, -1)
    rows, cols = np.tril_indices(d)
    covs = np.zeros((M, K, d, d))
    covs[:, :, rows, cols] = tri
    covs[:, :, cols, rows] = tri
    z = take(n).astype(np.intp) - 1 if has_z else None
    lp = take(1)[:, 0] if has_lp else None
    reserved = {"K", "d", "n", "M", "dataset_id", "has_allocation", "has_log_post"}
    trace = Trace(weights, means, covs, z, lp, iters, meta.get("dataset_id", ""),
                  {k: v for k, v in meta.items() if k not in reserved})
    return trace.validate() if validate else trace


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------

def spec_meta(spec: MixtureSpec, prefix: str = "true") -> dict:
    return {f"{prefix}_K": spec.K, f"{prefix}_d": spec.d,
            f"{prefix}_weights": spec.weights, f"{prefix}_means": spec.means,
            f"{prefix}_covs": spec.covs}


def spec_from_meta(meta: dict, prefix: str = "true") -> Optional[MixtureSpec]:
    if f"{prefix}_K" not in meta:
        return None
    K, d = int(meta[f"{prefix}_K"]), int(meta[f"{prefix}_d"])

    def vec(key):
        return np.array([float(v) for v in meta[key].split()])

    return MixtureSpec(vec(f"{prefix}_weights"), vec(f"{prefix}_means").reshape(K, d),
                       vec(f"{prefix}_covs").reshape(K, d, d))


def write_dataset(path, data: Dataset) -> None:
    d = data.d
    header = [f"x_{a + 1}" for a in range(d)]
    columns = [(data.points, FLOAT_FMT)]
    if data.true_allocation is not None:
        header.append("z_true")
        columns.append((data.true_allocation + 1, "%d"))
    _write_rows(path, header, _matrix_text(columns))
    meta = {"n": data.n, "d": d, "dataset_id": data.dataset_id,
            "has_truth": data.true_allocation is not None}
    if data.true_spec is not None:
        meta.update(spec_meta(data.true_spec))
    meta.update({k: v for k, v in data.meta.items() if k not in meta})
    write_meta(path, meta)


def read_dataset(path) -> Dataset:
    meta = read_meta(path)
    header, values = _read_table(path)
    d = int(meta.get("d", sum(h.startswith("x_") for h in header)))
    if header[:d] != [f"x_{a + 1}" for a in range(d)]:
        raise DataFormatError(f"{path}: expected columns x_1..x_{d}, got {header}")
    z = None
    if "z_true" in header:
        z = values[:, header.index("z_true")].astype(np.intp) - 1
    reserved = {"n", "d", "dataset_id", "has_truth", "true_K", "true_d", "true_weights",
                "true_means", "true_covs"}
    return Dataset(values[:, :d], z, spec_from_meta(meta), meta.get("dataset_id", ""),
                   {k: v for k, v in meta.items() if k not in reserved})


# --------------------------------------------------------------------------
# permutation logs
# --------------------------------------------------------------------------

def write_permutation_log(path, iters, perms) -> None:
    perms = np.asarray(perms)
    K = perms.shape[1]
    header = ["iter"] + [f"nu_{k + 1}" for k in range(K)]
    _write_rows(path, header, _matrix_text([(np.asarray(iters), "%d"), (perms + 1, "%d")]))


def read_permutation_log(path):
    header, values = _read_table(path)
    perms = values[:, 1:].astype(np.intp) - 1
    K = perms.shape[1]
    if not np.all(np.sort(perms, axis=1) == np.arange(K)):
        raise DataFormatError(f"{path}: rows are not permutations of 1..{K}")
    return values[:, 0].astype(np.int64), perms


def write_table(path, header, rows) -> None:
    """Small heterogeneous CSV (mixed strings and numbers)."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def read_table(path):
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataFormatError(f"{path} is empty")
    return rows[0], rows[1:]


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataFormatError(f"cannot create output directory {path}: {exc.strerror}") from exc
    if not os.access(path, os.W_OK):
        raise DataFormatError(f"output directory {path} is not writable")
    return path
