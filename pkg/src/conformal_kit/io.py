"""Flat-text file formats.

CSV inputs
    scores ``score[,group]``; softmax ``p_0..p_{K-1}[,label]``; quantile
    ``t_lo,t_hi[,y]``; point-scale ``f,u[,y]``; density
    ``d_0..d_{m-1}[,label]``; loss table ``lambda:<v1>,lambda:<v2>,...``.
JSON
    calibration artifacts; prediction sets and masks as JSON lines.

CSV numbers are written with 12 significant digits. JSON files keep full
float precision so artifacts and set files round-trip exactly; infinities
are spelled ``"inf"`` / ``"-inf"``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import re
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .core import CalibrationArtifact, Interval, Labels, Mask, ValidationError
from .rcps import LossTable

PathLike = Union[str, os.PathLike]

_LAMBDA_COL = re.compile(r"^lambda:(.+)$")


class FormatError(ValidationError):
    """A file does not follow its declared schema."""


# ---------------------------------------------------------------------------
# Scalars
# ---------------------------------------------------------------------------


def format_number(x) -> str:
    """12 significant digits, ``inf``/``-inf`` spelled out."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return format(x, ".12g")


def _encode_float(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        raise FormatError("NaN cannot be serialized")
    return x


def _decode_float(v) -> float:
    if isinstance(v, str):
        if v in ("inf", "+inf", "Infinity"):
            return math.inf
        if v in ("-inf", "-Infinity"):
            return -math.inf
        raise FormatError(f"not a number: {v!r}")
    if v is None:
        raise FormatError("missing number")
    return float(v)


def _parse_cell(text: str, where: str) -> float:
    try:
        val = float(text)
    except ValueError:
        raise FormatError(f"{where}: not a number: {text!r}") from None
    if math.isnan(val):
        raise FormatError(f"{where}: NaN is not allowed")
    return val


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------


def _read_table(path: PathLike) -> tuple[list[str], list[list[str]]]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise FormatError(f"{p}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise FormatError(f"{p}:{i}: expected {len(header)} columns, got {len(r)}")
    return header, body


def write_csv(path: PathLike, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([format_number(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _numeric(body: list[list[str]], cols: Sequence[int], path) -> np.ndarray:
    out = np.empty((len(body), len(cols)))
    for i, r in enumerate(body):
        for j, c in enumerate(cols):
            out[i, j] = _parse_cell(r[c].strip(), f"{path}:{i + 2}")
    return out


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------


def read_scores_csv(path: PathLike) -> tuple[np.ndarray, Optional[np.ndarray]]:
    header, body = _read_table(path)
    if header[0] != "score" or len(header) > 2 or (len(header) == 2 and header[1] != "group"):
        raise FormatError(f"{path}: expected header 'score[,group]', got {','.join(header)}")
    data = _numeric(body, range(len(header)), path)
    if data.shape[0] == 0:
        raise FormatError(f"{path}: no scores")
    if not np.all(np.isfinite(data[:, 0])):
        raise FormatError(f"{path}: scores must be finite")
    groups = data[:, 1].astype(int) if len(header) == 2 else None
    return data[:, 0], groups


def write_scores_csv(path: PathLike, scores, groups=None) -> None:
    if groups is None:
        write_csv(path, ["score"], ([float(s)] for s in scores))
    else:
        write_csv(path, ["score", "group"], ([float(s), int(g)] for s, g in zip(scores, groups)))


# ---------------------------------------------------------------------------
# Model outputs
# ---------------------------------------------------------------------------

_LABEL_COLS = {"softmax": "label", "density": "label", "quantile": "y", "point_scale": "y"}


def _indexed_columns(header: list[str], prefix: str) -> list[int]:
    cols = [i for i, h in enumerate(header) if re.fullmatch(rf"{prefix}_\d+", h)]
    expected = [f"{prefix}_{k}" for k in range(len(cols))]
    if [header[i] for i in cols] != expected:
        raise FormatError(f"columns must be {prefix}_0..{prefix}_{len(cols) - 1} in order")
    return cols


def detect_output_kind(header: Sequence[str]) -> str:
    h = list(header)
    if h[:2] == ["t_lo", "t_hi"]:
        return "quantile"
    if h[:2] == ["f", "u"]:
        return "point_scale"
    if h and h[0] == "p_0":
        return "softmax"
    if h and h[0] == "d_0":
        return "density"
    raise FormatError(f"unrecognized model-output header: {','.join(h)}")


def read_outputs_csv(path: PathLike) -> tuple[str, np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """Read a model-output CSV; returns ``(kind, outputs, labels, groups)``.

    An optional trailing ``group`` column is accepted after the label.
    """
    header, body = _read_table(path)
    kind = detect_output_kind(header)
    if kind in ("softmax", "density"):
        cols = _indexed_columns(header, "p" if kind == "softmax" else "d")
    else:
        cols = [0, 1]
    rest = header[len(cols):]
    label_name = _LABEL_COLS[kind]
    allowed = [[], [label_name], [label_name, "group"], ["group"]]
    if rest not in allowed:
        raise FormatError(f"{path}: unexpected trailing columns {rest}")
    data = _numeric(body, range(len(header)), path)
    outputs = data[:, : len(cols)]
    labels = data[:, len(cols)] if label_name in rest else None
    groups = data[:, -1].astype(int) if "group" in rest else None
    if kind in ("softmax", "density") and labels is not None:
        if np.any(labels != np.round(labels)):
            raise FormatError(f"{path}: {label_name} must be an integer index")
        labels = labels.astype(int)
    if kind == "softmax":
        from .core import SOFTMAX_TOL

        sums = outputs.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1) > SOFTMAX_TOL)
        if bad.size or np.any(outputs < 0) or np.any(outputs > 1):
            row = int(bad[0]) + 2 if bad.size else "?"
            raise FormatError(f"{path}:{row}: softmax rows must be probability vectors")
        outputs = outputs / sums[:, None]
    return kind, outputs, labels, groups


def write_outputs_csv(path: PathLike, kind: str, outputs, labels=None, groups=None) -> None:
    outputs = np.asarray(outputs, dtype=float)
    if kind == "softmax":
        header = [f"p_{k}" for k in range(outputs.shape[1])]
    elif kind == "density":
        header = [f"d_{k}" for k in range(outputs.shape[1])]
    elif kind == "quantile":
        header = ["t_lo", "t_hi"]
    elif kind == "point_scale":
        header = ["f", "u"]
    else:
        raise FormatError(f"no CSV schema for {kind!r} outputs")
    rows = [list(map(float, o)) for o in outputs]
    if labels is not None:
        header.append(_LABEL_COLS[kind])
        integer = kind in ("softmax", "density")
        for r, y in zip(rows, labels):
            r.append(int(y) if integer else float(y))
    if groups is not None:
        header.append("group")
        for r, g in zip(rows, groups):
            r.append(int(g))
    write_csv(path, header, rows)


def read_labels_csv(path: PathLike, column: str = "label") -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Read a labels column plus any other numeric columns (groups, splits)."""
    header, body = _read_table(path)
    if column not in header:
        raise FormatError(f"{path}: no {column!r} column (have {','.join(header)})")
    data = _numeric(body, range(len(header)), path)
    cols = {h: data[:, i] for i, h in enumerate(header)}
    return cols.pop(column), cols


# ---------------------------------------------------------------------------
# Loss tables
# ---------------------------------------------------------------------------


def read_loss_table(path: PathLike) -> LossTable:
    """Parse a loss-table CSV; contract violations surface from ``LossTable``."""
    header, body = _read_table(path)
    lambdas = []
    for h in header:
        m = _LAMBDA_COL.match(h)
        if not m:
            raise FormatError(f"{path}: loss-table columns must look like 'lambda:<v>', got {h!r}")
        lambdas.append(_parse_cell(m.group(1), f"{path}:1"))
    losses = _numeric(body, range(len(header)), path)
    if losses.shape[0] == 0:
        raise FormatError(f"{path}: no loss rows")
    return LossTable(np.array(lambdas), losses)


def write_loss_table(path: PathLike, table: LossTable) -> None:
    header = [f"lambda:{format_number(l)}" for l in table.lambdas]
    write_csv(path, header, ([float(v) for v in row] for row in table.losses))


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def artifact_to_dict(art: CalibrationArtifact) -> dict:
    return {
        "method": art.method,
        "alpha": art.alpha,
        "delta": art.delta,
        "n": art.n,
        "threshold": _encode_float(art.threshold),
        "metadata": dict(sorted(art.metadata.items())),
    }


def artifact_from_dict(d: dict) -> CalibrationArtifact:
    try:
        return CalibrationArtifact(
            method=d["method"],
            alpha=float(d["alpha"]),
            delta=None if d.get("delta") is None else float(d["delta"]),
            n=int(d["n"]),
            threshold=_decode_float(d["threshold"]),
            metadata={str(k): str(v) for k, v in d.get("metadata", {}).items()},
        )
    except KeyError as e:
        raise FormatError(f"artifact is missing field {e.args[0]!r}") from None


def write_artifact(path: PathLike, art: CalibrationArtifact) -> None:
    Path(path).write_text(json.dumps(artifact_to_dict(art), indent=2) + "\n", encoding="utf-8")


def read_artifact(path: PathLike) -> CalibrationArtifact:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"{p}: invalid JSON ({e})") from None
    return artifact_from_dict(d)


# ---------------------------------------------------------------------------
# Masks and prediction sets
# ---------------------------------------------------------------------------


def mask_to_rle(mask: Mask) -> dict:
    """Row-major runs of ones as ``[start, length]`` pairs."""
    flat = np.concatenate([[False], mask.pixels.ravel(), [False]]).astype(np.int8)
    edges = np.flatnonzero(np.diff(flat))
    starts, ends = edges[::2], edges[1::2]
    return {"shape": list(mask.shape), "runs": [[int(s), int(e - s)] for s, e in zip(starts, ends)]}


def mask_from_rle(d: dict) -> Mask:
    try:
        d1, d2 = (int(v) for v in d["shape"])
        runs = d["runs"]
    except (KeyError, TypeError, ValueError):
        raise FormatError("mask needs 'shape' [d1, d2] and 'runs'") from None
    flat = np.zeros(d1 * d2, dtype=bool)
    for start, length in runs:
        if start < 0 or length < 0 or start + length > flat.size:
            raise FormatError("mask run outside the image")
        flat[start : start + length] = True
    return Mask(flat.reshape(d1, d2))


def grid_union(indices: Sequence[int], grid: np.ndarray) -> list[list[float]]:
    """Merge runs of consecutive grid indices into ``[y_first, y_last]`` pieces."""
    out: list[list[float]] = []
    idx = sorted(indices)
    start = prev = None
    for i in idx:
        if start is None:
            start = prev = i
        elif i == prev + 1:
            prev = i
        else:
            out.append([float(grid[start]), float(grid[prev])])
            start = prev = i
    if start is not None:
        out.append([float(grid[start]), float(grid[prev])])
    return out


def set_to_json(pred, grid: Optional[np.ndarray] = None) -> dict:
    if isinstance(pred, Labels):
        d = {"labels": list(pred.indices)}
        if grid is not None:
            d["union"] = grid_union(pred.indices, grid)
        return d
    if isinstance(pred, Interval):
        return {"interval": [_encode_float(pred.lo), _encode_float(pred.hi)]}
    if isinstance(pred, Mask):
        return {"mask": mask_to_rle(pred)}
    raise TypeError(f"unsupported prediction set {type(pred).__name__}")


def set_from_json(d: dict):
    if "labels" in d:
        return Labels(tuple(int(i) for i in d["labels"]))
    if "interval" in d:
        lo, hi = d["interval"]
        return Interval(_decode_float(lo), _decode_float(hi))
    if "mask" in d:
        return mask_from_rle(d["mask"])
    raise FormatError(f"unrecognized prediction set record: {sorted(d)}")


def write_sets(path: PathLike, sets: Iterable, grid: Optional[np.ndarray] = None) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in sets:
            fh.write(json.dumps(set_to_json(s, grid)) + "\n")


def read_sets(path: PathLike) -> list:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    out = []
    with p.open(encoding="utf-8") as fh:
        for i, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(set_from_json(json.loads(line)))
            except json.JSONDecodeError as e:
                raise FormatError(f"{p}:{i}: invalid JSON ({e})") from None
    return out


def write_masks(path: PathLike, masks: Iterable) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for m in masks:
            fh.write(json.dumps(mask_to_rle(m if isinstance(m, Mask) else Mask(m))) + "\n")


def read_masks(path: PathLike) -> list[Mask]:
    with Path(path).open(encoding="utf-8") as fh:
        return [mask_from_rle(json.loads(line)) for line in fh if line.strip()]


def write_pixel_scores(path: PathLike, scores: np.ndarray) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in np.asarray(scores, dtype=float):
            rec = {"shape": list(s.shape), "values": [float(format_number(v)) for v in s.ravel()]}
            fh.write(json.dumps(rec) + "\n")


def read_pixel_scores(path: PathLike) -> np.ndarray:
    rows = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                rows.append(np.asarray(rec["values"], dtype=float).reshape(rec["shape"]))
    return np.stack(rows)


def write_json(path: PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
