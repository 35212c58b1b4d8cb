"""Z-score ingestion, flat config files and result serialization."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .design import DesignInputs
from .mixture import MixtureParams

log = logging.getLogger(__name__)

MAX_UNPARSEABLE_FRACTION = 0.01
ID_COLUMNS = ("compound_id", "compound", "id")


class DataError(ValueError):
    """Input data or configuration could not be used."""


@dataclass
class ZScoreDataset:
    compound_ids: list
    replicate_columns: dict
    dropped_rows: int = 0
    unparseable_rows: int = 0

    def __post_init__(self):
        lengths = {len(v) for v in self.replicate_columns.values()}
        if len(lengths) > 1 or (lengths and lengths.pop() != len(self.compound_ids)):
            raise ValueError("all columns must have the same length")

    def __len__(self):
        return len(self.compound_ids)

    def column(self, name=None) -> np.ndarray:
        if name is None:
            if len(self.replicate_columns) != 1:
                raise DataError("dataset has several columns; name one")
            return next(iter(self.replicate_columns.values()))
        return self.replicate_columns[name]

    def summary(self) -> dict:
        out = {"rows": len(self), "dropped_rows": self.dropped_rows,
               "unparseable_rows": self.unparseable_rows, "columns": {}}
        for name, v in self.replicate_columns.items():
            out["columns"][name] = {"mean": float(np.mean(v)) if len(v) else None,
                                    "sd": float(np.std(v, ddof=1)) if len(v) > 1 else None}
        return out


def _match_column(header, selector):
    if selector in header:
        return selector
    folded = {h.lower(): h for h in header}
    if selector.lower() in folded:
        return folded[selector.lower()]
    raise DataError(f"column {selector!r} not found; available columns: {', '.join(header)}")


def ingest_zscores(path, column=None) -> ZScoreDataset:
    """Read a delimited text file with a header row.

    ``column`` selects one replicate column (case-insensitive); without it
    every column other than the id column is read.  Rows with a blank cell
    are dropped and counted.  Cells that are present but not numbers are
    also dropped; more than 1% of them is an error.
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, sep=None, engine="python", dtype=str,
                            keep_default_na=False, skipinitialspace=True, comment="#")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    header = [str(c).strip() for c in frame.columns]
    frame.columns = header
    id_col = next((c for c in header if c.lower() in ID_COLUMNS), None)
    if column is not None:
        names = [_match_column(header, column)]
    else:
        names = [c for c in header if c != id_col]
    if not names:
        raise DataError(f"no value columns in {path}")
    cells = frame[names].apply(lambda s: s.str.strip())
    blank = (cells == "").any(axis=1)
    numeric = cells.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1) & ~blank
    nonfinite = ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1) & ~blank.to_numpy() & ~bad.to_numpy()
    bad = bad | nonfinite
    n = len(frame)
    if n and bad.sum() > MAX_UNPARSEABLE_FRACTION * n:
        raise DataError(f"{int(bad.sum())} of {n} rows in {path} are not numeric (limit 1%)")
    keep = ~(blank | bad)
    ids = frame.loc[keep, id_col].tolist() if id_col else [str(i) for i in np.flatnonzero(keep.to_numpy())]
    data = {c: numeric.loc[keep, c].to_numpy(dtype=float) for c in names}
    ds = ZScoreDataset(ids, data, dropped_rows=int(blank.sum()), unparseable_rows=int(bad.sum()))
    log.info("ingested %s: %s", path, ds.summary())
    return ds


def write_zscores(path, values, column="B", ids=None):
    values = np.asarray(values, dtype=float)
    ids = ids if ids is not None else [f"c{i}" for i in range(values.size)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["compound_id", column])
        for cid, v in zip(ids, values):
            w.writerow([cid, repr(float(v))])


# -- config ----------------------------------------------------------------

_PARAM_KEYS = ("p", "sigma0_sq", "sigma_mu_sq", "mean_shift")
_INT_KEYS = {"m1", "mc_reps", "a1_stride", "r1_max_override"}
_STR_KEYS = {"stage2_p", "stage2_signal"}


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise DataError(f"config line {lineno}: empty key")
        out[key] = value
    return out


def read_config(path) -> dict:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def design_inputs_to_config(inputs: DesignInputs) -> str:
    lines = []
    for f in fields(DesignInputs):
        if f.name == "stage1_params":
            continue
        v = getattr(inputs, f.name)
        if v is None:
            continue
        lines.append(f"{f.name} = {_fmt(v)}")
    for k in _PARAM_KEYS:
        lines.append(f"{k} = {_fmt(getattr(inputs.stage1_params, k))}")
    return "\n".join(lines) + "\n"


def _coerce(key, value):
    try:
        if key in _STR_KEYS:
            return value
        if key in _INT_KEYS:
            return int(value)
        return float(value)
    except ValueError as exc:
        raise DataError(f"config value for {key!r} is not valid: {value!r}") from exc


def design_inputs_from_config(cfg: dict, params: MixtureParams = None, base: DesignInputs = None) -> DesignInputs:
    """Build :class:`DesignInputs` from parsed config (plus optional defaults)."""
    known = {f.name for f in fields(DesignInputs)} - {"stage1_params"}
    unknown = set(cfg) - known - set(_PARAM_KEYS)
    if unknown:
        raise DataError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    if base is not None:
        kwargs = {f.name: getattr(base, f.name) for f in fields(DesignInputs)}
    for k in known & set(cfg):
        kwargs[k] = _coerce(k, cfg[k])
    pvals = params.to_dict() if params is not None else (
        kwargs["stage1_params"].to_dict() if "stage1_params" in kwargs else {})
    for k in _PARAM_KEYS:
        if k in cfg:
            pvals[k] = _coerce(k, cfg[k])
    missing = [k for k in ("p", "sigma0_sq", "sigma_mu_sq") if k not in pvals]
    if missing:
        raise DataError(f"mixture parameters missing: {', '.join(missing)}")
    kwargs["stage1_params"] = MixtureParams(**{k: float(v) for k, v in pvals.items() if k in _PARAM_KEYS})
    missing = [k for k in ("m1", "budget", "cost1", "cost2") if k not in kwargs]
    if missing:
        raise DataError(f"design settings missing: {', '.join(missing)}")
    return DesignInputs(**kwargs)


def read_params_json(path) -> MixtureParams:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read parameters from {path}: {exc}") from exc
    obj = obj.get("params", obj)
    try:
        return MixtureParams(float(obj["p"]), float(obj["sigma0_sq"]),
                             float(obj["sigma_mu_sq"]), float(obj.get("mean_shift", 0.0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"invalid parameter file {path}: {exc}") from exc


# -- output ----------------------------------------------------------------

def metadata(command: str, seed=None, **extra) -> dict:
    meta = {"tool": "htsdesign", "version": __version__, "command": command}
    if seed is not None:
        meta["seed"] = seed
    meta.update(extra)
    return meta


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def format_csv(rows: list, columns: list, meta: dict) -> str:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k}: {json.dumps(_jsonable(v), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def read_csv_table(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def format_json(obj: dict, meta: dict) -> str:
    return json.dumps({"metadata": _jsonable(meta), **_jsonable(obj)}, indent=2, sort_keys=True) + "\n"


def write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
