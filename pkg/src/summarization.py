"""
Aggregation of protocol records into a summary document.

Records are read from newline-delimited JSON with pandas. Output samples are pooled over
trials per ``(n, delta, step)`` and compared with the stationary distributions stored in
the exported sequence manifests; walk-call medians per ``(n, delta)`` are regressed on a
log-log scale against the state count and the spectral gap.
"""

import glob
import json
import logging
import math
import os
from typing import Optional, Sequence

import numpy as np
import pandas as pd
import scipy.stats

from src.chains import read_manifest
from src.constants import (
    DEFAULT_TV_THRESHOLD,
    MANIFEST_FILE,
    METHODS,
    RECORD_KEYS,
    RECORDS_FILE,
    SEQUENCE_DIR,
)
from src.exceptions import SchemaError
from src.markov import Distribution, classical_mixing_bound

logger = logging.getLogger(__name__)

_DELTA_DIGITS = 12
_CONFIDENCE_Z = 1.96


def _records_file(path: str) -> str:
    if os.path.isdir(path):
        return os.path.join(path, RECORDS_FILE)
    return path


def load_records(paths: Sequence[str]) -> pd.DataFrame:
    """Concatenate the record files (or result directories) into one frame."""
    frames = []
    for path in paths:
        filename = _records_file(path)
        if os.path.getsize(filename) == 0:
            continue
        try:
            frames.append(pd.read_json(filename, lines=True, precise_float=True))
        except ValueError as error:
            raise SchemaError(f"{filename} is not newline-delimited JSON: {error}") from error
    if not frames:
        raise SchemaError("no records to summarize")
    df = pd.concat(frames, ignore_index=True)
    missing = [key for key in RECORD_KEYS if key not in df.columns]
    if missing:
        raise SchemaError(f"records lack the keys {missing}")
    unknown = set(df["method"]) - set(METHODS)
    if unknown:
        raise SchemaError(f"unknown preparation methods {sorted(unknown)}")
    df["delta_key"] = df["delta"].round(_DELTA_DIGITS)
    return df


def load_stationary_table(paths: Sequence[str]) -> pd.DataFrame:
    """Stationary distributions from every manifest under the results' sequence directories."""
    rows = []
    for path in paths:
        directory = path if os.path.isdir(path) else os.path.dirname(path)
        pattern = os.path.join(directory, SEQUENCE_DIR, "**", MANIFEST_FILE)
        for manifest_path in sorted(glob.glob(pattern, recursive=True)):
            manifest = read_manifest(manifest_path)
            for step in manifest["steps"]:
                rows.append(
                    {
                        "n": len(step["stationary"]),
                        "step": int(step["step"]),
                        "delta_key": float(np.round(float(step["delta"]), _DELTA_DIGITS)),
                        "stationary": step["stationary"],
                    }
                )
    if not rows:
        return pd.DataFrame(columns=["n", "step", "delta_key", "stationary"])
    return pd.DataFrame(rows).drop_duplicates(subset=["n", "step", "delta_key"])


def _empirical_tv(samples: pd.Series, stationary: Sequence[float]) -> float:
    counts = np.bincount(samples.to_numpy(dtype=int), minlength=len(stationary))
    return 0.5 * float(np.abs(counts / counts.sum() - np.asarray(stationary)).sum())


def tv_by_step(df: pd.DataFrame, stationary: pd.DataFrame) -> pd.DataFrame:
    """Pooled total-variation distance of the output samples, per ``(n, delta, step)``."""
    if stationary.empty:
        return pd.DataFrame(columns=["n", "delta", "step", "samples", "tv"])
    # Steps whose forced preparation failed carry no sample.
    sampled = df[df["sample"].notna()]
    merged = sampled.merge(stationary, on=["n", "step", "delta_key"], how="inner")
    rows = []
    for (n, delta_key, step), group in merged.groupby(["n", "delta_key", "step"]):
        rows.append(
            {
                "n": int(n),
                "delta": float(group["delta"].iloc[0]),
                "step": int(step),
                "samples": int(len(group)),
                "tv": _empirical_tv(group["sample"], group["stationary"].iloc[0]),
            }
        )
    return pd.DataFrame(rows, columns=["n", "delta", "step", "samples", "tv"])


def cost_table(df: pd.DataFrame, stationary: pd.DataFrame) -> pd.DataFrame:
    """Median costs per ``(n, delta)``, with the classical mixing estimate when known."""
    table = (
        df.groupby(["n", "delta_key"])
        .agg(
            delta=("delta", "first"),
            median_walk_calls=("walk_calls", "median"),
            median_diffusion_calls=("diffusion_calls", "median"),
            records=("walk_calls", "count"),
        )
        .reset_index()
    )
    bounds = []
    for row in table.itertuples():
        match = stationary[(stationary["n"] == row.n) & (stationary["delta_key"] == row.delta_key)]
        if match.empty:
            bounds.append(float("nan"))
            continue
        bounds.append(
            float(np.median([classical_mixing_bound(row.delta, Distribution(s)) for s in match["stationary"]]))
        )
    table["classical_mixing_bound"] = bounds
    return table.drop(columns=["delta_key"])


def _slope(x: np.ndarray, y: np.ndarray) -> Optional[dict]:
    keep = (x > 0) & (y > 0)
    x, y = np.log(x[keep]), np.log(y[keep])
    if np.unique(x).size < 2:
        return None
    fit = scipy.stats.linregress(x, y)
    return {
        "slope": float(fit.slope),
        "stderr": float(fit.stderr),
        "ci_low": float(fit.slope - _CONFIDENCE_Z * fit.stderr),
        "ci_high": float(fit.slope + _CONFIDENCE_Z * fit.stderr),
        "points": int(keep.sum()),
    }


def cost_slopes(costs: pd.DataFrame) -> dict:
    """Log-log slopes of the median walk calls against ``n`` (per delta) and ``delta`` (per n)."""
    vs_n, vs_delta = [], []
    for delta, group in costs.groupby("delta"):
        fit = _slope(group["n"].to_numpy(dtype=float), group["median_walk_calls"].to_numpy(dtype=float))
        if fit:
            vs_n.append({"delta": float(delta), **fit})
    for n, group in costs.groupby("n"):
        fit = _slope(group["delta"].to_numpy(dtype=float), group["median_walk_calls"].to_numpy(dtype=float))
        if fit:
            vs_delta.append({"n": int(n), **fit})
    return {"vs_n": vs_n, "vs_delta": vs_delta}


def _plain(value):
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return None if math.isnan(value) else float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def summarize(paths: Sequence[str], tv_threshold: float = DEFAULT_TV_THRESHOLD) -> dict:
    """Aggregate protocol records into one summary document."""
    df = load_records(paths)
    stationary = load_stationary_table(paths)
    tv = tv_by_step(df, stationary)
    costs = cost_table(df, stationary)

    method_counts = {method: int((df["method"] == method).sum()) for method in METHODS}
    summary = {
        "records": int(len(df)),
        "trials": int(df["trial"].nunique()),
        "steps": int(df["step"].nunique()),
        "failure_rate": float(df["failed"].astype(bool).mean()),
        "method_counts": method_counts,
        "tv_threshold": tv_threshold,
        "tv": tv.to_dict(orient="records"),
        "max_tv": float(tv["tv"].max()) if not tv.empty else None,
        "tv_within_threshold": bool((tv["tv"] <= tv_threshold).all()) if not tv.empty else None,
        "costs": costs.to_dict(orient="records"),
        "slopes": cost_slopes(costs),
    }
    logger.info("summarized %d records from %d files", len(df), len(paths))
    return _plain(summary)


def write_summary(summary: dict, filename: str):
    with open(filename, "w", encoding="utf-8") as f:
        json.dump(_plain(summary), f, indent=2, sort_keys=True)
        f.write("\n")
