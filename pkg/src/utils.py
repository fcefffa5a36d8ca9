"""
Utility functions for the mixing simulator.

This module provides the plain-text formats for transition matrices and distributions,
the argparse value validators used by the command line, and the parser for flat
``key = value`` experiment configuration files.
"""

import argparse
import configparser
import dataclasses
import logging
import os
from typing import Optional

import numpy as np

from src.exceptions import ConfigParseError, DimensionMismatch, DomainError, SchemaError
from src.markov import Distribution, StochasticMatrix, validate_stochastic
from src.models import ExperimentConfig

logger = logging.getLogger(__name__)

_SECTION = "experiment"


def _read_counted(path: str) -> tuple[int, np.ndarray]:
    with open(path, encoding="utf-8") as handle:
        header = handle.readline().split("#")[0].strip()
        try:
            n = int(header)
        except ValueError as error:
            raise SchemaError(f"{path}: first line must be the state count, got {header!r}") from error
        values = np.loadtxt(handle, comments="#", ndmin=2)
    return n, values


def load_matrix(path: str) -> StochasticMatrix:
    """Read ``N`` on the first line, then ``N`` rows of ``N`` column-stochastic entries."""
    n, entries = _read_counted(path)
    if entries.shape != (n, n):
        raise DimensionMismatch(f"{path}: declared n={n}, read shape {entries.shape}")
    return validate_stochastic(entries)


def save_matrix(P: StochasticMatrix, path: str):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{P.n}\n")
        np.savetxt(handle, P.entries, fmt="%.17g")


def load_distribution(path: str) -> Distribution:
    """Read ``N`` on the first line and the ``N`` probabilities on the second."""
    n, probs = _read_counted(path)
    if probs.shape != (1, n):
        raise DimensionMismatch(f"{path}: declared n={n}, read shape {probs.shape}")
    return Distribution(probs[0])


def save_distribution(pi: Distribution, path: str):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"{pi.n}\n")
        np.savetxt(handle, pi.probs[np.newaxis, :], fmt="%.17g")


def float_between_0_and_1(value):
    value = float(value)
    if 0.0 < value <= 1.0:
        return value
    else:
        raise argparse.ArgumentTypeError(f"{value} is not in (0, 1]")


def positive_int(value):
    value = int(value)
    if value >= 1:
        return value
    else:
        raise argparse.ArgumentTypeError(f"{value} is not a positive integer")


def unsigned_64(value):
    value = int(value, 0) if isinstance(value, str) else int(value)
    if 0 <= value < 2**64:
        return value
    else:
        raise argparse.ArgumentTypeError(f"{value} is not an unsigned 64-bit integer")


def _boolean(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> list[int]:
    return [int(item) for item in text.split(",") if item.strip()]


def _float_list(text: str) -> list[float]:
    return [float(item) for item in text.split(",") if item.strip()]


def _optional_path(text: str) -> Optional[str]:
    return text or None


_CONVERTERS = {
    "mode": str,
    "seed": lambda text: unsigned_64(text.strip()),
    "family": str,
    "n": int,
    "length": int,
    "c": int,
    "eta": float_between_0_and_1,
    "kappa": float,
    "trials": positive_int,
    "out": str,
    "temperature_initial": float,
    "temperature_final": float,
    "energy_scale": float,
    "perturbation": float,
    "sizes": _int_list,
    "deltas": _float_list,
    "workers": positive_int,
    "tv_threshold": float_between_0_and_1,
    "ideal_reflections": _boolean,
    "sequence_file": _optional_path,
}


def parse_experiment_config(text: str) -> ExperimentConfig:
    """Parse the flat config format into an ``ExperimentConfig``.

    Keys must be ``ExperimentConfig`` field names; ``seed`` and ``mode`` are mandatory.
    A ``sequence_file`` is relative to the working directory and must exist.
    """
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#",), interpolation=None, delimiters=("=",)
    )
    try:
        parser.read_string(f"[{_SECTION}]\n{text}")
    except configparser.Error as error:
        raise ConfigParseError(f"malformed config: {error}") from error

    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values = {}
    for key, raw in parser.items(_SECTION):
        if key not in known:
            raise ConfigParseError(f"unknown config key {key!r}")
        try:
            values[key] = _CONVERTERS[key](raw.strip())
        except (ValueError, argparse.ArgumentTypeError) as error:
            raise ConfigParseError(f"cannot parse {key} = {raw!r}: {error}") from error

    for required in ("seed", "mode"):
        if required not in values:
            raise ConfigParseError(f"config is missing the mandatory key {required!r}")
    if values.get("sequence_file"):
        if not os.path.exists(values["sequence_file"]):
            raise FileNotFoundError(f"sequence file {values['sequence_file']} does not exist")

    try:
        return ExperimentConfig(**values)
    except DomainError as error:
        raise ConfigParseError(str(error)) from error


def read_experiment_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as handle:
        text = handle.read()
    logger.debug("read config %s", path)
    return parse_experiment_config(text)
