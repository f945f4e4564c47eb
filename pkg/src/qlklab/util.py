"""Shared helpers: named RNG sub-streams, log-log exponent fits, errors."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np


class QlklabError(Exception):
    """Base class for laboratory errors."""


class ConfigError(QlklabError):
    """Invalid configuration; message names the violated clause."""


class NumericalError(QlklabError):
    """Numerical failure (positivity violation, non-contraction, overflow...)."""


class PositivityError(NumericalError):
    """sigma*sigma lost positivity; carries the offending mode index."""

    def __init__(self, mode: int, radicand: float):
        self.mode = mode
        self.radicand = radicand
        super().__init__(
            f"diffusion positivity violated at mode {mode}: "
            f"gamma + delta*lambda*frak = {radicand:.6g} < 0"
        )


def substream(master_seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Named, reproducible RNG sub-stream derived from one master seed.

    The stream key mixes a CRC of the name so that ("solver", "mc", "ldp", ...)
    streams are independent and stable across runs and platforms.
    """
    key = zlib.crc32(name.encode("utf-8"))
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(key, index))
    return np.random.Generator(np.random.Philox(seq))


def fit_loglog_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope and intercept of log(y) against log(x).

    Rejects non-positive data and grids with fewer than 2 points.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 points for a log-log fit")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit requires positive data")
    slope, intercept = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope), float(intercept)


def decay_exponent(t_grid: np.ndarray, values: np.ndarray) -> float:
    """Exponent p such that values ~ t^(-p) on the grid (p > 0 means blow-up)."""
    slope, _ = fit_loglog_slope(t_grid, values)
    return -slope


_MAX_WORKERS = 1


def set_max_workers(n: int) -> None:
    global _MAX_WORKERS
    _MAX_WORKERS = max(1, int(n))


def get_max_workers() -> int:
    return _MAX_WORKERS


def parallel_map(fn, items):
    """Order-preserving map over items, threaded when a worker pool is enabled.

    Reductions downstream stay deterministic because results come back in
    submission order regardless of scheduling.
    """
    items = list(items)
    if _MAX_WORKERS <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=_MAX_WORKERS) as pool:
        return list(pool.map(fn, items))
