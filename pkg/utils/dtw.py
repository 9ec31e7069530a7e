"""
Angle-based dynamic time warping between two observation windows.

A window of u values becomes u-1 trend vectors (dt in grid steps, dv scaled by
the property's value scale). The cell cost of the warping grid is the angle
between two trend vectors, so a constant vertical offset between windows costs
nothing. The similarity is cos(D / K) for the optimal cumulative angle D over a
path of K cells, and 0 once the mean angle exceeds pi/2.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    logger.warning("numba not installed - DTW kernels run without JIT")

HALF_PI = np.pi / 2.0


class DTWError(ValueError):
    """Window cannot be turned into trend vectors or sequences cannot be aligned."""


@dataclass(frozen=True)
class TrendVectorSequence:
    dt: np.ndarray
    dv: np.ndarray

    def __len__(self) -> int:
        return int(self.dt.shape[0])

    def vector(self, a: int) -> np.ndarray:
        return np.array([self.dt[a], self.dv[a]])


@dataclass(frozen=True)
class WarpResult:
    cumulative_distance: float
    path_length: int
    similarity: float


def _similarity(cumulative: float, path_length: int) -> float:
    mean_angle = cumulative / path_length
    if mean_angle > HALF_PI:
        return 0.0
    return float(np.cos(mean_angle))


# --- kernels (compiled with numba when available) ---

def _angle(dt_a, dv_a, dt_b, dv_b):
    norm = np.sqrt((dt_a * dt_a + dv_a * dv_a) * (dt_b * dt_b + dv_b * dv_b))
    cosine = (dt_a * dt_b + dv_a * dv_b) / norm
    if cosine > 1.0:
        cosine = 1.0
    elif cosine < -1.0:
        cosine = -1.0
    return np.arccos(cosine)


def _warp(dt_a, dv_a, dt_b, dv_b, acc):
    """Fill ``acc`` with cumulative angles and backtrack one optimal path.

    Returns (D, K). Backtracking prefers the diagonal, then the cell above
    (a-1, b), then the cell to the left (a, b-1).
    """
    n = dt_a.shape[0]
    m = dt_b.shape[0]
    for a in range(n):
        for b in range(m):
            if a == 0 and b == 0:
                best = 0.0
            elif a == 0:
                best = acc[0, b - 1]
            elif b == 0:
                best = acc[a - 1, 0]
            else:
                best = acc[a - 1, b - 1]
                if acc[a - 1, b] < best:
                    best = acc[a - 1, b]
                if acc[a, b - 1] < best:
                    best = acc[a, b - 1]
            acc[a, b] = best + _angle(dt_a[a], dv_a[a], dt_b[b], dv_b[b])

    a = n - 1
    b = m - 1
    k = 1
    while a > 0 or b > 0:
        if a == 0:
            b -= 1
        elif b == 0:
            a -= 1
        else:
            diag = acc[a - 1, b - 1]
            up = acc[a - 1, b]
            left = acc[a, b - 1]
            if diag <= up and diag <= left:
                a -= 1
                b -= 1
            elif up <= left:
                a -= 1
            else:
                b -= 1
        k += 1
    return acc[n - 1, m - 1], k


def _batch_similarity(values_a, values_b, scale, out):
    """Similarity of row-aligned window pairs on a unit grid; NaN rows give NaN."""
    windows, width = values_a.shape
    n = width - 1
    dt = np.ones(n)
    dv_a = np.empty(n)
    dv_b = np.empty(n)
    acc = np.empty((n, n))
    for w in range(windows):
        complete = True
        for s in range(width):
            if np.isnan(values_a[w, s]) or np.isnan(values_b[w, s]):
                complete = False
                break
        if not complete:
            out[w] = np.nan
            continue
        for s in range(n):
            dv_a[s] = (values_a[w, s + 1] - values_a[w, s]) / scale
            dv_b[s] = (values_b[w, s + 1] - values_b[w, s]) / scale
        cumulative, k = _warp(dt, dv_a, dt, dv_b, acc)
        mean_angle = cumulative / k
        if mean_angle > HALF_PI:
            out[w] = 0.0
        else:
            out[w] = np.cos(mean_angle)


if HAS_NUMBA:
    _angle = njit(cache=True, nogil=True)(_angle)
    _warp = njit(cache=True, nogil=True)(_warp)
    _batch_similarity = njit(cache=True, nogil=True)(_batch_similarity)


# --- public API ---

def to_trend_vectors(window: Sequence[float], value_scale: float = 1.0,
                     offsets: Optional[Sequence[int]] = None) -> TrendVectorSequence:
    """Trend vectors of a complete window.

    ``offsets`` are the slot indices of the values (default 0..u-1); dt is their
    difference in grid steps.
    """
    values = np.asarray(window, dtype=np.float64)
    if value_scale <= 0:
        raise DTWError(f"value_scale must be > 0, got {value_scale}")
    if values.ndim != 1 or values.shape[0] < 2:
        raise DTWError("a window needs at least 2 observations")
    if np.isnan(values).any():
        raise DTWError("window contains a missing slot")
    steps = np.arange(values.shape[0], dtype=np.float64) if offsets is None else np.asarray(offsets, dtype=np.float64)
    if steps.shape != values.shape:
        raise DTWError("offsets and values differ in length")
    dt = np.diff(steps)
    if (dt <= 0).any():
        raise DTWError("timestamps must strictly increase")
    return TrendVectorSequence(dt=dt, dv=np.diff(values) / value_scale)


def vector_angle(a: Sequence[float], b: Sequence[float]) -> float:
    """Angle in [0, pi] between two nonzero 2-d vectors."""
    return float(_angle(float(a[0]), float(a[1]), float(b[0]), float(b[1])))


def dtw_align(va: TrendVectorSequence, vb: TrendVectorSequence) -> WarpResult:
    if len(va) == 0 or len(vb) == 0:
        raise DTWError("cannot align an empty sequence")
    if len(va) != len(vb):
        raise DTWError(f"windows differ in length ({len(va)} vs {len(vb)})")
    acc = np.empty((len(va), len(vb)))
    cumulative, k = _warp(va.dt, va.dv, vb.dt, vb.dv, acc)
    return WarpResult(float(cumulative), int(k), _similarity(float(cumulative), int(k)))


def trend_similarity(window_a: Sequence[float], window_b: Sequence[float], value_scale: float = 1.0) -> float:
    """Trend similarity in [0, 1] of two complete windows on the same slots."""
    va = to_trend_vectors(window_a, value_scale)
    vb = to_trend_vectors(window_b, value_scale)
    return dtw_align(va, vb).similarity


def batch_similarity(windows_a: np.ndarray, windows_b: np.ndarray, value_scale: float = 1.0) -> np.ndarray:
    """Row-wise trend similarity of two (W, u) window stacks.

    Rows with a missing value in either stack come back NaN.
    """
    a = np.ascontiguousarray(windows_a, dtype=np.float64)
    b = np.ascontiguousarray(windows_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DTWError(f"window stacks must share a 2-d shape, got {a.shape} and {b.shape}")
    if a.shape[1] < 2:
        raise DTWError("a window needs at least 2 observations")
    if value_scale <= 0:
        raise DTWError(f"value_scale must be > 0, got {value_scale}")
    out = np.empty(a.shape[0])
    _batch_similarity(a, b, float(value_scale), out)
    return out
